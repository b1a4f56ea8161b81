import json

import numpy as np
import pytest

from glimmlab.cli import OUT_ENV, loglog_slope, main, svg_plot


def read(path):
    return json.loads(path.read_text())


def write_config(tmp_path, **cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_run_constant_datum(tmp_path):
    cfg = write_config(tmp_path, model="psystem", eps=1 / 16, horizon=0.25,
                       datum={"kind": "riemann", "uL": [1.0, 0.0], "uR": [1.0, 0.0]})
    assert main(["run", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    rep = read(tmp_path / "report.json")
    for key in ("V", "Q_trans", "Q_cubic", "Q_known"):
        assert max(rep["series"][key]) == 0
    assert rep["config"]["model"] == "psystem"
    assert (tmp_path / "series.csv").read_text().startswith("layer,time,V")
    assert (tmp_path / "functionals.svg").read_text().startswith("<svg")


def test_merge_fixture(tmp_path):
    assert main(["merge", "--out", str(tmp_path), "--quiet"]) == 0
    rep = read(tmp_path / "merge.json")
    assert rep["ledger"]["A_quadr"][0] == pytest.approx(0.130666, abs=1e-3)
    assert rep["config"]["states"] == [[-1.0], [-0.2], [0.6]]


def test_riemann_report(tmp_path):
    code = main(["riemann", "--model", "burgers", "--states=-0.5;1", "--out", str(tmp_path),
                 "--quiet"])
    assert code == 0
    fan = read(tmp_path / "riemann.json")["fan"]
    (w,) = fan["waves"]
    # rarefaction speeds are secants of the sampled flux, accurate to one node
    assert w["speed_min"] == pytest.approx(-0.5, abs=1 / 256)
    assert w["speed_max"] == pytest.approx(1.0, abs=1 / 256)


def test_sweep_slope(tmp_path):
    assert main(["sweep", "--out", str(tmp_path), "--quiet"]) == 0
    rep = read(tmp_path / "sweep.json")
    assert 1.7 <= rep["slope"] <= 2.3
    assert rep["config"]["thetas"] == [1.0, 0.5, 0.25, 0.125]
    assert len(rep["members"]) == 4
    assert (tmp_path / "scaling.svg").exists()


def test_sweep_eps_grid_parallel(tmp_path):
    cfg = write_config(tmp_path, model="burgers", horizon=0.25,
                       datum={"kind": "riemann", "uL": [1.0], "uR": [0.0]})
    args = ["sweep", "--config", cfg, "--eps", "0.125,0.0625", "--out", str(tmp_path), "--quiet"]
    assert main(args + ["--jobs", "2"]) == 0
    par = read(tmp_path / "sweep.json")
    assert main(args) == 0
    assert read(tmp_path / "sweep.json") == par
    assert [m["eps"] for m in par["members"]] == [0.125, 0.0625]
    assert par["slopes"] == {}


def test_verify_round_trip(tmp_path):
    cfg = write_config(tmp_path, model="burgers", eps=1 / 32, horizon=1.0,
                       datum={"kind": "pieces", "breaks": [0.0, 0.1], "states": [[1.0], [0.5], [0.0]]})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--quiet"]) == 0
    assert main(["verify", "--config", cfg, "--out", str(a), "--quiet"]) == 0
    assert main(["verify", "--trace", str(a / "trace.json"), "--out", str(b), "--quiet"]) == 0
    ra, rb = read(a / "verify.json"), read(b / "verify.json")
    assert ra == rb
    assert ra["passed"] and ra["config"]["datum"]["states"] == [[1.0], [0.5], [0.0]]


def test_waves_outputs(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    cfg = write_config(tmp_path, model="burgers", eps=1 / 16, horizon=0.5,
                       datum={"kind": "riemann", "uL": [1.0], "uR": [0.0]})
    assert main(["waves", "--config", cfg, "--quiet"]) == 0
    summary = read(tmp_path / "waves.json")["summary"]
    assert summary["packages"] == [1]
    assert all(v == 0 for v in summary["violations"].values())
    lines = (tmp_path / "waves.csv").read_text().splitlines()
    assert len(lines) == 1 + 9


def test_config_errors(tmp_path, capsys):
    assert main(["run", "--eps", "-1", "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["module"] == "cli" and err["eps"] == -1.0
    bad = write_config(tmp_path, eps=0.1, colour="red")
    assert main(["run", "--config", bad, "--out", str(tmp_path)]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert main(["run", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--theta", "1,0", "--out", str(tmp_path)]) == 2
    assert main(["merge", "--states", "1;2", "--out", str(tmp_path)]) == 2


def test_module_error_exit(tmp_path, capsys):
    code = main(["riemann", "--model", "psystem", "--states", "1,0;3,0.9", "--out", str(tmp_path)])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["module"] == "riemann" and err["error"] == "DomainExitError"
    assert len(err["state"]) == 2


def test_plot_and_slope_helpers(tmp_path):
    x = np.array([1.0, 2.0, 4.0])
    assert loglog_slope(x, 3 * x ** 2) == pytest.approx(2.0)
    assert np.isnan(loglog_slope([1.0], [1.0]))
    svg_plot(tmp_path / "p.svg", {"a": (x, x ** 2), "b": ([], [])}, logx=True, logy=True)
    text = (tmp_path / "p.svg").read_text()
    assert text.count("<polyline") == 1 and text.rstrip().endswith("</svg>")
