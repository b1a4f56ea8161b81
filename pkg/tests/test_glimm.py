import numpy as np
import pytest

from glimmlab.errors import BlowUpError, ConfigError
from glimmlab.flux_model import get_model
from glimmlab.glimm import (GlimmConfig, cubic_functional, fit_known_constants, known_decay_report,
                            load_trace, run, sampling_sequence, save_trace, split_fan,
                            vdc_sequence)
from glimmlab.riemann import sample_fan, solve_riemann


def riemann_cfg(model, uL, uR, **kw):
    kw.setdefault("eps", 1 / 32)
    kw.setdefault("horizon", 0.5)
    return GlimmConfig(model=model, datum={"kind": "riemann", "uL": uL, "uR": uR}, **kw)


def test_vdc_values():
    assert [vdc_sequence(i) for i in (1, 2, 3, 4, 5)] == [0.5, 0.25, 0.75, 0.125, 0.625]
    seq = sampling_sequence("vdc", 8)
    assert np.isnan(seq[0]) and seq[3] == 0.75


def test_random_sequence():
    a = sampling_sequence("random:7", 20)
    b = sampling_sequence("random:7", 20)
    c = sampling_sequence("random:8", 20)
    assert np.array_equal(a[1:], b[1:]) and not np.array_equal(a[1:], c[1:])
    assert np.all((a[1:] >= 0) & (a[1:] < 1))
    with pytest.raises(ConfigError):
        sampling_sequence("sobol", 3)
    with pytest.raises(ConfigError):
        sampling_sequence("random:x", 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        GlimmConfig.from_dict({"eps": 0.1, "colour": "red"})
    with pytest.raises(ConfigError):
        GlimmConfig(eps=-1.0).validate()
    cfg = GlimmConfig.from_dict(riemann_cfg("burgers", [1.0], [0.0]).to_dict())
    assert cfg.eps == 1 / 32


def test_constant_datum():
    tr = run(riemann_cfg("psystem", [1.0, 0.0], [1.0, 0.0]))
    assert all(not layer.fans for layer in tr.layers)
    assert all(np.array_equal(layer.states, tr.layers[0].states) for layer in tr.layers)
    assert max(tr.V) == 0 and max(tr.Q_trans) == 0 and max(tr.Q_cubic) == 0


def test_linear_contact_transport():
    tr = run(riemann_cfg("linear", [0.0, 0.0], [1.0, 0.0], horizon=1.0))
    m0 = next(iter(tr.layers[0].fans))
    thetas = sampling_sequence("vdc", len(tr.layers) - 1)
    for i, layer in enumerate(tr.layers):
        expected = m0 + int(np.sum(thetas[1:i + 1] < 0.2))
        assert list(layer.fans) == [expected]
        assert layer.fans[expected].strengths[0] == pytest.approx(1.0)
    # the discrepancy of the sequence keeps the front close to x = 0.2 t
    x = tr.x0 + expected * tr.eps
    assert abs(x - 0.2 * 1.0) <= 4 * tr.eps


def test_split_fan_pieces():
    m = get_model("psystem").normalized()
    fan = solve_riemann(m, np.array([1.0, 0.0]), np.array([1.04, 0.02]))
    for theta in (0.1, 0.5, 0.9):
        sp = split_fan(m, fan, theta)
        parts = [p for p in (sp.slow, sp.fast) if p is not None]
        total = sum(p.strengths for p in parts)
        assert np.allclose(total, fan.strengths, atol=1e-14)
        if sp.slow is not None:
            assert np.array_equal(sp.slow.uR, sp.state)
            assert max(sp.slow.speed_range()) <= theta
        if sp.fast is not None:
            assert np.array_equal(sp.fast.uL, sp.state)
            assert min(sp.fast.speed_range()) > theta


def test_burgers_shock_drift():
    tr = run(riemann_cfg("burgers", [1.0], [0.0], eps=1 / 128, horizon=1.0))
    speed = 0.5 * tr.model.speed_scale + tr.model.speed_shift
    assert tr.model.to_original_speed(speed) == pytest.approx(0.5)
    (m,) = tr.layers[-1].fans
    x = tr.x0 + m * tr.eps
    assert abs(x - speed * 1.0) <= 4 * tr.eps


def _l1_error(tr):
    model = tr.model
    cfg = tr.config
    fan = solve_riemann(model, np.asarray(cfg.datum["uL"], float), np.asarray(cfg.datum["uR"], float))
    t = cfg.horizon
    U = tr.layers[-1].states[:, 0]
    xc = tr.x0 + tr.eps * (np.arange(len(U)) + 0.5)
    exact = np.array([sample_fan(fan, x / t)[0] for x in xc])
    return float(np.sum(np.abs(U - exact)) * tr.eps)


def test_l1_convergence():
    errs = [_l1_error(run(riemann_cfg("burgers", [-0.6], [0.8], eps=e, horizon=0.5)))
            for e in (1 / 16, 1 / 32, 1 / 64, 1 / 128)]
    assert errs[-1] < 0.5 * errs[0]
    assert errs[-1] < 0.02


def test_transversal_functional():
    tr = run(riemann_cfg("burgers", [0.2], [0.7], horizon=0.1))
    assert max(tr.Q_trans) == 0
    # fast family (second component) left of a slow family jump
    datum = {"kind": "pieces", "breaks": [0.0, 0.25], "states": [[0, 0], [0, 0.3], [0.2, 0.3]]}
    tr = run(GlimmConfig(model="linear", eps=1 / 32, horizon=0.1, datum=datum))
    assert tr.Q_trans[0] == pytest.approx(0.3 * 0.2)
    tr = run(GlimmConfig(model="linear", eps=1 / 32, horizon=0.1,
                         datum={"kind": "pieces", "breaks": [0.0, 0.25],
                                "states": [[0, 0], [0.2, 0], [0.2, 0.3]]}))
    assert tr.Q_trans[0] == 0


def test_cubic_functional_closed_form():
    rng = np.random.default_rng(0)
    l, s = rng.random(9), rng.random(9)
    brute = sum(l[a] * l[b] * abs(s[a] - s[b]) for a in range(9) for b in range(9))
    assert cubic_functional(l, s) == pytest.approx(brute)
    # two identical two-segment rarefactions: 2 * 2 * (1/2)^2 * 0.1 * 4 pairs of unequal speed
    l2 = np.array([0.5, 0.5, 0.5, 0.5])
    s2 = np.array([0.3, 0.4, 0.3, 0.4])
    assert cubic_functional(l2, s2) == pytest.approx(8 * 0.25 * 0.1)
    tr = run(riemann_cfg("linear", [0.0, 0.0], [0.1, 0.2], horizon=0.1))
    assert max(tr.Q_cubic) == pytest.approx(0, abs=1e-15)


def test_determinism_and_sequences():
    cfg = riemann_cfg("temple", [0.0, 0.0], [0.05, -0.03], sequence="random:3")
    a, b = run(cfg), run(cfg)
    assert all(np.array_equal(x.states, y.states) for x, y in zip(a.layers, b.layers))
    c = run(riemann_cfg("temple", [0.0, 0.0], [0.05, -0.03], sequence="random:4"))
    assert not all(np.array_equal(x.states, y.states) for x, y in zip(a.layers, c.layers))


def test_total_variation_equivalence():
    datum = {"kind": "pieces", "breaks": [0.0, 0.1, 0.3],
             "states": [[1.0, 0.0], [1.03, 0.01], [0.98, -0.02], [1.0, 0.0]]}
    tr = run(GlimmConfig(model="psystem", eps=1 / 32, horizon=0.5, datum=datum))
    for i in range(len(tr.layers)):
        tv = tr.total_variation(i)
        assert 0.5 * tv <= tr.V[i] <= 2.0 * tv


def test_blowup_guard():
    with pytest.raises(BlowUpError):
        run(riemann_cfg("burgers", [1.0], [0.0], blowup_factor=0.5))


def test_trace_round_trip(tmp_path):
    datum = {"kind": "pieces", "breaks": [0.0, 0.2], "states": [[0.02, 0.0], [-0.01, 0.03], [0.0, 0.0]]}
    tr = run(GlimmConfig(model="temple", eps=1 / 32, horizon=0.4, datum=datum))
    path = tmp_path / "trace.json"
    save_trace(tr, path)
    back = load_trace(path)
    assert back.config.to_dict() == tr.config.to_dict()
    assert np.allclose(back.V, tr.V) and np.allclose(back.Q_cubic, tr.Q_cubic)
    for x, y in zip(tr.layers, back.layers):
        assert np.array_equal(x.states, y.states)
        assert sorted(x.fans) == sorted(y.fans)
        for m in x.ledgers:
            a, b = x.ledgers[m].to_dict(), y.ledgers[m].to_dict()
            assert all(np.allclose(a[key], b[key]) for key in a)


def test_known_constants_fit_and_report():
    datum = {"kind": "pieces", "breaks": [0.0, 0.1, 0.2],
             "states": [[0.7], [0.2], [-0.3], [0.4]]}
    tr = run(GlimmConfig(model="cubic", eps=1 / 32, horizon=1.0, datum=datum))
    consts = fit_known_constants([tr], margin=1.0)
    tr.known_constants = consts
    assert known_decay_report(tr)["violations"] == 0
