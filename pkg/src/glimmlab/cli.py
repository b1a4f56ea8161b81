"""Command line front end.

Every subcommand reads an optional JSON run configuration, applies the flag
overrides, drives one module and writes its outputs (JSON reports, CSV series,
SVG plots) to the output directory.  Each report embeds the configuration it
was produced from.

Exit codes: 0 on success, 1 on a library error (the structured error is
printed to stderr as JSON), 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, GlimmLabError
from .flux_model import get_model
from .glimm import GlimmConfig, known_decay_report, load_trace, run, save_trace
from .interaction import check_local_estimates, interaction_ledger, merge_case
from .lagrangian import build, genealogy_rows, rep_summary
from .riemann import profile, solve_riemann

OUT_ENV = "GLIMMLAB_OUT"
DEFAULT_OUT = "glimmlab_out"

# keys of a run configuration that belong to the command line layer and not to
# the scheme itself
CLI_KEYS = ("out", "eps_list", "thetas", "scale_horizon")

# scaled cubic family used by ``sweep`` when no configuration is given: jumps of
# both signs around 1/2, with the horizon stretched by 1/theta so that the
# waves of every member have time to interact
DEFAULT_SWEEP = {
    "model": "cubic",
    "eps": 1 / 64,
    "horizon": 2.5,
    "datum": {"kind": "pieces", "breaks": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
              "states": [[0.9], [0.7], [0.8], [0.4], [0.5], [0.1], [0.5]]},
    "thetas": [1.0, 0.5, 0.25, 0.125],
    "scale_horizon": True,
    "center": [0.5],
}

DEFAULT_MERGE = {"model": "cubic", "states": [[-1.0], [-0.2], [0.6]]}


# ---------------------------------------------------------------------------
# configuration

def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("expected a comma separated list of numbers", value=text)


def _states(text: str) -> list:
    """``"a,b;c,d"`` -> ``[[a, b], [c, d]]``."""
    return [_floats(part) for part in text.split(";")]


def _check_finite(value, name: str):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ConfigError("values must be finite", field=name)


def load_config(args) -> dict:
    """Raw configuration: the ``--config`` file with flag overrides applied."""
    cfg: dict = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as err:
            raise ConfigError("cannot read configuration", path=args.config, reason=str(err))
        except json.JSONDecodeError as err:
            raise ConfigError("configuration is not valid JSON", path=args.config, reason=str(err))
        if not isinstance(cfg, dict):
            raise ConfigError("configuration must be a JSON object")
    if getattr(args, "model", None):
        cfg["model"] = args.model
    if getattr(args, "eps", None):
        eps = _floats(args.eps)
        if len(eps) == 1:
            cfg["eps"] = eps[0]
        else:
            cfg["eps_list"] = eps
    if getattr(args, "theta", None):
        cfg["thetas"] = _floats(args.theta)
    if getattr(args, "horizon", None) is not None:
        cfg["horizon"] = args.horizon
    if getattr(args, "seq", None):
        cfg["sequence"] = args.seq
    return cfg


def split_config(raw: dict):
    """Separate the scheme configuration from the command line keys."""
    raw = dict(raw)
    extra = {key: raw.pop(key) for key in CLI_KEYS if key in raw}
    center = raw.pop("center", None)
    eps_list = extra.get("eps_list")
    if isinstance(raw.get("eps"), list):
        eps_list = raw.pop("eps")
    if eps_list is not None:
        if not eps_list:
            raise ConfigError("the eps list is empty")
        _check_finite(eps_list, "eps")
        raw.setdefault("eps", eps_list[0])
    thetas = extra.get("thetas")
    if thetas is not None:
        if not thetas:
            raise ConfigError("the theta list is empty")
        _check_finite(thetas, "thetas")
        if any(t <= 0 for t in thetas):
            raise ConfigError("theta must be positive", thetas=thetas)
    try:
        cfg = GlimmConfig.from_dict(raw)
    except TypeError as err:
        raise ConfigError("malformed configuration", reason=str(err))
    for name in ("eps", "horizon", "blowup_factor"):
        _check_finite(getattr(cfg, name), name)
    extra["eps_list"] = [float(e) for e in (eps_list or [cfg.eps])]
    extra["thetas"] = thetas
    extra["center"] = center
    return cfg, extra


def out_dir(args, extra: dict | None = None) -> Path:
    path = getattr(args, "out", None) or (extra or {}).get("out") \
        or os.environ.get(OUT_ENV) or DEFAULT_OUT
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# output helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data: dict):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, rows, fields=None):
    rows = list(rows)
    if fields is None:
        fields = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(r)


COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_plot(path: Path, curves: dict, title: str = "", xlabel: str = "", ylabel: str = "",
             logx: bool = False, logy: bool = False, markers: bool = False):
    """Minimal line plot: ``curves`` maps a label to ``(x, y)`` arrays."""
    W, H, pad = 640, 420, 60
    pts = {}
    for name, (x, y) in curves.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        x, y = x[ok], y[ok]
        pts[name] = (np.log10(x) if logx else x, np.log10(y) if logy else y)
    allx = np.concatenate([p[0] for p in pts.values()] + [np.zeros(0)])
    ally = np.concatenate([p[1] for p in pts.values()] + [np.zeros(0)])
    if allx.size == 0:
        allx, ally = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    sx = lambda v: pad + (v - x0) / (x1 - x0) * (W - 2 * pad)
    sy = lambda v: H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)
    lab = lambda v, log: f"{10 ** v:.3g}" if log else f"{v:.3g}"
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" '
           f'fill="none" stroke="black"/>',
           f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">{xlabel}</text>',
           f'<text x="15" y="{H / 2}" text-anchor="middle" '
           f'transform="rotate(-90 15 {H / 2})">{ylabel}</text>']
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{H - pad + 16}" text-anchor="middle">{lab(v, logx)}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{pad - 5}" y="{sy(v) + 4:.1f}" text-anchor="end">{lab(v, logy)}</text>')
    for j, (name, (x, y)) in enumerate(pts.items()):
        c = COLORS[j % len(COLORS)]
        if x.size:
            path_d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline points="{path_d}" fill="none" stroke="{c}" stroke-width="1.5"/>')
            if markers:
                out.extend(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="{c}"/>'
                           for a, b in zip(x, y))
        out.append(f'<text x="{W - pad - 5}" y="{pad + 16 * (j + 1)}" text-anchor="end" '
                   f'fill="{c}">{name}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x`` (nan if undefined)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if np.count_nonzero(ok) < 2 or np.ptp(np.log(x[ok])) == 0:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def series_rows(trace):
    Qk = trace.Q_known
    for i in range(len(trace.layers)):
        yield {"layer": i, "time": i * trace.eps, "V": trace.V[i], "Q_trans": trace.Q_trans[i],
               "Q_cubic": trace.Q_cubic[i], "Q_known": float(Qk[i]),
               "TV": trace.total_variation(i)}


def sum_delta_sigma(trace) -> float:
    """``sum over restarts and nodes of sum_k delta_sigma_k``."""
    return float(sum(np.sum(led.delta_sigma) for layer in trace.layers[1:]
                     for led in layer.ledgers.values()))


def _profile_plot(path: Path, trace, title: str):
    first, last = trace.layers[0].states, trace.layers[-1].states
    x = trace.x0 + trace.eps * np.arange(len(first))
    curves = {}
    for c in range(trace.n):
        curves[f"u{c + 1}(0)"] = (x, first[:, c])
        curves[f"u{c + 1}(T)"] = (x, last[:, c])
    svg_plot(path, curves, title, "x", "u")


# ---------------------------------------------------------------------------
# subcommands

def _model_states(args, raw: dict, default: dict, count: int):
    model = raw.get("model", default["model"])
    params = raw.get("model_params", {})
    if getattr(args, "states", None):
        states = _states(args.states)
    elif "states" in raw:
        states = raw["states"]
    elif raw.get("datum", {}).get("kind") == "riemann" and count == 2:
        states = [raw["datum"]["uL"], raw["datum"]["uR"]]
    else:
        states = default["states"]
    if len(states) != count:
        raise ConfigError(f"expected {count} states", states=states)
    _check_finite(states, "states")
    m = get_model(model, **params)
    if getattr(args, "normalize", False):
        m = m.normalized()
    try:
        states = [np.asarray(s, dtype=float).reshape(m.n) for s in states]
    except ValueError:
        raise ConfigError("state size does not match the model", model=model, n=m.n)
    return m, states, {"model": model, "model_params": params,
                       "normalized": bool(getattr(args, "normalize", False)),
                       "states": [s.tolist() for s in states]}


def cmd_riemann(args) -> int:
    raw = load_config(args)
    default = {"model": "burgers", "states": [[1.0], [0.0]]}
    m, (uL, uR), echo = _model_states(args, raw, default, 2)
    fan = solve_riemann(m, uL, uR)
    out = out_dir(args, raw)
    report = {"config": echo, "fan": fan.to_dict()}
    write_json(out / "riemann.json", report)
    lo, hi = fan.speed_range() or (-1.0, 1.0)
    pad = 0.25 * max(hi - lo, 0.5)
    xi = np.linspace(lo - pad, hi + pad, 401)
    U = profile(fan, xi)
    svg_plot(out / "riemann.svg", {f"u{c + 1}": (xi, U[:, c]) for c in range(m.n)},
             "Riemann fan", "x/t", "u")
    _echo(args, report)
    return 0


def cmd_merge(args) -> int:
    raw = load_config(args)
    m, (uL, uM, uR), echo = _model_states(args, raw, DEFAULT_MERGE, 3)
    case = merge_case(m, uL, uM, uR)
    led = interaction_ledger(case)
    report = {"config": echo, "ledger": led.to_dict(),
              "local_estimates": check_local_estimates(case, led)}
    write_json(out_dir(args, raw) / "merge.json", report)
    _echo(args, report)
    return 0


def _trace_from(args):
    """A trace either loaded from ``--trace`` or computed from the config."""
    if getattr(args, "trace", None):
        try:
            trace = load_trace(args.trace)
        except OSError as err:
            raise ConfigError("cannot read trace", path=args.trace, reason=str(err))
        return trace, {}
    cfg, extra = split_config(load_config(args))
    return run(cfg), extra


def cmd_run(args) -> int:
    trace, extra = _trace_from(args)
    out = out_dir(args, extra)
    save_trace(trace, out / "trace.json")
    rows = list(series_rows(trace))
    write_csv(out / "series.csv", rows)
    known = known_decay_report(trace)
    report = {"config": trace.config.to_dict(),
              "series": {key: [r[key] for r in rows] for key in rows[0] if key != "layer"},
              "known_decay": {"violations": known["violations"],
                              "constants": known["constants"]},
              "restarts": len(trace.layers) - 1,
              "sum_delta_sigma": sum_delta_sigma(trace)}
    write_json(out / "report.json", report)
    t = [r["time"] for r in rows]
    svg_plot(out / "functionals.svg",
             {key: (t, [r[key] for r in rows]) for key in ("V", "Q_trans", "Q_cubic", "Q_known")},
             "Interaction functionals", "t", "value")
    _profile_plot(out / "profile.svg", trace, "Initial and final profile")
    _echo(args, {"out": str(out), "restarts": report["restarts"],
                  "known_violations": known["violations"]})
    return 0


def cmd_waves(args) -> int:
    trace, extra = _trace_from(args)
    rep = build(trace)
    out = out_dir(args, extra)
    rows = list(genealogy_rows(rep))
    fields = ["package", "family", "sign", "birth", "death", "layer", "time", "node", "x",
              "phi_lo", "phi_hi", "speed_lo", "speed_hi"]
    write_csv(out / "waves.csv", rows, fields)
    report = {"config": trace.config.to_dict(), "summary": rep_summary(rep)}
    write_json(out / "waves.json", report)
    curves = {}
    for pk in rep.packages:
        for p in pk[:len(COLORS)]:
            t = (p.birth + np.arange(len(p.positions))) * trace.eps
            curves[f"package {p.id}"] = (trace.x0 + np.asarray(p.positions) * trace.eps, t)
    svg_plot(out / "waves.svg", curves, "Package positions", "x", "t")
    _echo(args, report["summary"])
    return 0


def verify_report(trace, constant=None) -> dict:
    """Decay checks of both functionals plus the bookkeeping checks."""
    from .potential import verify_decay

    rep = build(trace)
    known = known_decay_report(trace)
    dec = verify_decay(rep, constant)
    series = np.asarray(dec.pop("series"))
    return {
        "config": trace.config.to_dict(),
        "known_decay": {"violations": known["violations"], "constants": known["constants"],
                        "min_margin": min((r["drop"] - r["amounts"] for r in known["rows"]),
                                          default=0.0)},
        "potential": dec,
        "potential_series": series.tolist(),
        "bookkeeping": {"violations": dict(rep.violations), "total": rep.total_violations()},
        "passed": bool(known["violations"] == 0 and dec["violations"] == 0
                       and dec["bound_violations"] == 0 and dec["Q0_bounded"]
                       and rep.total_violations() == 0),
    }


def cmd_verify(args) -> int:
    trace, extra = _trace_from(args)
    report = verify_report(trace, args.constant)
    out = out_dir(args, extra)
    write_json(out / "verify.json", report)
    t = np.arange(len(trace.layers)) * trace.eps
    curves = {f"Q family {k + 1}": (t, s) for k, s in enumerate(report["potential_series"])}
    curves["Q_known"] = (t, trace.Q_known)
    svg_plot(out / "decay.svg", curves, "Functional decay", "t", "value")
    _echo(args, {"passed": report["passed"],
                 "known_violations": report["known_decay"]["violations"],
                 "potential_violations": report["potential"]["violations"],
                 "bookkeeping_violations": report["bookkeeping"]["total"]})
    return 0


def _sweep_member(cfg_dict: dict) -> dict:
    cfg = GlimmConfig.from_dict(cfg_dict)
    trace = run(cfg)
    V = np.asarray(trace.V)
    return {"eps": cfg.eps, "horizon": cfg.horizon, "tv0": trace.total_variation(0),
            "V0": float(V[0]), "V_ratio": float(V.max() / V[0]) if V[0] > 0 else 1.0,
            "sum_delta_sigma": sum_delta_sigma(trace),
            "restarts": len(trace.layers) - 1}


def sweep_members(cfg: GlimmConfig, extra: dict) -> list:
    """Configurations of every (eps, theta) member of a sweep."""
    members = []
    thetas = extra["thetas"]
    for eps in extra["eps_list"]:
        for theta in (thetas or [None]):
            d = cfg.to_dict()
            d["eps"] = eps
            if theta is not None:
                scaled = {"kind": "scaled", "base": cfg.datum, "theta": theta}
                if extra.get("center") is not None:
                    scaled["center"] = extra["center"]
                d["datum"] = scaled
                if extra.get("scale_horizon"):
                    d["horizon"] = cfg.horizon / theta
            members.append((eps, theta, d))
    return members


def cmd_sweep(args) -> int:
    raw = load_config(args)
    if not getattr(args, "config", None):
        raw = {**DEFAULT_SWEEP, **raw}
    cfg, extra = split_config(raw)
    extra["scale_horizon"] = raw.get("scale_horizon", False)
    members = sweep_members(cfg, extra)
    dicts = [d for _, _, d in members]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_member, dicts))
    else:
        results = [_sweep_member(d) for d in dicts]
    rows = [{"eps": eps, "theta": theta, **res} for (eps, theta, _), res in zip(members, results)]
    slopes = {}
    if extra["thetas"] and len(extra["thetas"]) > 1:
        for eps in extra["eps_list"]:
            sel = [r for r in rows if r["eps"] == eps]
            slopes[str(eps)] = loglog_slope([r["tv0"] for r in sel],
                                            [r["sum_delta_sigma"] for r in sel])
    by_theta = {}
    for r in rows:
        by_theta.setdefault(r["theta"], []).append(r["V_ratio"])
    spread = {str(th): (max(v) / min(v) - 1.0 if min(v) > 0 else float("nan"))
              for th, v in by_theta.items()}
    raw_echo = {**cfg.to_dict(), "eps_list": extra["eps_list"], "thetas": extra["thetas"],
                "scale_horizon": extra["scale_horizon"], "center": extra["center"]}
    report = {"config": raw_echo, "members": rows, "slopes": slopes,
              "slope": (float(np.mean(list(slopes.values()))) if slopes else None),
              "V_ratio_max": max(r["V_ratio"] for r in rows),
              "V_ratio_spread": spread}
    out = out_dir(args, extra)
    write_json(out / "sweep.json", report)
    write_csv(out / "sweep.csv", rows, list(rows[0]))
    if slopes:
        curves = {}
        for eps in extra["eps_list"]:
            sel = [r for r in rows if r["eps"] == eps]
            curves[f"eps={eps:g}"] = ([r["tv0"] for r in sel], [r["sum_delta_sigma"] for r in sel])
        svg_plot(out / "scaling.svg", curves, "Speed defect against initial variation",
                 "TV(u0)", "sum delta sigma", logx=True, logy=True, markers=True)
    _echo(args, {"slope": report["slope"], "V_ratio_max": report["V_ratio_max"]})
    return 0


# ---------------------------------------------------------------------------
# entry point

def _echo(args, data: dict):
    if not getattr(args, "quiet", False):
        print(json.dumps(_jsonable(data), sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glimmlab",
                                     description="Glimm scheme runs with exact wave bookkeeping.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--model", help="flux model name")
    common.add_argument("--eps", help="mesh size, or a comma separated list for sweep")
    common.add_argument("--theta", help="comma separated scaling factors of the datum")
    common.add_argument("--horizon", type=float, help="final time")
    common.add_argument("--seq", help="sampling sequence: vdc or random:<seed>")
    common.add_argument("--quiet", action="store_true", help="do not print the summary")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, text, states in (
            ("riemann", cmd_riemann, "solve one Riemann problem", "uL;uR"),
            ("merge", cmd_merge, "interaction amounts of one merge", "uL;uM;uR")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--states", help=f"{states}, components separated by commas")
        p.add_argument("--normalize", action="store_true",
                       help="use the speed-normalized model of the scheme")
        p.set_defaults(func=func)

    for name, func, text in (("run", cmd_run, "run the scheme and save the trace"),
                             ("waves", cmd_waves, "wave packages and their genealogy"),
                             ("verify", cmd_verify, "decay and bookkeeping checks")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--trace", help="use a saved trace instead of running")
        if name == "verify":
            p.add_argument("--constant", type=float, help="constant of the pair functional check")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", parents=[common], help="eps and theta grids with scaling slopes")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(json.dumps(_jsonable(err.as_dict()), sort_keys=True), file=sys.stderr)
        return 2
    except GlimmLabError as err:
        print(json.dumps(_jsonable(err.as_dict()), sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
