"""The Glimm random-choice scheme and the classical interaction functionals.

Grid conventions (``dx = dt = eps``, all speeds in (0, 1)):

* ``u^{i,m}`` is the value on the cell ``[m eps, (m+1) eps)`` at time ``i eps``;
* node ``m`` carries the Riemann problem ``(u^{i,m-1}, u^{i,m})``;
* at the restart ``i`` the fan of node ``m`` at layer ``i-1`` is sampled at
  ``x/t = theta_i``: its waves with speed ``<= theta_i`` stay at node ``m``,
  the faster ones move to node ``m+1``.

Hence the node ``(i, m)`` merges the moving part of the fan ``(i-1, m-1)``,
which is the problem ``(u^{i,m-1}, u^{i-1,m-1})``, with the staying part of the
fan ``(i-1, m)``, which is ``(u^{i-1,m-1}, u^{i,m})``.  The fans are split
exactly at the sampled node of the elementary curve, which is always a vertex
of the envelope, so both parts are again valid Riemann fans.

Cell ``0`` is the far-left state, which never changes because no wave enters
from the left.  The domain is padded on the right by one cell per time step.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import BlowUpError, ConfigError, GlimmLabError
from .flux_model import FluxModel, get_model
from .interaction import InteractionLedger, MergeCase, interaction_ledger
from .riemann import ElementaryCurve, RiemannFan, solve_riemann

# Constants (c1, c2, c3) of the combined functional, calibrated per model on the
# fixture corpus of the test-suite and then inflated by a safety factor.
DEFAULT_KNOWN_CONSTANTS = {
    "burgers": (1.0, 0.002, 0.5),
    "cubic": (1.0, 0.002, 0.5),
    "temple": (1.0, 2.65, 0.5),
    "psystem": (1.0, 2.0, 0.5),
    "linear": (0.002, 2.0, 0.002),
}


def vdc_sequence(i: int, base: int = 2) -> float:
    """Radical inverse of ``i`` in the given base (van der Corput)."""
    x, denom = 0.0, 1.0
    while i > 0:
        i, d = divmod(i, base)
        denom *= base
        x += d / denom
    return x


def sampling_sequence(kind: str, count: int) -> np.ndarray:
    """``theta_1 .. theta_count`` (index 0 is unused and set to nan)."""
    out = np.full(count + 1, np.nan)
    if kind == "vdc":
        out[1:] = [vdc_sequence(i) for i in range(1, count + 1)]
    elif kind.startswith("random"):
        try:
            seed = int(kind.split(":", 1)[1]) if ":" in kind else 0
        except ValueError:
            raise ConfigError("bad random seed", sequence=kind)
        out[1:] = np.random.default_rng(seed).random(count)
    else:
        raise ConfigError("unknown sampling sequence", sequence=kind)
    return out


# ---------------------------------------------------------------------------
# configuration and initial data

@dataclass
class GlimmConfig:
    model: str = "burgers"
    model_params: dict = field(default_factory=dict)
    eps: float = 1 / 64
    horizon: float = 1.0
    datum: dict = field(default_factory=lambda: {"kind": "riemann", "uL": [1.0], "uR": [0.0]})
    sequence: str = "vdc"
    ledgers: bool = True
    known_constants: Optional[tuple] = None
    blowup_factor: float = 10.0

    def validate(self):
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ConfigError("eps must be positive and finite", eps=self.eps)
        if not (self.horizon >= 0 and math.isfinite(self.horizon)):
            raise ConfigError("horizon must be nonnegative and finite", horizon=self.horizon)
        if not isinstance(self.datum, dict) or "kind" not in self.datum:
            raise ConfigError("datum must be a mapping with a 'kind'")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["known_constants"] is not None:
            d["known_constants"] = list(d["known_constants"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GlimmConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError("unknown configuration keys", keys=sorted(extra))
        cfg = cls(**d)
        if cfg.known_constants is not None:
            cfg.known_constants = tuple(float(c) for c in cfg.known_constants)
        return cfg.validate()


def datum_pieces(datum: dict, n: int):
    """Normalize a datum spec into ``(breaks, states)``: the state ``states[j]``
    holds on ``[breaks[j-1], breaks[j])`` (``states[0]`` left of everything)."""
    kind = datum["kind"]
    if kind == "riemann":
        breaks = [float(datum.get("x0", 0.0))]
        states = [datum["uL"], datum["uR"]]
    elif kind == "pieces":
        breaks = [float(x) for x in datum["breaks"]]
        states = list(datum["states"])
    elif kind == "scaled":
        breaks, base = datum_pieces(datum["base"], n)
        theta = float(datum["theta"])
        center = np.asarray(datum.get("center", base[0]), dtype=float).reshape(n)
        states = [center + theta * (np.asarray(s, dtype=float) - center) for s in base]
    else:
        raise ConfigError("unknown datum kind", kind=kind)
    states = [np.asarray(s, dtype=float).reshape(n) for s in states]
    if len(states) != len(breaks) + 1:
        raise ConfigError("a datum needs one more state than breakpoints")
    if any(b2 <= b1 for b1, b2 in zip(breaks[:-1], breaks[1:])):
        raise ConfigError("datum breakpoints must increase")
    for s in states:
        if not np.all(np.isfinite(s)):
            raise ConfigError("datum states must be finite")
    return breaks, states


def discretize_datum(breaks, states, eps: float, steps: int):
    """Left-endpoint sampling on the cells; returns ``(x0, U)``."""
    x_lo = math.floor(breaks[0] / eps) * eps - 2 * eps
    x_hi = breaks[-1] + eps
    ncell = int(math.ceil((x_hi - x_lo) / eps)) + steps + 2
    x = x_lo + eps * np.arange(ncell)
    idx = np.searchsorted(np.asarray(breaks), x, side="right")
    U = np.vstack([states[j] for j in idx])
    return x_lo, U


# ---------------------------------------------------------------------------
# fan surgery

def _degenerate(model: FluxModel, u: np.ndarray, k: int) -> ElementaryCurve:
    z = np.zeros(1)
    return ElementaryCurve(k, u.copy(), 0.0, z, u[None, :].copy(), z.copy(), z.copy(),
                           np.zeros(0), model.lam_r(u, k)[0])


def _head(c: ElementaryCurve, j: int) -> ElementaryCurve:
    return ElementaryCurve(c.k, c.uL, float(c.tau[j]), c.tau[:j + 1].copy(), c.u[:j + 1].copy(),
                           c.f[:j + 1].copy(), c.v[:j + 1].copy(), c.sigma[:j].copy(), c.lam0)


def _tail(c: ElementaryCurve, j: int) -> ElementaryCurve:
    tau = c.tau[j:] - c.tau[j]
    s = c.s - float(c.tau[j])
    tau[-1] = s
    return ElementaryCurve(c.k, c.u[j].copy(), s, tau, c.u[j:].copy(), c.f[j:] - c.f[j],
                           c.v[j:].copy(), c.sigma[j:].copy(), float(c.sigma[j]))


@dataclass
class FanSplit:
    """Result of sampling a fan at ``theta``.

    ``family`` and ``cut`` locate the split: families below ``family`` stay
    entirely, family ``family`` stays on ``I(cut)`` and moves beyond; families
    above move entirely.  ``family == n`` means that everything stays.
    """
    state: np.ndarray
    slow: Optional[RiemannFan]
    fast: Optional[RiemannFan]
    family: int
    cut: float


def _fan(uL, uR, curves) -> RiemannFan:
    s = np.array([c.s for c in curves])
    states = np.vstack([uL] + [c.uR for c in curves])
    return RiemannFan(uL.copy(), uR.copy(), s, states, curves)


def split_fan(model: FluxModel, fan: RiemannFan, theta: float) -> FanSplit:
    n = model.n
    for k, c in enumerate(fan.curves):
        if c.nseg == 0:
            continue
        j = int(np.searchsorted(c.sigma, theta, side="right"))
        if j == c.nseg:
            continue
        mid = c.u[j].copy()
        slow_curves = list(fan.curves[:k])
        slow_curves.append(_head(c, j) if j > 0 else _degenerate(model, mid, k))
        slow_curves += [_degenerate(model, mid, h) for h in range(k + 1, n)]
        fast_curves = [_degenerate(model, mid, h) for h in range(k)]
        fast_curves.append(_tail(c, j) if j > 0 else c)
        fast_curves += list(fan.curves[k + 1:])
        slow = _fan(fan.uL, mid, slow_curves) if _nonzero(slow_curves) else None
        fast = _fan(mid, fan.uR, fast_curves)
        return FanSplit(mid, slow, fast, k, float(c.tau[j]))
    return FanSplit(fan.uR.copy(), fan, None, n, 0.0)


def _nonzero(curves) -> bool:
    return any(c.s != 0 for c in curves)


# ---------------------------------------------------------------------------
# trace

@dataclass
class Layer:
    """One time layer: cell states, node fans, splits and ledgers."""
    states: np.ndarray
    fans: dict
    theta: float = float("nan")
    splits: dict = field(default_factory=dict)
    ledgers: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)


@dataclass
class GlimmTrace:
    config: GlimmConfig
    model: FluxModel
    x0: float
    layers: list
    V: list = field(default_factory=list)
    Q_trans: list = field(default_factory=list)
    Q_cubic: list = field(default_factory=list)
    known_constants: tuple = (1.0, 1.0, 1.0)

    @property
    def eps(self) -> float:
        return self.config.eps

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def Q_known(self) -> np.ndarray:
        c1, c2, c3 = self.known_constants
        return c1 * np.asarray(self.V) + c2 * np.asarray(self.Q_trans) + c3 * np.asarray(self.Q_cubic)

    def amounts_known(self, i: int) -> float:
        """``sum_m [A_trans + sum_k (A_canc + A_cubic)]`` at restart ``i``."""
        tot = 0.0
        for led in self.layers[i].ledgers.values():
            tot += led.A_trans + float(np.sum(led.A_canc + led.A_cubic))
        return tot

    def total_variation(self, i: int) -> float:
        U = self.layers[i].states
        return float(np.sum(np.abs(np.diff(U, axis=0))))

    def strengths(self, i: int) -> dict:
        return {m: fan.strengths for m, fan in self.layers[i].fans.items()}


def _key(uL, uR) -> bytes:
    return uL.tobytes() + uR.tobytes()


def restart(model: FluxModel, prev: Layer, theta: float, cache: dict, ledgers: bool = True,
            fld=None) -> Layer:
    """Build layer ``i`` from layer ``i-1`` by sampling at ``theta``."""
    U = prev.states.copy()
    slow, fast, splits = {}, {}, {}
    for m, fan in prev.fans.items():
        sp = split_fan(model, fan, theta)
        U[m] = sp.state
        splits[m] = (sp.family, sp.cut)
        if sp.slow is not None:
            slow[m] = sp.slow
        if sp.fast is not None:
            fast[m + 1] = sp.fast
    fans, leds, sources = {}, {}, {}
    for m in sorted(set(slow) | set(fast)):
        a, b = fast.get(m), slow.get(m)
        if a is not None and b is not None:
            key = _key(U[m - 1], U[m])
            out = cache.get(key)
            if out is None:
                out = solve_riemann(model, U[m - 1], U[m], fld)
                cache[key] = out
            if ledgers:
                case = MergeCase(model, U[m - 1], prev.states[m - 1], U[m], a, b, out, fld)
                leds[m] = interaction_ledger(case)
            fans[m] = out
            sources[m] = "merge"
        else:
            fans[m] = a if a is not None else b
            sources[m] = "moved" if a is not None else "stayed"
        if not _nonzero(fans[m].curves):
            del fans[m]
    return Layer(U, fans, theta, splits, leds, sources)


def initial_layer(model: FluxModel, U: np.ndarray, cache: dict, fld=None) -> Layer:
    fans = {}
    for m in range(1, U.shape[0]):
        if np.array_equal(U[m - 1], U[m]):
            continue
        key = _key(U[m - 1], U[m])
        fan = cache.get(key)
        if fan is None:
            fan = solve_riemann(model, U[m - 1], U[m], fld)
            cache[key] = fan
        fans[m] = fan
    return Layer(U, fans)


# ---------------------------------------------------------------------------
# functionals

def _layer_functionals(model: FluxModel, layer: Layer):
    n = model.n
    nodes = sorted(layer.fans)
    if not nodes:
        return 0.0, 0.0, 0.0
    S = np.array([np.abs(layer.fans[m].strengths) for m in nodes])
    V = float(S.sum())
    qt = 0.0
    # pairs (k at m' < m, h < k at m): cumulative mass of faster families to the left
    left = np.zeros(n)
    for row in S:
        for h in range(n):
            qt += row[h] * float(left[h + 1:].sum())
        left += row
    qc = 0.0
    for k in range(n):
        ell, sig = [], []
        for m in nodes:
            c = layer.fans[m].curves[k]
            if c.nseg:
                ell.append(np.abs(np.diff(c.tau)))
                sig.append(c.sigma)
        if ell:
            qc += cubic_functional(np.concatenate(ell), np.concatenate(sig))
    return V, qt, qc


def cubic_functional(lengths: np.ndarray, speeds: np.ndarray) -> float:
    """``sum_{a,b} l_a l_b |sigma_a - sigma_b|`` for piecewise constant speeds."""
    order = np.argsort(speeds, kind="stable")
    l, s = lengths[order], speeds[order]
    L_before = np.concatenate(([0.0], np.cumsum(l)[:-1]))
    S_before = np.concatenate(([0.0], np.cumsum(l * s)[:-1]))
    return float(2.0 * np.sum(l * (s * L_before - S_before)))


def functionals(trace: GlimmTrace, i: int):
    """``(V, Q_trans, Q_cubic, Q_known)`` at layer ``i``."""
    c1, c2, c3 = trace.known_constants
    V, qt, qc = trace.V[i], trace.Q_trans[i], trace.Q_cubic[i]
    return V, qt, qc, c1 * V + c2 * qt + c3 * qc


# ---------------------------------------------------------------------------
# driver

def run(config: GlimmConfig, model: Optional[FluxModel] = None, fld=None) -> GlimmTrace:
    """Run the scheme up to the horizon and record every layer."""
    config.validate()
    model = (model or get_model(config.model, **config.model_params)).normalized()
    steps = int(round(config.horizon / config.eps))
    breaks, states = datum_pieces(config.datum, model.n)
    x0, U = discretize_datum(breaks, states, config.eps, steps)
    thetas = sampling_sequence(config.sequence, steps)
    consts = config.known_constants or DEFAULT_KNOWN_CONSTANTS.get(model.name, (1.0, 1.0, 1.0))
    cache: dict = {}
    layer = initial_layer(model, U, cache, fld)
    trace = GlimmTrace(config, model, x0, [layer], known_constants=tuple(consts))
    _record(trace, layer)
    V0 = trace.V[0]
    for i in range(1, steps + 1):
        try:
            layer = restart(model, layer, float(thetas[i]), cache, config.ledgers, fld)
        except GlimmLabError as err:
            err.details.setdefault("layer", i)
            raise
        trace.layers.append(layer)
        _record(trace, layer)
        if V0 > 0 and trace.V[-1] > config.blowup_factor * V0:
            raise BlowUpError("total variation blow-up", layer=i, V=trace.V[-1], V0=V0)
        if len(cache) > 20000:
            cache.clear()
    return trace


def _record(trace: GlimmTrace, layer: Layer):
    V, qt, qc = _layer_functionals(trace.model, layer)
    trace.V.append(V)
    trace.Q_trans.append(qt)
    trace.Q_cubic.append(qc)


def known_decay_report(trace: GlimmTrace, rtol: float = 1e-9) -> dict:
    """Check ``Q_known(i-1) - Q_known(i) >= amounts(i)`` at every restart."""
    Q = trace.Q_known
    rows = []
    violations = 0
    for i in range(1, len(trace.layers)):
        drop = float(Q[i - 1] - Q[i])
        amt = trace.amounts_known(i)
        ok = drop >= amt - rtol * max(abs(Q[i - 1]), 1e-300)
        violations += not ok
        rows.append({"layer": i, "drop": drop, "amounts": amt, "ok": bool(ok)})
    return {"violations": violations, "rows": rows, "constants": list(trace.known_constants)}


def fit_known_constants(traces, margin: float = 2.0, floor: float = 1e-3, rtol: float = 1e-9):
    """Smallest ``c1 + c2 + c3`` (with ``c >= floor``) satisfying the decay
    inequality on every restart of the given traces, inflated by ``margin``.

    Each restart allows the same relative slack as ``known_decay_report``;
    since the functional is linear in the constants, so is the slack.
    """
    from scipy.optimize import linprog

    rows, rhs = [], []
    for tr in traces:
        F = np.stack([tr.V, tr.Q_trans, tr.Q_cubic], axis=1)
        for i in range(1, len(tr.layers)):
            d = F[i - 1] - F[i]
            amt = tr.amounts_known(i)
            if amt == 0 and np.all(d == 0):
                continue
            rows.append(-d - rtol * np.abs(F[i - 1]))
            rhs.append(-amt)
    if not rows:
        return (floor * margin,) * 3
    res = linprog(np.ones(3), A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=[(floor, None)] * 3, method="highs")
    if not res.success:
        raise GlimmLabError("no constants satisfy the decay inequality on the corpus",
                            status=res.message)
    return tuple(float(c) * margin for c in res.x)


# ---------------------------------------------------------------------------
# persistence

def _curve_dict(c: ElementaryCurve) -> dict:
    return {"k": c.k, "s": c.s, "uL": c.uL.tolist(), "tau": c.tau.tolist(), "u": c.u.tolist(),
            "f": c.f.tolist(), "v": c.v.tolist(), "sigma": c.sigma.tolist(), "lam0": c.lam0}


def _curve_from(d: dict) -> ElementaryCurve:
    a = lambda key: np.asarray(d[key], dtype=float)
    u = a("u").reshape(len(d["tau"]), -1)
    return ElementaryCurve(int(d["k"]), a("uL"), float(d["s"]), a("tau"), u, a("f"), a("v"),
                           a("sigma"), float(d["lam0"]))


def trace_to_dict(trace: GlimmTrace) -> dict:
    """JSON layout: ``config``, ``x0``, ``functionals`` (series), and ``layers``;
    each layer holds ``theta``, ``states`` and ``nodes``, a list of
    ``{m, strengths, source, split, ledger, curves}`` records."""
    layers = []
    for L in trace.layers:
        nodes = []
        for m in sorted(set(L.fans) | set(L.ledgers)):
            fan = L.fans.get(m)
            rec = {"m": m, "source": L.sources.get(m, "initial")}
            if fan is not None:
                rec["strengths"] = fan.strengths.tolist()
                rec["curves"] = [_curve_dict(c) for c in fan.curves]
            if m in L.ledgers:
                rec["ledger"] = L.ledgers[m].to_dict()
            nodes.append(rec)
        layers.append({
            "theta": None if math.isnan(L.theta) else L.theta,
            "states": L.states.tolist(),
            "splits": {str(m): list(v) for m, v in L.splits.items()},
            "nodes": nodes,
        })
    return {
        "config": trace.config.to_dict(), "x0": trace.x0,
        "known_constants": list(trace.known_constants),
        "functionals": {"V": trace.V, "Q_trans": trace.Q_trans, "Q_cubic": trace.Q_cubic},
        "layers": layers,
    }


def trace_from_dict(d: dict) -> GlimmTrace:
    cfg = GlimmConfig.from_dict(d["config"])
    model = get_model(cfg.model, **cfg.model_params).normalized()
    layers = []
    for Ld in d["layers"]:
        U = np.asarray(Ld["states"], dtype=float).reshape(len(Ld["states"]), -1)
        fans, leds, sources = {}, {}, {}
        for rec in Ld["nodes"]:
            m = int(rec["m"])
            sources[m] = rec["source"]
            if "curves" in rec:
                curves = [_curve_from(c) for c in rec["curves"]]
                fans[m] = _fan(U[m - 1], U[m], curves)
            if "ledger" in rec:
                leds[m] = InteractionLedger.from_dict(rec["ledger"])
        theta = float("nan") if Ld["theta"] is None else float(Ld["theta"])
        splits = {int(m): (int(v[0]), float(v[1])) for m, v in Ld["splits"].items()}
        layers.append(Layer(U, fans, theta, splits, leds, sources))
    fn = d["functionals"]
    return GlimmTrace(cfg, model, float(d["x0"]), layers, list(fn["V"]), list(fn["Q_trans"]),
                      list(fn["Q_cubic"]), tuple(d["known_constants"]))


def save_trace(trace: GlimmTrace, path):
    with open(path, "w") as fh:
        json.dump(trace_to_dict(trace), fh)


def load_trace(path) -> GlimmTrace:
    with open(path) as fh:
        return trace_from_dict(json.load(fh))
