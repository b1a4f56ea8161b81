"""The non-local interaction potential built on a Lagrangian representation.

All computations are done per family ``k`` and per sign class in an oriented
coordinate ``psi`` that grows from left to right in ``x``: ``psi = Phi`` for
positive waves and ``psi = -Phi`` for negative ones.  On the negative class the
effective flux is replaced by ``psi -> -f(-psi)``, which turns its concave
envelopes into convex ones and leaves every chord slope unchanged, so a single
code path serves both classes.

For a pair of waves ``w < w'`` that are divided now and meet again later, the
weight is ``q = pi / d`` with

* ``pi = [sigma(G) - sigma(G')]^+``, the chord slopes of the flux over
  ``G = [A, sup J]`` and ``G' = [inf J', B]``,
* ``d = B - A``,

where ``J, J'`` are the partition elements holding ``w, w'`` now and ``A, B``
are the outer ends (pulled back to the present layer) of the elements
``K, K'`` holding them one step before they meet.  Pairs that never met, and
waves created after the last meeting, use whole wave packages as partition
elements.  Every end is therefore fixed on a cell of the decomposition by
package boundaries and partition breakpoints, ``q`` is constant there and the
functional is a finite sum of ``q`` times cell areas.

The weights need the time of the next meeting, so everything here is a second
pass over a finished trace.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envelope import SampledFunction, lower_hull
from .errors import PotentialError
from .lagrangian import LagrangianRep, effective_flux

SLOPE_TOL = 1e-11   # hull vertices with a smaller slope jump are ignored
GAP_TOL = 1e-11     # interval images closer than this are contiguous

# Constant of the per-step decay inequality, fitted on the calibration corpus of
# the test-suite (largest observed ratio times a safety factor).
DEFAULT_MAIN_CONSTANT = 0.15


# ---------------------------------------------------------------------------
# oriented axes

@dataclass
class Axis:
    """Packages of one sign class at one layer, in the oriented coordinate."""
    k: int
    sign: int
    layer: int
    packages: list
    lo: np.ndarray
    hi: np.ndarray
    g: SampledFunction
    index: dict

    @property
    def length(self) -> float:
        return float(self.hi[-1]) if len(self.hi) else 0.0

    def find(self, x: float, from_right: bool = True) -> int:
        """Position (in ``packages``) of the package holding ``[x, x+)`` or ``(x-, x]``."""
        if from_right:
            j = int(np.searchsorted(self.lo, x + GAP_TOL, side="right")) - 1
        else:
            j = int(np.searchsorted(self.hi, x - GAP_TOL, side="left"))
        return min(max(j, 0), len(self.lo) - 1)


def _oriented_flux(f: SampledFunction, sign: int, length: float) -> SampledFunction:
    # package coordinates accumulate round-off through the layer shifts
    if sign > 0:
        length = min(length, f.b)
    else:
        length = min(length, -f.a)
    if length <= 0:
        return SampledFunction(np.zeros(1), np.zeros(1))
    if sign > 0:
        return f.restrict(0.0, length)
    return f.restrict(-length, 0.0).mirrored()


class PotentialContext:
    """Shared caches for one representation."""

    def __init__(self, rep: LagrangianRep):
        self.rep = rep
        self.trace = rep.trace
        self.thetas = [layer.theta for layer in rep.trace.layers]
        self._axes: dict = {}
        self._gen: dict = {}
        self._pos: dict = {}
        self.structural = {"gaps": 0, "singleton_K": 0}

    # -- axes ---------------------------------------------------------------
    def axis(self, k: int, sign: int, i: int) -> Axis:
        key = (k, sign, i)
        if key not in self._axes:
            pk = [p for p in self.rep.layer_packages(k, i) if p.sign == sign]
            if sign < 0:
                pk = pk[::-1]
            lo = np.array([sign * p.interval(i)[0 if sign > 0 else 1] for p in pk])
            hi = np.array([sign * p.interval(i)[1 if sign > 0 else 0] for p in pk])
            length = float(hi[-1]) if len(hi) else 0.0
            g = _oriented_flux(effective_flux(self.rep, k, i), sign, length)
            self._axes[key] = Axis(k, sign, i, pk, lo, hi, g, {p.id: j for j, p in enumerate(pk)})
        return self._axes[key]

    def psi(self, p, i: int):
        ax = self.axis(p.family, p.sign, i)
        j = ax.index[p.id]
        return float(ax.lo[j]), float(ax.hi[j])

    def map_point(self, x: float, i: int, j: int, k: int, sign: int, from_right=True):
        """Coordinate at layer ``j`` of the wave at ``x`` on layer ``i``."""
        ax = self.axis(k, sign, i)
        if not len(ax.packages):
            return None
        t = ax.find(x, from_right)
        p = ax.packages[t]
        if not p.alive(j):
            return None
        lo_j, _ = self.psi(p, j)
        return lo_j + (x - ax.lo[t])

    # -- position histories ---------------------------------------------------
    def positions(self, k: int):
        if k not in self._pos:
            pk = self.rep.packages[k]
            nl = self.rep.nlayers
            P = np.full((len(pk), nl), -1, dtype=np.int64)
            side = np.zeros((len(pk), nl), dtype=np.int64)
            for r, p in enumerate(pk):
                P[r, p.birth:p.last + 1] = p.positions
                for t in range(len(p.positions)):
                    i = p.birth + t
                    if i + 1 < nl:
                        side[r, i] = int(p.speeds[t, 0] > self.thetas[i + 1])
            self._pos[k] = (P, side, {p.id: r for r, p in enumerate(pk)})
        return self._pos[k]

    # -- genealogies ----------------------------------------------------------
    def genealogy(self, k: int, sign: int, j0: int, x0: int) -> "Genealogy":
        key = (k, sign, j0, x0)
        if key not in self._gen:
            self._gen[key] = Genealogy(self, k, sign, j0, x0)
        return self._gen[key]


def hull_breaks(g: SampledFunction, a: float, b: float) -> list:
    """Contact points splitting ``[a, b]`` into classes of equal envelope slope."""
    if b - a <= GAP_TOL or g.nodes.size < 2:
        return [a, b]
    h = g.restrict(a, b)
    if h.nodes.size < 3:
        return [a, b]
    x, y = h.nodes.tolist(), h.values.tolist()
    vert = lower_hull(x, y)
    sl = [(y[q] - y[p]) / (x[q] - x[p]) for p, q in zip(vert[:-1], vert[1:])]
    scale = max(1.0, max(abs(s) for s in sl))
    out = [a]
    for t in range(1, len(vert) - 1):
        if sl[t] - sl[t - 1] > SLOPE_TOL * scale:
            out.append(x[vert[t]])
    out.append(b)
    return out


class Genealogy:
    """Characteristic interval and partition of the pairs that last split at
    node ``x0`` of layer ``j0``, followed forward in time.

    ``elements[j]`` is a list of ``(lo, hi, singleton)`` in the oriented
    coordinate of layer ``j``; ``singleton`` marks a run of waves created
    after the split, each of which is its own class.
    """

    def __init__(self, ctx: PotentialContext, k: int, sign: int, j0: int, x0: int):
        self.ctx, self.k, self.sign, self.j0, self.x0 = ctx, k, sign, j0, x0
        ax = ctx.axis(k, sign, j0)
        here = [t for t, p in enumerate(ax.packages) if p.position(j0) == x0]
        if not here:
            raise PotentialError("no waves at the split node", layer=j0, node=x0, family=k)
        lo, hi = float(ax.lo[here[0]]), float(ax.hi[here[-1]])
        br = hull_breaks(ax.g, lo, hi)
        self.elements = {j0: [(a, b, False) for a, b in zip(br[:-1], br[1:])]}
        self.last = j0

    def interval(self, j: int):
        el = self.at(j)
        if not el:
            return None
        return el[0][0], el[-1][1]

    def at(self, j: int) -> list:
        if j < self.j0:
            raise PotentialError("genealogy queried before its split", layer=j, split=self.j0)
        if j >= self.ctx.rep.nlayers:
            raise PotentialError("genealogy recursion beyond the last layer", layer=j)
        while self.last < j:
            self.elements[self.last + 1] = self._advance(self.elements[self.last], self.last)
            self.last += 1
        return self.elements[j]

    def _advance(self, elems: list, j: int) -> list:
        ctx, k, sign = self.ctx, self.k, self.sign
        ax, nx = ctx.axis(k, sign, j), ctx.axis(k, sign, j + 1)
        out = []
        for lo, hi, single in elems:
            imgs = []
            t0 = int(np.searchsorted(ax.hi, lo + GAP_TOL, side="left"))
            t = t0
            while t < len(ax.packages) and ax.lo[t] < hi - GAP_TOL:
                p = ax.packages[t]
                if p.alive(j + 1):
                    a, b = max(lo, ax.lo[t]), min(hi, ax.hi[t])
                    base, _ = ctx.psi(p, j + 1)
                    imgs.append((base + a - ax.lo[t], base + b - ax.lo[t]))
                t += 1
            if not imgs:
                continue
            imgs.sort()
            runs = [list(imgs[0])]
            for a, b in imgs[1:]:
                if a <= runs[-1][1] + GAP_TOL:
                    runs[-1][1] = max(runs[-1][1], b)
                else:
                    runs.append([a, b])
            if len(runs) > 1 and not single:
                ctx.structural["gaps"] += 1
            for a, b in runs:
                if single:
                    out.append((a, b, True))
                else:
                    br = hull_breaks(nx.g, a, b)
                    out += [(x, y, False) for x, y in zip(br[:-1], br[1:])]
        out.sort()
        filled = []
        for el in out:
            if filled and el[0] > filled[-1][1] + GAP_TOL:
                filled.append((filled[-1][1], el[0], True))
            filled.append(el)
        return filled

    def element(self, j: int, x: float, from_right: bool = True):
        el = self.at(j)
        for e in el:
            if (e[0] - GAP_TOL <= x < e[1] - GAP_TOL) if from_right else \
                    (e[0] + GAP_TOL < x <= e[1] + GAP_TOL):
                return e
        return None


# ---------------------------------------------------------------------------
# pair classification

@dataclass
class PairClassification:
    status: str                  # interacting-now, already-interacted, never-interacted
    divided: bool
    t_split: Optional[float] = None
    t_int: Optional[float] = None
    x_split: Optional[float] = None
    x_int: Optional[float] = None
    layer_split: Optional[int] = None
    layer_int: Optional[int] = None
    node_split: Optional[int] = None


def classify(ctx: PotentialContext, i: int, p, q) -> PairClassification:
    P, side, rows = ctx.positions(p.family)
    r1, r2 = rows[p.id], rows[q.id]
    meet = np.nonzero((P[r1] >= 0) & (P[r1] == P[r2]))[0]
    eps, x0 = ctx.trace.eps, ctx.trace.x0
    same_now = p.alive(i) and q.alive(i) and p.position(i) == q.position(i)
    last = ctx.rep.nlayers - 1
    # waves at one node are divided when the next restart sends them apart
    divided = not same_now or (i < last and side[r1, i] != side[r2, i])
    past = meet[meet <= i]
    fut = meet[meet > i]
    if same_now:
        status = "interacting-now"
    elif past.size:
        status = "already-interacted"
    else:
        status = "never-interacted"
    out = PairClassification(status, bool(divided))
    if past.size:
        j = int(past[-1])
        out.layer_split, out.t_split = j, j * eps
        out.node_split = int(P[r1, j])
        out.x_split = x0 + out.node_split * eps
    if fut.size:
        j = int(fut[0])
        out.layer_int, out.t_int = j, j * eps
        out.x_int = x0 + int(P[r1, j]) * eps
    return out


def classify_pair(rep_or_ctx, i: int, p, q) -> PairClassification:
    """Classification of the pair ``(p, q)`` of packages at layer ``i``."""
    ctx = rep_or_ctx if isinstance(rep_or_ctx, PotentialContext) else PotentialContext(rep_or_ctx)
    return classify(ctx, i, p, q)


# ---------------------------------------------------------------------------
# characteristic intervals and partitions

@dataclass
class CharacteristicInterval:
    """Interval of a pair in the oriented coordinate, with its partition.

    ``elements`` are ``(lo, hi, singleton)`` triples; a singleton element is a
    run of waves each forming its own class.
    """
    k: int
    sign: int
    layer: int
    lo: float
    hi: float
    elements: list

    def breakpoints(self) -> list:
        return [self.lo] + [e[1] for e in self.elements]


def _class_members(ctx: PotentialContext, i: int, p) -> list:
    """Packages in the same class as ``p`` at layer ``i``: same birth, same
    positions up to ``i`` and same motion in the following step."""
    P, side, rows = ctx.positions(p.family)
    r = rows[p.id]
    out = []
    for q in ctx.axis(p.family, p.sign, i).packages:
        s = rows[q.id]
        if q.birth == p.birth and np.array_equal(P[s, p.birth:i + 1], P[r, p.birth:i + 1]) \
                and side[s, i] == side[r, i]:
            out.append(q)
    return out


def _expand(ax: Axis, elems: list) -> list:
    """Split runs of singleton classes at package boundaries."""
    out = []
    for lo, hi, single in elems:
        if not single:
            out.append((lo, hi, False))
            continue
        cuts = ax.lo[(ax.lo > lo + GAP_TOL) & (ax.lo < hi - GAP_TOL)]
        x = [lo] + cuts.tolist() + [hi]
        out += [(u, v, True) for u, v in zip(x[:-1], x[1:])]
    return out


def characteristic_interval(rep_or_ctx, i: int, p, q) -> CharacteristicInterval:
    ctx = rep_or_ctx if isinstance(rep_or_ctx, PotentialContext) else PotentialContext(rep_or_ctx)
    if p.sign != q.sign or p.family != q.family:
        raise PotentialError("characteristic intervals need two waves of one sign class")
    c = classify(ctx, i, p, q)
    if not c.divided:
        raise PotentialError("the pair is not divided", layer=i)
    ax = ctx.axis(p.family, p.sign, i)
    if ctx.psi(p, i)[0] > ctx.psi(q, i)[0]:
        p, q = q, p
    if c.layer_split is None:
        if p.birth <= q.birth:
            members = _class_members(ctx, i, q)
            lo, hi = 0.0, max(ctx.psi(m, i)[1] for m in members)
        else:
            members = _class_members(ctx, i, p)
            lo, hi = min(ctx.psi(m, i)[0] for m in members), ax.length
        return CharacteristicInterval(p.family, p.sign, i, lo, hi, _expand(ax, [(lo, hi, True)]))
    gen = ctx.genealogy(p.family, p.sign, c.layer_split, c.node_split)
    el = _expand(ax, gen.at(i))
    return CharacteristicInterval(p.family, p.sign, i, el[0][0], el[-1][1], el)


def partition(rep_or_ctx, i: int, p, q) -> list:
    """Breakpoints of the partition of the characteristic interval."""
    return characteristic_interval(rep_or_ctx, i, p, q).breakpoints()


# ---------------------------------------------------------------------------
# weights

def _sigma(g: SampledFunction, a: float, b: float) -> float:
    return float((g(b) - g(a)) / (b - a))


def _side_pieces(ctx: PotentialContext, g: SampledFunction, i: int, p, gen, j_meet: int,
                 left: bool):
    """Cells of package ``p`` with the chord slope of their ``G`` set and its
    outer end, as arrays ``(x0, x1, slope, anchor)``.

    ``left`` selects the reading for the left wave of the pair (``G`` extends
    from the outer end of ``K`` to the right end of ``J``); otherwise the
    mirrored reading for the right wave is used.
    """
    lo, hi = ctx.psi(p, i)
    if gen is None:
        return np.array([[lo], [hi], [_sigma(g, lo, hi)], [lo if left else hi]])
    k, sign = p.family, p.sign
    j = j_meet - 1
    shift = ctx.psi(p, j)[0] - lo
    cells = []
    for e0, e1, single in gen.at(i):
        a, b = max(lo, e0), min(hi, e1)
        if b - a <= GAP_TOL:
            continue
        if single:
            # created after the split: the package itself is the class
            cells.append((a, b, _sigma(g, a, b), a if left else b))
            continue
        for f0, f1, fsingle in gen.at(j):
            c, d = max(a + shift, f0), min(b + shift, f1)
            if d - c <= GAP_TOL:
                continue
            if fsingle:
                ctx.structural["singleton_K"] += 1
            if left:
                anchor = ctx.map_point(f0, j, i, k, sign, from_right=True)
                anchor = c - shift if anchor is None else min(anchor, c - shift)
                sl = _sigma(g, anchor, e1)
            else:
                anchor = ctx.map_point(f1, j, i, k, sign, from_right=False)
                anchor = d - shift if anchor is None else max(anchor, d - shift)
                sl = _sigma(g, e0, anchor)
            cells.append((c - shift, d - shift, sl, anchor))
    if not cells:
        raise PotentialError("package outside its characteristic interval", layer=i, package=p.id)
    return np.array(cells).T


def _pair_integral(W, V):
    """Sum of ``q`` times cell area over all cells of a pair, and the largest ``q``."""
    x0, x1, al, A = (w[:, None] for w in W)
    y0, y1, be, B = (v[None, :] for v in V)
    pi = np.maximum(al - be, 0.0)
    d = B - A
    if np.any((pi > 0) & (d <= 0)):
        raise PotentialError("positive weight numerator over an empty interval")
    q = np.where(pi > 0, pi / np.where(d > 0, d, 1.0), 0.0)
    total = float(np.sum(q * (x1 - x0) * (y1 - y0)))
    return total, float(q.max()) if q.size else 0.0


@dataclass
class WeightField:
    """Weights of one family at one layer, aggregated per package pair."""
    k: int
    layer: int
    pairs: list = field(default_factory=list)
    Q_plus: float = 0.0
    Q_minus: float = 0.0
    q_max: float = 0.0
    curvature_max: float = 0.0

    @property
    def Q(self) -> float:
        return self.Q_plus + self.Q_minus


def _curvature_sup(g: SampledFunction) -> float:
    if g.nodes.size < 3:
        return 0.0
    h = np.diff(g.nodes)
    kink = np.diff(g.slopes())
    return float(np.max(np.abs(kink) / np.minimum(h[:-1], h[1:])))


def weight_field(rep_or_ctx, i: int, k: int) -> WeightField:
    ctx = rep_or_ctx if isinstance(rep_or_ctx, PotentialContext) else PotentialContext(rep_or_ctx)
    wf = WeightField(k, i)
    last = ctx.rep.nlayers - 1
    if i >= last:
        return wf
    P, side, rows = ctx.positions(k)
    for sign in (1, -1):
        ax = ctx.axis(k, sign, i)
        pk = ax.packages
        if len(pk) < 2:
            continue
        wf.curvature_max = max(wf.curvature_max, _curvature_sup(ax.g))
        r = np.array([rows[p.id] for p in pk])
        Pa = P[r]
        alive = Pa >= 0
        total = 0.0
        memo: dict = {}
        for a in range(len(pk)):
            same = alive[a][None, :] & alive[a + 1:] & (Pa[a][None, :] == Pa[a + 1:])
            for t, b in enumerate(range(a + 1, len(pk))):
                mt = np.nonzero(same[t])[0]
                fut = mt[mt > i]
                if not fut.size:
                    continue
                if Pa[a, i] == Pa[b, i] and side[r[a], i] == side[r[b], i]:
                    continue
                past = mt[mt <= i]
                j_meet = int(fut[0])
                gen = None
                if past.size:
                    j0 = int(past[-1])
                    gen = ctx.genealogy(k, sign, j0, int(Pa[a, j0]))
                key_w = (pk[a].id, id(gen), j_meet, True)
                key_v = (pk[b].id, id(gen), j_meet, False)
                if key_w not in memo:
                    memo[key_w] = np.array(_side_pieces(ctx, ax.g, i, pk[a], gen, j_meet, True))
                if key_v not in memo:
                    memo[key_v] = np.array(_side_pieces(ctx, ax.g, i, pk[b], gen, j_meet, False))
                val, qm = _pair_integral(memo[key_w], memo[key_v])
                wf.q_max = max(wf.q_max, qm)
                total += val
                wf.pairs.append({"w": pk[a].id, "w_prime": pk[b].id, "sign": sign,
                                 "meet": j_meet, "split": None if gen is None else gen.j0,
                                 "integral": val})
        if sign > 0:
            wf.Q_plus = total
        else:
            wf.Q_minus = total
    return wf


def functional_Q(rep_or_ctx, i: int, k: int):
    """``(Q_plus, Q_minus, Q)`` of family ``k`` at layer ``i``."""
    wf = weight_field(rep_or_ctx, i, k)
    return wf.Q_plus, wf.Q_minus, wf.Q


# ---------------------------------------------------------------------------
# decay checks

def potential_series(rep: LagrangianRep, ctx: Optional[PotentialContext] = None,
                     bounds: Optional[list] = None) -> np.ndarray:
    """``Q_k`` at every layer, shape ``(n, layers)``.

    If ``bounds`` is a list, ``(layer, family, q_max, curvature)`` tuples are
    appended to it.
    """
    ctx = ctx or PotentialContext(rep)
    out = np.zeros((rep.n, rep.nlayers))
    for k in range(rep.n):
        for i in range(rep.nlayers):
            wf = weight_field(ctx, i, k)
            out[k, i] = wf.Q
            if bounds is not None:
                bounds.append((i, k, wf.q_max, wf.curvature_max))
    return out


def _layer_amounts(trace, i: int, n: int):
    quadr = np.zeros(n)
    dsig = np.zeros(n)
    total = 0.0
    for led in trace.layers[i].ledgers.values():
        quadr += led.A_quadr
        dsig += led.delta_sigma
        total += led.A_total
    return quadr, total, dsig


def verify_decay(rep: LagrangianRep, constant: Optional[float] = None, tol: float = 1e-12) -> dict:
    """Per-step check of ``dQ_k <= -sum A_quadr_k + C TV(0) sum A``.

    The residuals use ``constant`` (the frozen default when omitted).  The
    smallest constant that would make this run pass is reported as
    ``fitted_constant``; steps with no interaction at all but a positive
    left-hand side cannot be fixed by any constant and are counted as
    ``unfixable``.  The weights are also checked against the discrete
    curvature of the effective flux, and ``Q(0)`` against ``C TV(0)^2``.
    """
    trace = rep.trace
    ctx = PotentialContext(rep)
    bounds: list = []
    series = potential_series(rep, ctx, bounds)
    tv0 = trace.total_variation(0)
    rows = []
    need = 0.0
    unfixable = 0
    sum_dsig = 0.0
    for i in range(1, rep.nlayers):
        quadr, total, dsig = _layer_amounts(trace, i, rep.n)
        sum_dsig += float(np.sum(dsig))
        for k in range(rep.n):
            dQ = float(series[k, i] - series[k, i - 1])
            lhs = dQ + float(quadr[k])
            slack = tol * max(1.0, abs(dQ))
            if lhs > slack:
                if tv0 * total > 0:
                    need = max(need, (lhs - slack) / (tv0 * total))
                else:
                    unfixable += 1
            rows.append({"layer": i, "family": k, "dQ": dQ, "A_quadr": float(quadr[k]),
                         "A_total": total, "lhs": lhs})
    C = DEFAULT_MAIN_CONSTANT if constant is None else float(constant)
    violations = 0
    for r in rows:
        r["residual"] = r["lhs"] - C * tv0 * r["A_total"]
        r["ok"] = bool(r["residual"] <= tol * max(1.0, abs(r["dQ"])))
        violations += not r["ok"]
    Q0 = float(np.sum(series[:, 0]))
    bound_violations = sum(1 for _, _, q, c in bounds if q > c + 1e-12)
    return {
        "rows": rows, "constant": C, "fitted_constant": need, "unfixable": unfixable,
        "violations": violations, "tv0": tv0, "sum_delta_sigma": sum_dsig,
        "headline_ratio": sum_dsig / tv0 ** 2 if tv0 > 0 else 0.0,
        "Q0": Q0, "Q0_over_tv2": Q0 / tv0 ** 2 if tv0 > 0 else 0.0,
        "Q0_bounded": bool(Q0 <= C * tv0 ** 2 + tol),
        "q_max": max((q for _, _, q, _ in bounds), default=0.0),
        "bound_violations": bound_violations,
        "series": series.tolist(), "structural": dict(ctx.structural),
    }


def fit_main_constant(reps, margin: float = 2.0) -> float:
    """Single constant covering the per-step inequality and ``Q(0) <= C TV^2``
    on every representation in ``reps``, times ``margin``."""
    worst = 0.0
    for rep in reps:
        r = verify_decay(rep)
        worst = max(worst, r["fitted_constant"], r["Q0_over_tv2"])
    return margin * worst
