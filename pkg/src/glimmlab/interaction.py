"""Interaction of two merging Riemann problems at one grid node.

Given ``(u_L, u_M)`` and ``(u_M, u_R)`` with strengths ``s'`` and ``s''``, and
the merged problem ``(u_L, u_R)`` with strengths ``s``, this module evaluates

* the merge operators on reduced fluxes (``cup`` for equal signs, ``triangle``
  for opposite signs),
* the amounts of interaction: transversal, cubic, cancellation, creation and
  quadratic, and their total,
* the speed defect ``delta_sigma_k``: the L1 distance between the incoming
  speed function (merged with ``cup`` or ``triangle``) and the outgoing one,
* a report of the local estimates, which compares the defects with the amounts.

Coordinates: the incoming second wave of every family is translated so that it
lives on ``s'_k + I(s''_k)`` and its reduced flux starts at ``f'_k(s'_k)``.
Every function handed around here uses increasing abscissae.

All integrals are exact for the piecewise linear (fluxes, states) and piecewise
constant (speeds) representations, so the only discretization is the curve grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envelope import SampledFunction
from .errors import MergeError
from .flux_model import FluxModel
from .riemann import (ElementaryCurve, RiemannFan, composite_map, elementary_curve,
                      solve_riemann, strength_grid)

ZERO_FLOOR = 1e-12


def interval(s: float):
    """Closure of ``I(s)`` as ``(lo, hi)``."""
    return (0.0, s) if s >= 0 else (s, 0.0)


def _overlap(a, b):
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    return (lo, hi) if hi > lo else None


def common_domain(s_in: float, s_out: float):
    """``I(s_in) cap I(s_out)`` as a closed interval, or None if negligible."""
    if s_in * s_out <= 0:
        return None
    return _overlap(interval(s_in), interval(s_out))


# ---------------------------------------------------------------------------
# piecewise constant helpers

@dataclass
class StepFunction:
    """Piecewise constant function: ``vals[j]`` on ``[breaks[j], breaks[j+1])``."""
    breaks: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_segments(cls, segs):
        lo = np.concatenate([s[0] for s in segs])
        hi = np.concatenate([s[1] for s in segs])
        val = np.concatenate([s[2] for s in segs])
        order = np.argsort(lo, kind="stable")
        lo, hi, val = lo[order], hi[order], val[order]
        return cls(np.concatenate((lo, hi[-1:])), val)

    def __call__(self, x):
        j = np.searchsorted(self.breaks, x, side="right") - 1
        j = np.clip(j, 0, self.vals.size - 1)
        return self.vals[j]


def step_l1(a: StepFunction, b: StepFunction, lo: float, hi: float) -> float:
    """Exact L1 distance of two step functions on ``[lo, hi]``."""
    if hi <= lo:
        return 0.0
    pts = np.concatenate(([lo, hi], a.breaks, b.breaks))
    pts = np.unique(pts[(pts >= lo) & (pts <= hi)])
    mid = 0.5 * (pts[1:] + pts[:-1])
    return float(np.sum(np.abs(a(mid) - b(mid)) * np.diff(pts)))


def pl_integral(g: SampledFunction, h: SampledFunction, lo: float, hi: float) -> float:
    """Exact integral of ``g - h`` over ``[lo, hi]`` for piecewise linear g, h."""
    if hi <= lo:
        return 0.0
    pts = np.concatenate(([lo, hi], g.nodes, h.nodes))
    pts = np.unique(pts[(pts >= lo) & (pts <= hi)])
    d = g(pts) - h(pts)
    return float(np.sum(0.5 * (d[1:] + d[:-1]) * np.diff(pts)))


def second_difference_density(g: SampledFunction) -> StepFunction:
    """Slope jumps of a polygon spread uniformly over the dual cells."""
    x = g.nodes
    if x.size < 3:
        return StepFunction(np.array([x[0], x[-1] if x[-1] > x[0] else x[0] + 1e-300]),
                            np.zeros(1))
    m = g.slopes()
    mid = 0.5 * (x[1:] + x[:-1])
    dens = (m[1:] - m[:-1]) / (mid[1:] - mid[:-1])
    breaks = np.concatenate(([x[0]], mid, [x[-1]]))
    vals = np.concatenate(([0.0], dens, [0.0]))
    return StepFunction(breaks, vals)


# ---------------------------------------------------------------------------
# curve views in merge coordinates

def flux_view(curve: ElementaryCurve, shift: float = 0.0, base: float = 0.0) -> SampledFunction:
    """Reduced flux on ``shift + I(s)`` with increasing nodes, offset by ``base``."""
    g = curve.flux_function()
    return SampledFunction(g.nodes + shift, g.values + base)


def speed_segments(curve: ElementaryCurve, shift: float = 0.0):
    lo, hi, sig = curve.speed_intervals()
    return lo + shift, hi + shift, sig


def state_view(curve: ElementaryCurve, shift: float = 0.0):
    """``(nodes, states)`` with increasing nodes."""
    if curve.s >= 0:
        return curve.tau + shift, curve.u
    return curve.tau[::-1] + shift, curve.u[::-1]


# ---------------------------------------------------------------------------
# merge operators

def merge_cup(f1: SampledFunction, f2: SampledFunction, s1: float, s2: float) -> SampledFunction:
    """Concatenate ``f1`` on ``I(s1)`` with ``f2`` on ``s1 + I(s2)``.

    Requires ``s1 * s2 >= 0`` and matching values at ``s1``.
    """
    if s1 * s2 < 0:
        raise MergeError("cup needs strengths of equal sign", s1=s1, s2=s2)
    if s2 == 0:
        return f1
    if s1 == 0:
        return f2
    scale = 1.0 + max(np.max(np.abs(f1.values)), np.max(np.abs(f2.values)))
    if abs(f1(s1) - f2(s1)) > 1e-10 * scale:
        raise MergeError("values do not match at the junction", s1=s1,
                         left=float(f1(s1)), right=float(f2(s1)))
    first, second = (f1, f2) if s1 > 0 else (f2, f1)
    nodes = np.concatenate((first.nodes, second.nodes[1:]))
    vals = np.concatenate((first.values, second.values[1:]))
    return SampledFunction(nodes, vals)


def merge_triangle(f1: SampledFunction, f2: SampledFunction, s1: float, s2: float):
    """Restriction of the longer of the two waves to ``I(s1 + s2)``.

    ``f2`` is given on its translated domain ``s1 + I(s2)``.  Returns None when
    ``|s1| = |s2|`` (empty domain).
    """
    if s1 * s2 >= 0:
        raise MergeError("triangle needs strengths of opposite sign", s1=s1, s2=s2)
    tot = s1 + s2
    if tot == 0:
        return None
    lo, hi = interval(tot)
    g = f1 if abs(s1) >= abs(s2) else f2
    return g.restrict(lo, hi)


# ---------------------------------------------------------------------------
# the merge case

@dataclass
class MergeCase:
    model: FluxModel
    uL: np.ndarray
    uM: np.ndarray
    uR: np.ndarray
    left: RiemannFan
    right: RiemannFan
    out: RiemannFan
    fld: object = None
    _tilde: Optional[list] = field(default=None, repr=False)
    _aligned: Optional[list] = field(default=None, repr=False)

    @property
    def s1(self) -> np.ndarray:
        return self.left.strengths

    @property
    def s2(self) -> np.ndarray:
        return self.right.strengths

    @property
    def s(self) -> np.ndarray:
        return self.out.strengths

    @property
    def n(self) -> int:
        return self.model.n

    def incoming_fluxes(self, k: int):
        """``f'_k`` on ``I(s'_k)`` and ``f''_k`` on ``s'_k + I(s''_k)``."""
        c1, c2 = self.left.curves[k], self.right.curves[k]
        f1 = flux_view(c1)
        return f1, flux_view(c2, shift=c1.s, base=float(c1.f[-1]))

    def tilde_curves(self):
        """Post-transversal curves: for each family, the pair of waves
        ``s'_k``, ``s''_k`` issued one after the other from the point reached
        after the lower families of both problems."""
        if self._tilde is None:
            u = self.uL
            out = []
            for k in range(self.n):
                c1 = elementary_curve(self.model, u, self.s1[k], k, self.fld, check_cap=False)
                c2 = elementary_curve(self.model, c1.uR, self.s2[k], k, self.fld, check_cap=False)
                out.append((c1, c2))
                u = c2.uR
            self._tilde = out
        return self._tilde

    def tilde_fluxes(self, k: int):
        c1, c2 = self.tilde_curves()[k]
        return flux_view(c1), flux_view(c2, shift=c1.s, base=float(c1.f[-1]))

    def aligned_out_curves(self):
        """Outgoing curves re-evaluated on a grid containing all incoming nodes.

        Where an outgoing wave overlaps the incoming ones, using the same nodes
        removes the regridding error from the speed and state comparisons.
        """
        if self._aligned is None:
            grids = [aligned_grid(self.left.curves[k], self.right.curves[k], self.s[k],
                                  self.model, self.out.states[k])
                     for k in range(self.n)]
            self._aligned = composite_map(self.model, self.uL, self.s, self.fld, grids)
        return self._aligned


def aligned_grid(c1: ElementaryCurve, c2: ElementaryCurve, s: float, model, u0) -> np.ndarray:
    """Node grid on ``I(s)`` (orientation order) merging incoming nodes."""
    if s == 0:
        return np.zeros(1)
    lo, hi = interval(s)
    inc = np.concatenate((c1.tau, c1.s + c2.tau))
    cov_lo, cov_hi = inc.min(), inc.max()
    base = strength_grid(s, model, u0)
    pts = np.concatenate((inc, base[(base < cov_lo) | (base > cov_hi)], [0.0, s]))
    pts = pts[(pts >= lo) & (pts <= hi)]
    pts = np.unique(pts)
    tol = 1e-12 * max(1.0, abs(s))
    keep = np.concatenate(([True], np.diff(pts) > tol))
    pts = pts[keep]
    pts[0], pts[-1] = lo, hi
    if pts.size < 2:
        pts = np.array([lo, hi])
    if s < 0:
        pts = pts[::-1]
    return pts


def merge_case(model: FluxModel, uL, uM, uR, fld=None, fans=None) -> MergeCase:
    """Assemble the three Riemann problems of a merge (solved unless given)."""
    uL, uM, uR = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (uL, uM, uR))
    if fans is None:
        fans = (solve_riemann(model, uL, uM, fld), solve_riemann(model, uM, uR, fld),
                solve_riemann(model, uL, uR, fld))
    return MergeCase(model, uL, uM, uR, fans[0], fans[1], fans[2], fld)


# ---------------------------------------------------------------------------
# amounts

def amount_trans(case: MergeCase) -> float:
    a1 = np.abs(case.s1)
    a2 = np.abs(case.s2)
    tot = 0.0
    for k in range(case.n):
        for h in range(k):
            tot += a1[k] * a2[h]
    return float(tot)


def _cubic_positive(F1: SampledFunction, F2: SampledFunction, s1: float, s2: float) -> float:
    """Cubic amount for ``s1 > 0`` with ``F2`` on ``s1 + I(s2)``."""
    if s2 >= 0:
        U = merge_cup(F1, F2, s1, s2)
        C = U.hull_function(True)
        t1 = pl_integral(F1.hull_function(True), C, 0.0, s1)
        t2 = pl_integral(F2.hull_function(True), C, s1, s1 + s2)
        return t1 + t2
    tot = s1 + s2
    conv_full = F1.hull_function(True)
    if tot >= 0:
        t1 = 0.0
        if tot > 0:
            t1 = pl_integral(F1.hull_function(True, 0.0, tot), conv_full, 0.0, tot)
        t2 = pl_integral(F1.hull_function(False, tot, s1), conv_full, tot, s1)
        return t1 + t2
    # the second wave is longer: everything lives on its translated domain
    cc = F2.hull_function(False, tot, s1)
    t1 = pl_integral(cc, F2.hull_function(False, tot, 0.0), tot, 0.0)
    t2 = pl_integral(cc, F2.hull_function(True, 0.0, s1), 0.0, s1)
    return t1 + t2


def amount_cubic(case: MergeCase, k: int) -> float:
    s1, s2 = float(case.s1[k]), float(case.s2[k])
    if s1 == 0 or s2 == 0:
        return 0.0
    F1, F2 = case.incoming_fluxes(k)
    if s1 < 0:
        F1, F2, s1, s2 = F1.mirrored(), F2.mirrored(), -s1, -s2
    return _cubic_positive(F1, F2, s1, s2)


def amount_canc_cr(case: MergeCase, k: int):
    s1, s2, s = float(case.s1[k]), float(case.s2[k]), float(case.s[k])
    canc = min(abs(s1), abs(s2)) if s1 * s2 < 0 else 0.0
    cr = max(abs(s) - abs(s1 + s2), 0.0)
    return canc, cr


def amount_quadr(case: MergeCase, k: int) -> float:
    s1, s2 = float(case.s1[k]), float(case.s2[k])
    if s1 * s2 <= 0:
        return 0.0
    F1, F2 = case.tilde_fluxes(k)
    U = merge_cup(F1, F2, s1, s2)
    if s1 > 0:
        return float(F1(s1) - U.hull_function(True)(s1))
    return float(U.hull_function(False)(s1) - F1(s1))


# ---------------------------------------------------------------------------
# incoming/outgoing comparison

def _incoming_pieces(case: MergeCase, k: int):
    """Curves (with translations) making up the merged incoming wave."""
    c1, c2 = case.left.curves[k], case.right.curves[k]
    s1, s2 = c1.s, c2.s
    if s1 * s2 >= 0:
        return [(c, sh) for c, sh in ((c1, 0.0), (c2, s1)) if c.nseg]
    return [(c1, 0.0)] if abs(s1) >= abs(s2) else [(c2, s1)]


def delta_sigma(case: MergeCase, k: int, aligned: bool = True) -> float:
    s_in = float(case.s1[k] + case.s2[k])
    out = (case.aligned_out_curves() if aligned else case.out.curves)[k]
    dom = common_domain(s_in, out.s)
    pieces = _incoming_pieces(case, k)
    if dom is None or not pieces or out.nseg == 0:
        return 0.0
    sin = StepFunction.from_segments([speed_segments(c, sh) for c, sh in pieces])
    sout = StepFunction.from_segments([speed_segments(out)])
    return step_l1(sin, sout, *dom)


def _state_gap(case, k, out, dom) -> float:
    pieces = _incoming_pieces(case, k)
    xs, us = [], []
    for c, sh in pieces:
        x, u = state_view(c, sh)
        xs.append(x)
        us.append(u)
    x_in = np.concatenate(xs)
    u_in = np.vstack(us)
    order = np.argsort(x_in, kind="stable")
    x_in, u_in = x_in[order], u_in[order]
    x_out, u_out = state_view(out)
    pts = np.concatenate((x_in, x_out, dom))
    pts = np.unique(pts[(pts >= dom[0]) & (pts <= dom[1])])
    gap = 0.0
    for j in range(case.n):
        a = np.interp(pts, x_in, u_in[:, j])
        b = np.interp(pts, x_out, u_out[:, j])
        gap = max(gap, float(np.max(np.abs(a - b))))
    return gap


def _curvature_gap(case, k, out, dom) -> float:
    pieces = _incoming_pieces(case, k)
    dens = [second_difference_density(flux_view(c, sh)) for c, sh in pieces]
    segs = [(d.breaks[:-1], d.breaks[1:], d.vals) for d in dens]
    din = StepFunction.from_segments(segs)
    dout = second_difference_density(flux_view(out))
    return step_l1(din, dout, *dom)


@dataclass
class InteractionLedger:
    A_trans: float
    A_cubic: np.ndarray
    A_canc: np.ndarray
    A_cr: np.ndarray
    A_quadr: np.ndarray
    A_total: float
    delta_sigma: np.ndarray
    created: np.ndarray
    removed: np.ndarray

    def parts_sum(self) -> float:
        return float(self.A_trans + np.sum(self.A_quadr + self.A_canc + self.A_cubic))

    def to_dict(self) -> dict:
        return {
            "A_trans": self.A_trans, "A_cubic": self.A_cubic.tolist(),
            "A_canc": self.A_canc.tolist(), "A_cr": self.A_cr.tolist(),
            "A_quadr": self.A_quadr.tolist(), "A_total": self.A_total,
            "delta_sigma": self.delta_sigma.tolist(),
            "created": self.created.tolist(), "removed": self.removed.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        arr = lambda key: np.asarray(d[key], dtype=float)
        return cls(float(d["A_trans"]), arr("A_cubic"), arr("A_canc"), arr("A_cr"),
                   arr("A_quadr"), float(d["A_total"]), arr("delta_sigma"),
                   arr("created"), arr("removed"))


def created_removed(s1: float, s2: float, s: float):
    """Measures of ``I(s) minus I(s1+s2)`` and of ``I(s1+s2) minus I(s)``."""
    tot = s1 + s2
    if s * tot >= 0:
        return max(abs(s) - abs(tot), 0.0), max(abs(tot) - abs(s), 0.0)
    return abs(s), abs(tot)


def interaction_ledger(case: MergeCase) -> InteractionLedger:
    n = case.n
    cubic = np.array([max(amount_cubic(case, k), 0.0) for k in range(n)])
    cc = [amount_canc_cr(case, k) for k in range(n)]
    canc = np.array([c[0] for c in cc])
    cr = np.array([c[1] for c in cc])
    quadr = np.array([max(amount_quadr(case, k), 0.0) for k in range(n)])
    trans = amount_trans(case)
    total = float(trans + np.sum(quadr + canc + cubic))
    dsig = np.array([delta_sigma(case, k) for k in range(n)])
    crm = [created_removed(float(case.s1[k]), float(case.s2[k]), float(case.s[k]))
           for k in range(n)]
    return InteractionLedger(trans, cubic, canc, cr, quadr, total, dsig,
                             np.array([x[0] for x in crm]), np.array([x[1] for x in crm]))


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return 0.0 if num <= ZERO_FLOOR else float("inf")


def check_local_estimates(case: MergeCase, ledger: Optional[InteractionLedger] = None) -> dict:
    """Compare the incoming/outgoing defects with the amounts of interaction."""
    led = ledger or interaction_ledger(case)
    outs = case.aligned_out_curves()
    fam = []
    for k in range(case.n):
        s_in = float(case.s1[k] + case.s2[k])
        dom = common_domain(s_in, outs[k].s)
        pieces = _incoming_pieces(case, k)
        if dom is None or not pieces or outs[k].nseg == 0:
            ug = cg = 0.0
        else:
            ug = _state_gap(case, k, outs[k], dom)
            cg = _curvature_gap(case, k, outs[k], dom)
        ds = float(led.delta_sigma[k])
        fam.append({
            "family": k + 1, "delta_sigma": ds, "state_gap": ug, "curvature_gap": cg,
            "ratio_delta_sigma": _ratio(ds, led.A_total),
            "ratio_state_gap": _ratio(ug, led.A_total),
            "ratio_curvature_gap": _ratio(cg, led.A_total),
        })
    base = led.A_trans + float(np.sum(led.A_cubic))
    defect = float(np.sum(np.abs(case.s - (case.s1 + case.s2))))
    return {
        "families": fam,
        "A_total": led.A_total,
        "strength_defect": defect,
        "ratio_defect": _ratio(defect, base),
        "ratio_creation": _ratio(float(np.sum(led.A_cr)), base),
        "ledger": led.to_dict(),
    }
