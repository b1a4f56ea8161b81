"""Elementary curves and the Riemann solver.

An elementary curve of family ``k`` issued from ``u_L`` with signed strength
``s`` is a triple ``(u, v, sigma)`` on the strength interval ``I(s)``:

* ``u(tau)`` follows the generalized eigenvector field,
* ``f(tau)`` is the reduced flux, the integral of the generalized eigenvalue,
* ``sigma`` is the slope of the convex envelope of ``f`` (concave when
  ``s < 0``) and ``v = f - envelope``.

Arrays are stored in the orientation of ``I(s)``: index 0 is ``tau = 0`` and
the last index is ``tau = s``, so for negative strengths ``tau`` decreases.
Speeds live on the segments between consecutive nodes and are nondecreasing
in index order for both signs.

For the default first-order field the curve is integrated directly: exactly
for scalar models (``u = u_L + tau``) and with classical RK4 for systems.  A
user-supplied field goes through the fixed-point iteration on ``(u, v, sigma)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envelope import SampledFunction, concave_envelope, convex_envelope
from .errors import ContractionError, DivergenceError, DomainExitError
from .flux_model import FluxModel, GeneralizedField, default_generalized_field

NODES_PER_UNIT = 512
CURVE_TOL = 1e-10
SOLVE_TOL = 1e-12


@dataclass
class ElementaryCurve:
    k: int
    uL: np.ndarray
    s: float
    tau: np.ndarray
    u: np.ndarray
    f: np.ndarray
    v: np.ndarray
    sigma: np.ndarray
    lam0: float = 0.0
    iterations: int = 0
    residual: float = 0.0

    @property
    def nseg(self) -> int:
        return self.sigma.size

    @property
    def uR(self) -> np.ndarray:
        return self.u[-1]

    def sigma_nodes(self) -> np.ndarray:
        """Speed attached to each node: the segment on its right, the last
        segment at the final node (``lam0`` for a degenerate curve)."""
        if self.nseg == 0:
            return np.array([self.lam0])
        return np.concatenate((self.sigma, self.sigma[-1:]))

    def flux_function(self) -> SampledFunction:
        """Reduced flux as a function on increasing abscissae."""
        if self.s >= 0:
            return SampledFunction(self.tau, self.f)
        return SampledFunction(self.tau[::-1], self.f[::-1])

    def speed_intervals(self):
        """``(lo, hi, sigma)`` for every segment, with ``lo < hi`` in tau."""
        a, b = self.tau[:-1], self.tau[1:]
        return np.minimum(a, b), np.maximum(a, b), self.sigma


def strength_grid(s: float, model: Optional[FluxModel] = None, uL=None,
                  resolution: int = NODES_PER_UNIT,
                  lattice: Optional[float] = None) -> np.ndarray:
    """Node grid on ``I(s)`` in orientation order.

    With a lattice spacing ``h`` (scalar models), the nodes are ``0``, every
    ``tau`` with ``u_L + tau`` on the lattice ``h Z`` strictly inside, and
    ``s``.  Otherwise the nodes are the multiples of ``1 / resolution``
    counted from the base state, closed by ``s``.  In both cases a curve cut
    at one of its nodes and rebuilt from the cut state reproduces the
    remaining nodes, so splitting a wave does not change its discretization.
    """
    s = float(s)
    if s == 0.0:
        return np.zeros(1)
    if lattice is None and model is not None and model.n == 1:
        lattice = model.lattice
    if lattice is not None and uL is not None:
        u0 = float(np.atleast_1d(uL)[0])
        lo, hi = sorted((u0, u0 + s))
        ks = np.arange(np.floor(lo / lattice) + 1, np.ceil(hi / lattice))
        pts = np.sort(ks * lattice - u0)
        margin = 1e-9 * lattice
        pts = pts[(pts > lo - u0 + margin) & (pts < hi - u0 - margin)]
        if s < 0:
            pts = pts[::-1]
        return np.concatenate(([0.0], pts, [s]))
    h = 1.0 / resolution
    pts = np.arange(1, int(np.ceil(abs(s) / h))) * h
    pts = pts[pts < abs(s) - 1e-9 * h]
    return np.concatenate(([0.0], np.sign(s) * pts, [s]))


def envelope_speeds(tau: np.ndarray, f: np.ndarray):
    """Envelope of the reduced flux in orientation order.

    Returns ``(hull, sigma)``: convex envelope when the strength is positive,
    concave when negative, with segment speeds in orientation order.
    """
    if tau.size < 2:
        return f.copy(), np.zeros(0)
    if tau[-1] > tau[0]:
        env = convex_envelope(SampledFunction(tau, f))
        return env.hull, env.slopes
    env = concave_envelope(SampledFunction(tau[::-1], f[::-1]))
    return env.hull[::-1], env.slopes[::-1]


def _check_domain(model: FluxModel, u: np.ndarray, k: int, s: float):
    lo = np.asarray(model.omega_lo, dtype=float)
    hi = np.asarray(model.omega_hi, dtype=float)
    bad = np.any((u < lo - 1e-12) | (u > hi + 1e-12), axis=-1)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise DomainExitError("elementary curve leaves the state domain",
                              family=k, strength=s, state=u[j])


def _rk4_curve(model: FluxModel, uL: np.ndarray, tau: np.ndarray, k: int):
    """Integrate ``du/dtau = r_k(u)``, ``df/dtau = lambda_k(u)`` node to node."""
    n = model.n
    u = np.empty((tau.size, n))
    f = np.empty(tau.size)
    u[0] = uL
    f[0] = 0.0
    for j in range(tau.size - 1):
        h = tau[j + 1] - tau[j]
        x = u[j]
        l1, k1 = model.lam_r(x, k)
        l2, k2 = model.lam_r(x + 0.5 * h * k1, k)
        l3, k3 = model.lam_r(x + 0.5 * h * k2, k)
        l4, k4 = model.lam_r(x + h * k3, k)
        u[j + 1] = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        f[j + 1] = f[j] + h / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
    return u, f


def _cumtrapz(y: np.ndarray, tau: np.ndarray) -> np.ndarray:
    h = np.diff(tau)
    inc = 0.5 * (y[1:] + y[:-1]) * (h[:, None] if y.ndim == 2 else h)
    out = np.zeros_like(y)
    out[1:] = np.cumsum(inc, axis=0)
    return out


def _fixed_point_curve(model, fld: GeneralizedField, uL, tau, k, s,
                       tol=CURVE_TOL, max_iter=100):
    """Iterate the curve map on ``(u, v, sigma)`` until the residual
    ``|du|_inf + |dv|_inf + |dsigma|_1`` drops below ``tol``."""
    lam0, r0 = model.lam_r(uL, k)
    u = uL[None, :] + tau[:, None] * r0[None, :]
    v = np.zeros(tau.size)
    sig_n = np.full(tau.size, lam0)
    dtau = np.abs(np.diff(tau))
    res = np.inf
    for it in range(1, max_iter + 1):
        lam = np.array([fld.lam(u[j], v[j], sig_n[j], k) for j in range(tau.size)])
        rr = np.array([fld.r(u[j], v[j], sig_n[j], k) for j in range(tau.size)])
        f = _cumtrapz(lam, tau)
        hull, sigma = envelope_speeds(tau, f)
        v_new = f - hull
        u_new = uL[None, :] + _cumtrapz(rr, tau)
        sig_new = np.concatenate((sigma, sigma[-1:]))
        res = (float(np.max(np.abs(u_new - u))) + float(np.max(np.abs(v_new - v)))
               + float(np.sum(np.abs(sig_new[:-1] - sig_n[:-1]) * dtau)))
        u, v, sig_n = u_new, v_new, sig_new
        if res <= tol:
            return u, f, v, sigma, it, res
    raise ContractionError("curve iteration did not contract", family=k, strength=s,
                           residual=res, iterations=max_iter)


def elementary_curve(model: FluxModel, uL, s: float, k: int = 0,
                     fld: Optional[GeneralizedField] = None, grid=None,
                     resolution: int = NODES_PER_UNIT, check_cap: bool = True) -> ElementaryCurve:
    """Family-``k`` elementary curve from ``uL`` with signed strength ``s``.

    Parameters
    ----------
    model : the (usually normalized) system
    uL : left state
    s : signed strength
    k : 0-based family index
    fld : generalized field; the first-order default when omitted
    grid : explicit node array in orientation order (``grid[0] = 0``,
        ``grid[-1] = s``), overriding the default grid
    """
    uL = np.atleast_1d(np.asarray(uL, dtype=float))
    s = float(s)
    if check_cap and abs(s) > model.strength_cap + 1e-12:
        raise DomainExitError("strength above the model cap", family=k, strength=s,
                              cap=model.strength_cap)
    lam0 = model.lam_r(uL, k)[0]
    if s == 0.0:
        z = np.zeros(1)
        return ElementaryCurve(k, uL, 0.0, z, uL[None, :].copy(), z.copy(), z.copy(),
                               np.zeros(0), lam0)
    tau = strength_grid(s, model, uL, resolution) if grid is None else np.asarray(grid, dtype=float)
    if tau[0] != 0.0 or abs(tau[-1] - s) > 1e-12 * max(1.0, abs(s)):
        raise DomainExitError("grid does not span the strength interval", strength=s)
    tau = tau.copy()
    tau[-1] = s
    fld = fld or default_generalized_field(model)
    its, res = 0, 0.0
    if fld.first_order and model.n == 1:
        u = uL[None, :] + tau[:, None]
        _check_domain(model, u, k, s)
        fu = model.flux(u[:, 0])
        f = fu - fu[0]
        hull, sigma = envelope_speeds(tau, f)
        v = f - hull
    elif fld.first_order:
        u, f = _rk4_curve(model, uL, tau, k)
        _check_domain(model, u, k, s)
        hull, sigma = envelope_speeds(tau, f)
        v = f - hull
    else:
        u, f, v, sigma, its, res = _fixed_point_curve(model, fld, uL, tau, k, s)
        _check_domain(model, u, k, s)
    return ElementaryCurve(k, uL, s, tau, u, f, v, sigma, lam0, its, res)


@dataclass
class RiemannFan:
    """Self-similar solution of one Riemann problem."""
    uL: np.ndarray
    uR: np.ndarray
    strengths: np.ndarray
    states: np.ndarray
    curves: list
    residual: float = 0.0
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.strengths.size

    def sample(self, xi: float) -> np.ndarray:
        return sample_fan(self, xi)

    def speed_range(self):
        """Slowest and fastest wave speeds present (None if no waves)."""
        sp = [c.sigma for c in self.curves if c.nseg]
        if not sp:
            return None
        return float(min(x[0] for x in sp)), float(max(x[-1] for x in sp))

    def to_dict(self) -> dict:
        return {
            "uL": self.uL.tolist(), "uR": self.uR.tolist(),
            "strengths": self.strengths.tolist(), "states": self.states.tolist(),
            "residual": self.residual, "iterations": self.iterations,
            "waves": [
                {"family": c.k + 1, "strength": c.s,
                 "speed_min": float(c.sigma[0]) if c.nseg else None,
                 "speed_max": float(c.sigma[-1]) if c.nseg else None}
                for c in self.curves
            ],
        }


def composite_map(model: FluxModel, uL, s, fld=None, grids=None):
    """Chain the elementary curves of all families; returns the curves."""
    u = np.atleast_1d(np.asarray(uL, dtype=float))
    curves = []
    for k in range(model.n):
        g = None if grids is None else grids[k]
        c = elementary_curve(model, u, s[k], k, fld, grid=g, check_cap=False)
        curves.append(c)
        u = c.uR
    return curves


def solve_riemann(model: FluxModel, uL, uR, fld: Optional[GeneralizedField] = None,
                  tol: float = SOLVE_TOL, max_iter: int = 200) -> RiemannFan:
    """Strengths ``s`` with ``T(u_L)(s) = u_R`` by the quasi-Newton update
    ``s <- s + R(u_L)^-1 (u_R - T(s))``."""
    uL = np.atleast_1d(np.asarray(uL, dtype=float))
    uR = np.atleast_1d(np.asarray(uR, dtype=float))
    n = model.n
    if n == 1 and (fld is None or fld.first_order):
        s = np.array([uR[0] - uL[0]])
        curves = composite_map(model, uL, s, fld)
        return _assemble(model, uL, uR, s, curves, 0.0, 0)
    Linv = model.eigen_frame(uL).L
    s = Linv @ (uR - uL)
    best = None
    res = np.inf
    for it in range(1, max_iter + 1):
        curves = composite_map(model, uL, s, fld)
        err = uR - curves[-1].uR
        res = float(np.max(np.abs(err)))
        if best is None or res < best[0]:
            best = (res, s.copy(), curves, it)
        if res <= tol:
            break
        s = s + Linv @ err
    else:
        if best[0] > 1e-10:
            raise DivergenceError("Riemann solve did not converge", uL=uL, uR=uR,
                                  residual=best[0], iterations=max_iter)
    res, s, curves, it = best
    if np.any(np.abs(s) > model.strength_cap + 1e-12):
        raise DomainExitError("Riemann data too large for the strength cap",
                              uL=uL, uR=uR, strengths=s)
    return _assemble(model, uL, uR, s, curves, res, it)


def _assemble(model, uL, uR, s, curves, res, it) -> RiemannFan:
    states = np.vstack([uL] + [c.uR for c in curves])
    return RiemannFan(uL, uR, np.asarray(s, dtype=float), states, curves, res, it)


def sample_fan(fan: RiemannFan, xi: float) -> np.ndarray:
    """State at ``x/t = xi``, right continuous.

    Within a family the state is ``u(tau*)`` at the farthest ``tau*`` (in the
    orientation of ``I(s)``) whose speed does not exceed ``xi``; past the last
    wave of a family the search moves to the next family.
    """
    for c in fan.curves:
        if c.nseg == 0:
            continue
        j = int(np.searchsorted(c.sigma, xi, side="right"))
        if j < c.nseg:
            return c.u[j].copy()
    return fan.uR.copy()


def profile(fan: RiemannFan, xis) -> np.ndarray:
    """Sample the fan at many speeds (rows are states)."""
    return np.vstack([sample_fan(fan, x) for x in np.atleast_1d(xis)])
