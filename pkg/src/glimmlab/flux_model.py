"""Hyperbolic systems: flux, Jacobian, eigen-structure and the speed field.

A :class:`FluxModel` bundles the flux of ``u_t + f(u)_x = 0`` together with
its eigen-decomposition, a box ``omega`` of admissible states, the separation
constants ``lambda_hat`` confining each family's speeds, and an affine speed
normalization ``lambda -> scale * lambda + shift`` that maps all
characteristic speeds into (0, 1).  ``model.normalized()`` applies the
normalization to the flux itself (``scale * f(u) + shift * u``), which is the
form the Glimm driver needs for its unit CFL number.

Eigenvector orientation is fixed once, at the reference state: the first
nonzero component of ``r_k(u_ref)`` is positive, and at any other state
``r_k(u)`` is flipped so that it has a positive inner product with that
reference vector.  This keeps strength signs reproducible inside ``omega``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import HyperbolicityError

COLLISION_TOL = 1e-9


@dataclass
class EigenFrame:
    """Eigenvalues, unit right eigenvectors (columns of ``R``) and the dual left
    eigenvectors (rows of ``L``, with ``L @ R = I``) at one state."""
    u: np.ndarray
    lam: np.ndarray
    R: np.ndarray
    L: np.ndarray


@dataclass
class GeneralizedField:
    """The pair ``(r~_k, lambda~_k)`` as functions of ``(u, v, sigma)``.

    ``first_order`` marks the default field, which ignores ``v`` and
    ``sigma``; the Riemann solver then integrates the curve directly instead
    of running the fixed-point iteration.
    """
    r: Callable
    lam: Callable
    first_order: bool = False


@dataclass(frozen=True)
class FluxModel:
    name: str
    n: int
    flux_fn: Callable
    jac_fn: Optional[Callable] = None
    eig_fn: Optional[Callable] = None
    omega_lo: tuple = ()
    omega_hi: tuple = ()
    reference: tuple = ()
    lambda_hat: tuple = ()
    speed_scale: float = 1.0
    speed_shift: float = 0.0
    is_normalized: bool = False
    strength_cap: float = 0.2
    lattice: Optional[float] = None
    params: dict = field(default_factory=dict)
    description: str = ""

    # -- basic evaluations -------------------------------------------------
    def _raw_flux(self, u):
        return np.atleast_1d(np.asarray(self.flux_fn(np.asarray(u, dtype=float)), dtype=float))

    def flux(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        f = self._raw_flux(u)
        if self.is_normalized:
            f = self.speed_scale * f + self.speed_shift * u
        return f

    def _raw_jacobian(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.jac_fn is not None:
            return np.atleast_2d(np.asarray(self.jac_fn(u), dtype=float))
        J = np.empty((self.n, self.n))
        for j in range(self.n):
            h = 1e-6 * (1.0 + abs(u[j]))
            e = np.zeros(self.n)
            e[j] = h
            J[:, j] = (self._raw_flux(u + e) - self._raw_flux(u - e)) / (2 * h)
        return J

    def jacobian(self, u) -> np.ndarray:
        J = self._raw_jacobian(u)
        if self.is_normalized:
            J = self.speed_scale * J + self.speed_shift * np.eye(self.n)
        return J

    def in_domain(self, u, slack: float = 1e-12) -> bool:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        lo = np.asarray(self.omega_lo, dtype=float)
        hi = np.asarray(self.omega_hi, dtype=float)
        return bool(np.all(u >= lo - slack) and np.all(u <= hi + slack))

    # -- normalization ------------------------------------------------------
    def normalized(self) -> "FluxModel":
        """The same system with speeds mapped into (0, 1)."""
        if self.is_normalized:
            return self
        lh = tuple(self.speed_scale * x + self.speed_shift for x in self.lambda_hat)
        return replace(self, is_normalized=True, lambda_hat=lh)

    def to_original_speed(self, lam):
        """Convert a speed of this model back to the un-normalized units."""
        if not self.is_normalized:
            return lam
        return (np.asarray(lam) - self.speed_shift) / self.speed_scale

    def _raw_lambda_hat(self):
        if not self.is_normalized:
            return self.lambda_hat
        return tuple((x - self.speed_shift) / self.speed_scale for x in self.lambda_hat)

    # -- eigen-structure ----------------------------------------------------
    def _raw_eig(self, u):
        if self.eig_fn is not None:
            lam, R = self.eig_fn(u)
            return np.asarray(lam, dtype=float), np.asarray(R, dtype=float)
        A = self._raw_jacobian(u)
        w, V = np.linalg.eig(A)
        if np.max(np.abs(np.imag(w))) > 1e-12:
            raise HyperbolicityError("complex eigenvalues", state=u)
        w = np.real(w)
        V = np.real(V)
        order = np.argsort(w)
        return w[order], V[:, order]

    def eigen_frame(self, u) -> EigenFrame:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        lam, R = self._raw_eig(u)
        if lam.size > 1 and np.min(np.diff(lam)) < COLLISION_TOL:
            raise HyperbolicityError("eigenvalue collision", state=u, eigenvalues=lam)
        R = R / np.linalg.norm(R, axis=0)
        ref = self._reference_vectors()
        for k in range(self.n):
            if np.dot(R[:, k], ref[:, k]) < 0:
                R[:, k] = -R[:, k]
        L = np.linalg.inv(R)
        if self.is_normalized:
            lam = self.speed_scale * lam + self.speed_shift
        return EigenFrame(u, lam, R, L)

    def _reference_vectors(self) -> np.ndarray:
        cached = self.params.get("_ref_vectors")
        if cached is not None:
            return cached
        u0 = np.atleast_1d(np.asarray(self.reference, dtype=float))
        _, R = self._raw_eig(u0)
        R = R / np.linalg.norm(R, axis=0)
        for k in range(self.n):
            col = R[:, k]
            nz = np.flatnonzero(np.abs(col) > 1e-12)[0]
            if col[nz] < 0:
                R[:, k] = -col
        self.params["_ref_vectors"] = R
        return R

    def lam_r(self, u, k: int):
        """Eigenvalue and oriented unit right eigenvector of family ``k`` (0-based)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        lam, R = self._raw_eig(u)
        r = R[:, k] / np.linalg.norm(R[:, k])
        if np.dot(r, self._reference_vectors()[:, k]) < 0:
            r = -r
        lk = float(lam[k])
        if self.is_normalized:
            lk = self.speed_scale * lk + self.speed_shift
        return lk, r

    def check_separation(self, samples: int = 200, seed: int = 0) -> dict:
        """Sample ``omega`` and certify the speed separation constants."""
        rng = np.random.default_rng(seed)
        lo = np.asarray(self.omega_lo, dtype=float)
        hi = np.asarray(self.omega_hi, dtype=float)
        lh = np.asarray(self.lambda_hat, dtype=float)
        worst_gap = np.inf
        worst_margin = np.inf
        for _ in range(samples):
            u = lo + (hi - lo) * rng.random(self.n)
            lam = self.eigen_frame(u).lam
            if self.n > 1:
                worst_gap = min(worst_gap, float(np.min(np.diff(lam))))
            for k in range(self.n):
                worst_margin = min(worst_margin, float(lam[k] - lh[k]), float(lh[k + 1] - lam[k]))
        return {"min_gap": worst_gap, "min_margin": worst_margin, "ok": worst_margin > 0}


def default_generalized_field(model: FluxModel) -> GeneralizedField:
    """First-order field: ``r~_k(u, v, s) = r_k(u)``, ``lambda~_k(u, v, s) = lambda_k(u)``."""

    def r(u, v, sigma, k):
        return model.lam_r(u, k)[1]

    def lam(u, v, sigma, k):
        return model.lam_r(u, k)[0]

    return GeneralizedField(r, lam, first_order=True)


def check_field_derivative(model: FluxModel, fld: GeneralizedField, k: int = 0,
                           samples: int = 100, seed: int = 0, h: float = 1e-6) -> dict:
    """Finite-difference ratio ``|d lambda~ / d sigma| / |v|`` over random points.

    The bound constant is not known a priori, so the largest ratio is only
    reported.
    """
    rng = np.random.default_rng(seed)
    lo = np.asarray(model.omega_lo, dtype=float)
    hi = np.asarray(model.omega_hi, dtype=float)
    worst = 0.0
    max_deriv = 0.0
    for _ in range(samples):
        u = lo + (hi - lo) * rng.random(model.n)
        v = 0.1 * (rng.random() - 0.5)
        sig = rng.random()
        d = (fld.lam(u, v, sig + h, k) - fld.lam(u, v, sig - h, k)) / (2 * h)
        max_deriv = max(max_deriv, abs(d))
        if abs(v) > 0:
            worst = max(worst, abs(d) / abs(v))
    return {"max_abs_derivative": max_deriv, "max_ratio_to_v": worst}


# ---------------------------------------------------------------------------
# built-in systems

def burgers() -> FluxModel:
    """Scalar convex flux ``u^2/2`` on ``[-1.5, 1.5]``."""
    return FluxModel(
        name="burgers", n=1,
        flux_fn=lambda u: 0.5 * u ** 2,
        jac_fn=lambda u: np.array([[u[0]]]),
        eig_fn=lambda u: (np.array([u[0]]), np.array([[1.0]])),
        omega_lo=(-1.5,), omega_hi=(1.5,), reference=(0.0,),
        lambda_hat=(-1.55, 1.55), speed_scale=1 / 3.2, speed_shift=0.5,
        strength_cap=3.0, lattice=1 / 256,
        description="f(u) = u^2/2, normalized speed (u + 1.6)/3.2",
    )


def cubic() -> FluxModel:
    """Scalar non-convex flux ``u^3/3`` on ``[-1.2, 1.2]`` (inflection at 0)."""
    return FluxModel(
        name="cubic", n=1,
        flux_fn=lambda u: u * u * u / 3.0,
        jac_fn=lambda u: np.array([[u[0] * u[0]]]),
        eig_fn=lambda u: (np.array([u[0] * u[0]]), np.array([[1.0]])),
        omega_lo=(-1.2,), omega_hi=(1.2,), reference=(0.0,),
        lambda_hat=(-0.05, 1.5), speed_scale=0.6, speed_shift=0.05,
        strength_cap=3.0, lattice=1 / 256,
        description="f(u) = u^3/3, normalized speed 0.05 + 0.6 u^2",
    )


def linear(speeds=(0.2, 0.8)) -> FluxModel:
    """Diagonal linear system; every wave is a contact discontinuity."""
    lam = np.asarray(speeds, dtype=float)
    n = lam.size
    mids = [0.5 * (lam[k] + lam[k + 1]) for k in range(n - 1)]
    lh = (min(0.0, lam[0] / 2),) + tuple(mids) + (max(1.0, (1 + lam[-1]) / 2),)
    return FluxModel(
        name="linear", n=n,
        flux_fn=lambda u: lam * u,
        jac_fn=lambda u: np.diag(lam),
        eig_fn=lambda u: (lam.copy(), np.eye(n)),
        omega_lo=(-1.0,) * n, omega_hi=(1.0,) * n, reference=(0.0,) * n,
        lambda_hat=lh, speed_scale=1.0, speed_shift=0.0, is_normalized=True,
        strength_cap=2.0, params={"speeds": tuple(float(x) for x in lam)},
        description="u_t + diag(speeds) u_x = 0",
    )


def temple() -> FluxModel:
    """Triangular system ``u_t + (u^2/2 + u v)_x = 0``, ``v_t - v_x = 0``.

    Eigenvalues ``-1`` (contact) and ``u + v`` (genuinely nonlinear);
    ``d f~/du = u + v > -1`` on the box ``|u|, |v| <= 0.4``.
    """
    def flux(w):
        u, v = w
        return np.array([0.5 * u * u + u * v, -v])

    def jac(w):
        u, v = w
        return np.array([[u + v, u], [0.0, -1.0]])

    def eig(w):
        u, v = w
        r1 = np.array([-u, u + v + 1.0])
        return np.array([-1.0, u + v]), np.column_stack([r1, [1.0, 0.0]])

    return FluxModel(
        name="temple", n=2, flux_fn=flux, jac_fn=jac, eig_fn=eig,
        omega_lo=(-0.4, -0.4), omega_hi=(0.4, 0.4), reference=(0.0, 0.0),
        lambda_hat=(-1.15, -0.9, 1.1), speed_scale=1 / 2.4, speed_shift=0.5,
        strength_cap=0.2,
        description="u_t + (u^2/2 + u v)_x = 0, v_t - v_x = 0",
    )


def psystem() -> FluxModel:
    """Lagrangian isentropic gas ``tau_t - w_x = 0``, ``w_t + p(tau)_x = 0``.

    ``p(tau) = tau^-2 / 2`` (adiabatic exponent 2), so the sound speed is 1 at
    the reference state ``(tau, w) = (1, 0)``.
    """
    def flux(q):
        tau, w = q
        return np.array([-w, 0.5 / (tau * tau)])

    def jac(q):
        tau, w = q
        return np.array([[0.0, -1.0], [-1.0 / tau ** 3, 0.0]])

    def eig(q):
        tau = q[0]
        c = tau ** -1.5
        return np.array([-c, c]), np.array([[1.0, 1.0], [c, -c]])

    return FluxModel(
        name="psystem", n=2, flux_fn=flux, jac_fn=jac, eig_fn=eig,
        omega_lo=(0.8, -0.3), omega_hi=(1.25, 0.3), reference=(1.0, 0.0),
        lambda_hat=(-1.5, 0.0, 1.5), speed_scale=1 / 3.2, speed_shift=0.5,
        strength_cap=0.2,
        description="tau_t - w_x = 0, w_t + (tau^-2/2)_x = 0",
    )


_CATALOG = {
    "burgers": burgers,
    "cubic": cubic,
    "temple": temple,
    "psystem": psystem,
    "linear": linear,
}


def builtin_models() -> dict:
    """Name -> constructor for every shipped model."""
    return dict(_CATALOG)


def get_model(name: str, **params) -> FluxModel:
    try:
        ctor = _CATALOG[name]
    except KeyError:
        from .errors import ConfigError
        raise ConfigError(f"unknown model '{name}'", known=sorted(_CATALOG))
    return ctor(**params)
