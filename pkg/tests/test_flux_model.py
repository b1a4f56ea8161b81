import numpy as np
import pytest

from glimmlab.errors import ConfigError, HyperbolicityError
from glimmlab.flux_model import (FluxModel, builtin_models, check_field_derivative,
                                 default_generalized_field, get_model)


def random_states(model, count, seed=0):
    rng = np.random.default_rng(seed)
    lo = np.asarray(model.omega_lo)
    hi = np.asarray(model.omega_hi)
    return lo + (hi - lo) * rng.random((count, model.n))


def test_catalog():
    cat = builtin_models()
    assert len(cat) >= 4
    for name in ("burgers", "cubic", "temple", "psystem"):
        assert name in cat
    with pytest.raises(ConfigError):
        get_model("euler")


def test_scalar_frames():
    m = get_model("burgers")
    fr = m.eigen_frame(0.3)
    assert fr.lam[0] == pytest.approx(0.3)
    assert fr.R[0, 0] == 1.0 and fr.L[0, 0] == 1.0
    assert get_model("cubic").eigen_frame(0.5).lam[0] == pytest.approx(0.25)


def test_linear_frame():
    fr = get_model("linear").eigen_frame([0.1, -0.2])
    assert np.allclose(fr.lam, [0.2, 0.8])
    assert np.allclose(fr.R, np.eye(2))


def test_psystem_frame_matches_formulas():
    m = get_model("psystem")
    fr = m.eigen_frame([1.0, 0.0])
    assert np.allclose(fr.lam, [-1.0, 1.0])
    assert np.allclose(fr.R, np.array([[1, 1], [1, -1]]) / np.sqrt(2))
    mn = m.normalized()
    assert np.allclose(mn.eigen_frame([1.0, 0.0]).lam, [-1 / 3.2 + 0.5, 1 / 3.2 + 0.5])
    tau = 1.1
    c = tau ** -1.5
    fr = m.eigen_frame([tau, 0.05])
    assert np.allclose(fr.lam, [-c, c])
    assert np.allclose(fr.R[:, 0], np.array([1, c]) / np.hypot(1, c))


@pytest.mark.parametrize("name", ["burgers", "cubic", "temple", "psystem", "linear"])
def test_eigen_residual_and_separation(name):
    m = get_model(name).normalized()
    for u in random_states(m, 1000, seed=1):
        fr = m.eigen_frame(u)
        A = m.jacobian(u)
        assert np.max(np.abs(A @ fr.R - fr.R * fr.lam)) <= 1e-8
        assert np.max(np.abs(fr.L @ fr.R - np.eye(m.n))) <= 1e-8
        assert np.all(fr.lam > 0) and np.all(fr.lam < 1)
    rep = m.check_separation(samples=300)
    assert rep["ok"]


@pytest.mark.parametrize("name", ["temple", "psystem"])
def test_orientation_continuity(name):
    m = get_model(name)
    rng = np.random.default_rng(2)
    lo, hi = np.asarray(m.omega_lo), np.asarray(m.omega_hi)
    for _ in range(20):
        a, b = lo + (hi - lo) * rng.random(2), lo + (hi - lo) * rng.random(2)
        prev = None
        for t in np.linspace(0, 1, 50):
            R = m.eigen_frame(a + t * (b - a)).R
            if prev is not None:
                assert np.all(np.sum(R * prev, axis=0) > 0)
            prev = R


def test_temple_local_hyperbolicity():
    m = get_model("temple")
    for u, v in random_states(m, 500):
        assert u + v > -1


def test_finite_difference_jacobian():
    m = get_model("psystem")
    fd = FluxModel("fd", 2, m.flux_fn, omega_lo=m.omega_lo, omega_hi=m.omega_hi,
                   reference=m.reference, lambda_hat=m.lambda_hat)
    u = np.array([0.9, 0.1])
    assert np.allclose(fd.jacobian(u), m.jacobian(u), atol=1e-8)
    assert np.allclose(fd.eigen_frame(u).R, m.eigen_frame(u).R, atol=1e-7)


def test_collision_raises():
    m = FluxModel("deg", 2, lambda u: 0.5 * u, jac_fn=lambda u: 0.5 * np.eye(2),
                  omega_lo=(-1, -1), omega_hi=(1, 1), reference=(0, 0),
                  lambda_hat=(0, 0.5, 1))
    with pytest.raises(HyperbolicityError):
        m.eigen_frame([0.0, 0.0])


def test_default_field():
    m = get_model("cubic")
    fld = default_generalized_field(m)
    assert fld.lam(np.array([0.7]), 0.3, 0.1, 0) == pytest.approx(0.49)
    p = get_model("psystem")
    fp = default_generalized_field(p)
    u = np.array([1.1, 0.0])
    assert fp.lam(u, 0.0, 0.4, 1) == pytest.approx(p.eigen_frame(u).lam[1])
    assert check_field_derivative(p, fp, k=0)["max_abs_derivative"] == 0.0
