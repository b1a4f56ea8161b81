import numpy as np
import pytest

from glimmlab.envelope import SampledFunction
from glimmlab.errors import PotentialError
from glimmlab.glimm import GlimmConfig, run
from glimmlab.lagrangian import build
from glimmlab.potential import (DEFAULT_MAIN_CONSTANT, PotentialContext, characteristic_interval,
                                classify_pair, fit_main_constant, functional_Q, hull_breaks,
                                partition, verify_decay, weight_field)


def pieces(model, breaks, states, eps=1 / 32, horizon=1.0):
    datum = {"kind": "pieces", "breaks": breaks, "states": states}
    return run(GlimmConfig(model=model, eps=eps, horizon=horizon, datum=datum))


@pytest.fixture(scope="module")
def two_shocks():
    tr = pieces("burgers", [0.0, 0.1], [[1.0], [0.5], [0.0]], horizon=2.0)
    rep = build(tr)
    a, b = sorted(rep.packages[0], key=lambda p: p.phi[0, 0])
    merge = next(i for i in range(rep.nlayers) if a.position(i) == b.position(i))
    return tr, rep, a, b, merge


def test_two_shock_closed_form(two_shocks):
    tr, rep, a, b, merge = two_shocks
    ctx = PotentialContext(rep)
    scale = tr.model.speed_scale
    # shock speeds 3/4 and 1/4 before normalization, strengths 1/2 each
    q = 0.5 * scale / 1.0
    for i in (0, merge // 2, merge - 1):
        Qp, Qm, Q = functional_Q(ctx, i, 0)
        assert Qp == 0
        assert Qm == pytest.approx(q * 0.5 * 0.5, rel=1e-9)
        wf = weight_field(ctx, i, 0)
        assert wf.q_max == pytest.approx(q, rel=1e-9)
    for i in (merge, rep.nlayers - 1):
        assert functional_Q(ctx, i, 0)[2] == 0


def test_classification(two_shocks):
    tr, rep, a, b, merge = two_shocks
    c = classify_pair(rep, 0, a, a)
    assert c.status == "interacting-now" and not c.divided
    c = classify_pair(rep, 3, a, b)
    assert c.status == "never-interacted" and c.divided
    assert c.t_split is None
    assert c.layer_int == merge and c.t_int == pytest.approx(merge * tr.eps)
    assert c.x_int == pytest.approx(tr.x0 + a.position(merge) * tr.eps)
    c = classify_pair(rep, merge, a, b)
    assert c.status == "interacting-now" and not c.divided
    assert c.layer_split == merge


def test_never_interacted_interval(two_shocks):
    tr, rep, a, b, merge = two_shocks
    ci = characteristic_interval(rep, 2, a, b)
    # both born at time zero: the interval runs from the left end to the end
    # of the right package, and every package is its own element
    assert ci.lo == 0.0 and ci.hi == pytest.approx(1.0)
    assert len(ci.elements) == 2 and all(e[2] for e in ci.elements)
    assert partition(rep, 2, a, b) == pytest.approx([0.0, 0.5, 1.0])
    with pytest.raises(PotentialError):
        characteristic_interval(rep, merge, a, b)


def test_rarefaction_split_interval():
    tr = pieces("burgers", [0.0], [[-0.6], [0.4]], horizon=0.25)
    rep = build(tr)
    ctx = PotentialContext(rep)
    at0 = rep.layer_packages(0, 0)
    assert len({p.position(0) for p in at0}) == 1
    stay = [p for p in at0 if p.alive(1) and p.position(1) == p.position(0)]
    move = [p for p in at0 if p.alive(1) and p.position(1) != p.position(0)]
    assert stay and move
    c = classify_pair(ctx, 1, stay[-1], move[0])
    assert c.status == "already-interacted" and c.layer_split == 0
    ci = characteristic_interval(ctx, 0, stay[-1], move[0])
    # the whole rarefaction is one interval with a class per hull contact
    assert ci.lo == 0.0 and ci.hi == pytest.approx(1.0)
    assert len(ci.elements) > 10 and not any(e[2] for e in ci.elements)
    # the pieces of a rarefaction never meet again
    assert all(functional_Q(ctx, i, 0)[2] == 0 for i in range(rep.nlayers))


def test_hull_breaks_tangency():
    t = np.linspace(-1.0, 1.0, 257)
    g = SampledFunction(t, t ** 3)
    br = hull_breaks(g, -1.0, 1.0)
    # shock from -1 tangent at 1/2, then one class per node of the rarefaction
    assert br[0] == -1.0 and br[1] == pytest.approx(0.5, abs=1 / 128)
    assert np.allclose(br[1:], t[t >= br[1] - 1e-12])
    convex = SampledFunction(t, t ** 2)
    assert len(hull_breaks(convex, -1.0, 1.0)) == 257
    concave = SampledFunction(t, -t ** 2)
    assert hull_breaks(concave, -0.5, 0.75) == [-0.5, 0.75]


def test_gauge_invariance():
    rng = np.random.default_rng(2)
    t = np.sort(rng.uniform(0, 1, 40))
    y = np.cumsum(rng.normal(size=40)) * 0.01
    g = SampledFunction(t, y)
    h = SampledFunction(t, y + 0.3 - 1.7 * t)
    assert np.allclose(hull_breaks(g, t[3], t[30]), hull_breaks(h, t[3], t[30]))
    a, b, c, d = t[2], t[10], t[20], t[35]
    sig = lambda f, x, y_: (f(y_) - f(x)) / (y_ - x)
    assert sig(g, a, b) - sig(g, c, d) == pytest.approx(sig(h, a, b) - sig(h, c, d), abs=1e-12)


def test_linear_system_has_no_quadratic_part():
    datum = [[0.0, 0.0], [0.2, -0.1], [0.1, 0.1], [0.0, 0.0]]
    tr = pieces("linear", [0.0, 0.1, 0.2], datum, horizon=0.6)
    rep = build(tr)
    r = verify_decay(rep)
    assert all(row["A_quadr"] == 0 for row in r["rows"])
    assert r["sum_delta_sigma"] == pytest.approx(0, abs=1e-12)
    Q = np.sum(r["series"], axis=0)
    assert np.all(np.diff(Q) <= 1e-15)
    assert r["violations"] == 0


def test_single_package_and_empty():
    tr = pieces("burgers", [0.0], [[1.0], [0.0]], horizon=0.5)
    rep = build(tr)
    assert len(rep.packages[0]) == 1
    assert all(functional_Q(rep, i, 0) == (0.0, 0.0, 0.0) for i in range(rep.nlayers))
    tr = pieces("burgers", [0.0], [[0.3], [0.3]], horizon=0.25)
    r = verify_decay(build(tr))
    assert r["Q0"] == 0 and r["violations"] == 0 and r["fitted_constant"] == 0


def test_decay_report_on_merging_shocks(two_shocks):
    tr, rep, a, b, merge = two_shocks
    r = verify_decay(rep)
    assert r["constant"] == DEFAULT_MAIN_CONSTANT
    assert r["violations"] == 0 and r["unfixable"] == 0 and r["bound_violations"] == 0
    assert r["Q0_bounded"]
    # the potential is released at the merge, where the amounts are recorded
    drop = [row for row in r["rows"] if row["dQ"] < 0]
    assert [row["layer"] for row in drop] == [merge]
    assert drop[0]["A_quadr"] > 0
    assert fit_main_constant([rep], margin=1.0) >= r["fitted_constant"]
