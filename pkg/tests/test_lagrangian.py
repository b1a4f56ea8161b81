import numpy as np
import pytest

from glimmlab.glimm import GlimmConfig, run
from glimmlab.lagrangian import build, effective_flux, genealogy_rows, packages_at


def pieces(model, breaks, states, eps=1 / 32, horizon=0.5, **kw):
    cfg = GlimmConfig(model=model, eps=eps, horizon=horizon,
                      datum={"kind": "pieces", "breaks": breaks, "states": states}, **kw)
    return run(cfg)


def second_differences(f):
    return np.diff(np.diff(f.values) / np.diff(f.nodes))


def test_constant_datum_is_empty():
    rep = build(pieces("burgers", [0.0], [[0.3], [0.3]]))
    assert rep.is_empty()
    assert packages_at(rep, 0, 5) == []


def test_single_linear_contact():
    tr = pieces("linear", [0.0], [[0.0, 0.0], [0.5, 0.0]], horizon=1.0)
    rep = build(tr)
    assert [len(p) for p in rep.packages] == [1, 0]
    (p,) = rep.packages[0]
    assert p.birth == 0 and p.death is None and p.measure == pytest.approx(0.5)
    thetas = [layer.theta for layer in tr.layers]
    steps = np.diff(p.positions)
    assert np.array_equal(steps, (np.array(thetas[1:]) < 0.2).astype(int))
    assert rep.total_violations() == 0


def test_shock_merge_bookkeeping():
    tr = pieces("burgers", [0.0, 0.1], [[1.0], [0.5], [0.0]], horizon=2.0)
    rep = build(tr)
    assert rep.total_violations() == 0
    a, b = sorted(rep.packages[0], key=lambda p: p.phi[0, 0])
    assert a.measure == pytest.approx(0.5) and b.measure == pytest.approx(0.5)
    last = len(tr.layers) - 1
    assert a.position(last) == b.position(last)
    here = packages_at(rep, last, a.position(last))
    # negative waves: the leftmost package has the largest coordinate
    assert [p.id for p in here] == [b.id, a.id]
    assert all(r["created"] == 0 and r["cancelled"] == pytest.approx(0) for r in rep.balance)
    assert np.allclose(rep.L_minus[0], -1.0)


def test_cancellation_and_creation_balance():
    datum = [[1.0, 0.0], [1.04, 0.02], [0.97, -0.03], [1.02, 0.01], [1.0, 0.0]]
    tr = pieces("psystem", [0.0, 0.1, 0.2, 0.3], datum, eps=1 / 64, horizon=0.6)
    rep = build(tr)
    assert rep.total_violations() == 0
    assert any(r["created"] > 0 for r in rep.balance)
    assert any(r["cancelled"] > 1e-6 for r in rep.balance)
    for r in rep.balance:
        if "ledger_created" in r:
            assert r["created"] == pytest.approx(r["ledger_created"], abs=1e-9)
            assert r["cancelled"] == pytest.approx(r["ledger_cancelled"], abs=1e-9)
    # created waves sit at the fast end of their node
    for k in range(rep.n):
        for i, nodes in enumerate(rep.nodes[k]):
            for nw in nodes.values():
                born = [seg for seg in nw.segs if seg[2] == i and i > 0]
                if born:
                    far = max(abs(seg[0]) if nw.s < 0 else abs(seg[1]) for seg in nw.segs)
                    edge = abs(born[-1][0]) if nw.s < 0 else abs(born[-1][1])
                    assert edge == pytest.approx(far) and len(born) == 1


def test_packages_single_sign_everywhere():
    tr = pieces("cubic", [0.0, 0.1, 0.2], [[0.7], [0.2], [-0.3], [0.4]], eps=1 / 64, horizon=1.0)
    rep = build(tr)
    assert rep.total_violations() == 0
    for i, layer in enumerate(tr.layers):
        for m in layer.fans:
            here = packages_at(rep, i, m)
            assert len({p.sign for p in here}) == 1
            # ordered by position inside the node
            phis = [p.interval(i)[0] for p in here]
            assert phis == sorted(phis, reverse=here[0].sign < 0)


def test_effective_flux_single_node():
    tr = pieces("cubic", [0.0], [[-0.4], [0.6]], horizon=0.05)
    rep = build(tr)
    f = effective_flux(rep, 0, 0)
    (m,) = tr.layers[0].fans
    g = tr.layers[0].fans[m].curves[0].flux_function()
    assert f(f.a) == 0
    assert np.allclose(second_differences(f), second_differences(g), atol=1e-9)
    # equal up to an affine function
    slopes = np.diff(f.values - g.values) / np.diff(g.nodes)
    assert np.allclose(slopes, slopes[0], atol=1e-12)


def test_effective_flux_linear_is_affine():
    tr = pieces("linear", [0.0, 0.1], [[0.0, 0.0], [0.2, 0.1], [0.1, 0.3]], horizon=0.2)
    rep = build(tr)
    for k in range(2):
        f = effective_flux(rep, k, 3)
        assert np.allclose(second_differences(f), 0, atol=1e-12)
        assert f(f.a) == 0 and f.values[1] == pytest.approx(0, abs=1e-15)


def test_effective_flux_two_nodes():
    tr = pieces("burgers", [0.0, 0.2], [[-0.5], [0.0], [0.4]], horizon=0.05)
    rep = build(tr)
    f = effective_flux(rep, 0, 0)
    assert f.a == 0 and f.b == pytest.approx(0.9)
    model = tr.model
    fans = tr.layers[0].fans
    ms = sorted(fans)
    for m in ms:
        g = fans[m].curves[0].flux_function()
        off = rep.nodes[0][0][m].offset
        inside = (f.nodes > off + 1e-12) & (f.nodes < off + g.b - 1e-12)
        sd_f = np.diff(np.diff(f(g.nodes + off)) / np.diff(g.nodes))
        assert np.allclose(sd_f, second_differences(g), atol=1e-9)
        assert np.count_nonzero(inside) == len(g.nodes) - 2
    # the slope is continuous across the junction: the kink equals the
    # curvature of the two half cells next to it
    off = rep.nodes[0][0][ms[1]].offset
    j = int(np.argmin(np.abs(f.nodes - off)))
    kink = (f.values[j + 1] - f.values[j]) / (f.nodes[j + 1] - f.nodes[j]) \
        - (f.values[j] - f.values[j - 1]) / (f.nodes[j] - f.nodes[j - 1])
    h = f.nodes[j + 1] - f.nodes[j]
    assert kink == pytest.approx(model.speed_scale * h, rel=1e-6)


def test_genealogy_rows():
    tr = pieces("burgers", [0.0, 0.1], [[1.0], [0.5], [0.0]], horizon=0.25)
    rep = build(tr)
    rows = list(genealogy_rows(rep))
    assert len(rows) == 2 * len(tr.layers)
    assert {r["package"] for r in rows} == {p.id for p in rep.packages[0]}
