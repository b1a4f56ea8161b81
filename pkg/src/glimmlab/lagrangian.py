"""Lagrangian bookkeeping of the waves of a finished Glimm trace.

Every wave of family ``k`` present at layer ``i`` gets a coordinate ``Phi`` in
``[L_k^-, L_k^+]``: the waves of node ``m`` occupy
``offset_m + I(s_k^{i,m})`` where ``offset_m`` is the sum of the same-sign
strengths of the nodes to the left.  Waves are never enumerated; they are kept
as intervals (segments) labelled by their birth layer and by their coordinate
at birth.  At a restart the waves of a node are split at the sampled speed,
the moving part is shifted to the next node and the two incoming pieces are
placed side by side in the merge coordinate ``xi``: the left piece on
``I(s')`` and the right piece on ``s' + I(s'')``.  The waves that survive are
those whose ``xi`` lies in ``I(s'+s'') & I(s)``; they keep ``xi`` as their new
local coordinate.  The part of ``I(s)`` not covered by ``I(s'+s'')`` is made of
new waves, which therefore sit at the far (fast) end of the node.

A wave package is a maximal set of waves sharing the birth layer and the whole
position history.  Packages are the finite objects on which the interaction
potential is evaluated.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envelope import SampledFunction
from .errors import BookkeepingError

TINY = 1e-13        # segments shorter than this are dropped
BALANCE_TOL = 1e-9  # tolerance of every measure identity
SNAP = 5e-13        # label breakpoints closer than this are identified


def _I(x: float):
    return (min(0.0, x), max(0.0, x))


def _clip(segs, a: float, b: float, shift: float = 0.0):
    out = []
    for lo, hi, c, beta in segs:
        l, h = max(lo, a), min(hi, b)
        if h - l > TINY:
            out.append((l + shift, h + shift, c, beta + (l - lo)))
    return out


def _measure(segs) -> float:
    return float(sum(hi - lo for lo, hi, _, _ in segs))


@dataclass
class NodeWaves:
    """Waves of one family at one node: strength, Phi offset and segments.

    Segments are tuples ``(lo, hi, birth, beta)`` in local coordinates with
    ``lo < hi``; ``beta`` is the birth label of the wave at ``lo``.
    """
    m: int
    s: float
    offset: float
    segs: list

    def phi(self, tau):
        return self.offset + np.asarray(tau)


@dataclass
class WavePackage:
    """Waves with common birth layer and common position history."""
    id: int
    family: int
    sign: int
    birth: int
    death: Optional[int]
    positions: np.ndarray
    phi: np.ndarray
    speeds: np.ndarray

    @property
    def measure(self) -> float:
        return float(self.phi[0, 1] - self.phi[0, 0])

    @property
    def last(self) -> int:
        return self.birth + len(self.positions) - 1

    def alive(self, i: int) -> bool:
        return self.birth <= i <= self.last

    def position(self, i: int) -> int:
        return int(self.positions[i - self.birth])

    def interval(self, i: int):
        return tuple(self.phi[i - self.birth])

    def to_dict(self) -> dict:
        return {"id": self.id, "family": self.family, "sign": self.sign, "birth": self.birth,
                "death": self.death, "positions": self.positions.tolist(),
                "phi": self.phi.tolist(), "speeds": self.speeds.tolist()}


@dataclass
class LagrangianRep:
    trace: object
    nodes: list             # nodes[k][i] = {m: NodeWaves}
    L_plus: np.ndarray      # (n, layers)
    L_minus: np.ndarray
    packages: list          # packages[k] = list of WavePackage
    balance: list           # one record per (layer, node, family) transition
    violations: dict = field(default_factory=dict)
    _flux: dict = field(default_factory=dict)
    _order: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def nlayers(self) -> int:
        return len(self.nodes[0]) if self.nodes else 0

    def layer_packages(self, k: int, i: int):
        """Packages of family ``k`` alive at layer ``i`` ordered by Phi."""
        key = (k, i)
        if key not in self._order:
            alive = [p for p in self.packages[k] if p.alive(i)]
            alive.sort(key=lambda p: p.interval(i)[0])
            self._order[key] = alive
        return self._order[key]

    def is_empty(self) -> bool:
        return all(len(p) == 0 for p in self.packages)

    def total_violations(self) -> int:
        return int(sum(self.violations.values()))


# ---------------------------------------------------------------------------
# construction

def _offsets(strengths: dict) -> dict:
    off, pos, neg = {}, 0.0, 0.0
    for m in sorted(strengths):
        s = strengths[m]
        if s > 0:
            off[m], pos = pos, pos + s
        elif s < 0:
            off[m], neg = neg, neg + s
    return off


def _layer_strengths(layer, k: int) -> dict:
    return {m: float(f.strengths[k]) for m, f in layer.fans.items() if f.strengths[k] != 0}


def _initial_nodes(layer, k: int) -> dict:
    st = _layer_strengths(layer, k)
    off = _offsets(st)
    out = {}
    for m, s in st.items():
        lo, hi = _I(s)
        out[m] = NodeWaves(m, s, off[m], [(lo, hi, 0, off[m] + lo)])
    return out


def _cut(split, k: int, S: float) -> float:
    fam, cut = split
    if k < fam:
        return S
    if k == fam:
        return float(cut)
    return 0.0


def _transition(old: dict, layer, i: int, k: int, violations: dict, balance: list) -> dict:
    stay, move, s_stay, s_move, base = {}, {}, {}, {}, {}
    for m, nw in old.items():
        c = _cut(layer.splits[m], k, nw.s)
        stay[m] = _clip(nw.segs, *_I(c))
        move[m + 1] = _clip(nw.segs, min(c, nw.s), max(c, nw.s), shift=-c)
        s_stay[m], s_move[m + 1] = c, nw.s - c
        base[m] = nw.offset
    st = _layer_strengths(layer, k)
    off = _offsets(st)
    new = {}
    for m in sorted(set(stay) | set(move) | set(st)):
        s1, s2 = s_move.get(m, 0.0), s_stay.get(m, 0.0)
        left, right = move.get(m, []), _clip(stay.get(m, []), -np.inf, np.inf, shift=s1)
        s = st.get(m, 0.0)
        tot = s1 + s2
        Is, It = _I(s), _I(tot)
        a1 = (max(_I(s1)[0], It[0], Is[0]), min(_I(s1)[1], It[1], Is[1]))
        a2 = (max(s1 + _I(s2)[0], It[0], Is[0]), min(s1 + _I(s2)[1], It[1], Is[1]))
        surv = _clip(left, *a1) + _clip(right, *a2)
        if s * tot > 0:
            cr = (min(tot, s), max(tot, s)) if abs(s) > abs(tot) else None
        else:
            cr = Is if s != 0 else None
        created = []
        if cr is not None and cr[1] - cr[0] > TINY:
            created = [(cr[0], cr[1], i, off[m] + cr[0])]
        segs = sorted(surv + created)
        inc = _measure(left) + _measure(right)
        n_surv, n_cr = _measure(surv), _measure(created)
        rec = {"layer": i, "node": m, "family": k, "s_left": s1, "s_right": s2, "s": s,
               "incoming": inc, "survived": n_surv, "created": n_cr,
               "cancelled": inc - n_surv, "sign": float(np.sign(s))}
        # internal identities
        if abs(inc - abs(s1) - abs(s2)) > BALANCE_TOL or abs(n_surv + n_cr - abs(s)) > BALANCE_TOL:
            violations["measure"] += 1
        led = layer.ledgers.get(m)
        if led is not None:
            rec["ledger_created"] = float(led.created[k])
            rec["ledger_cancelled"] = float(2 * led.A_canc[k] + led.removed[k])
            if abs(n_cr - rec["ledger_created"]) > BALANCE_TOL or \
                    abs(inc - n_surv - rec["ledger_cancelled"]) > BALANCE_TOL:
                violations["ledger"] += 1
        # survivors are moved by one common translation
        shifts = []
        if m - 1 in base:
            c_prev = s_stay[m - 1]
            shifts += [(off.get(m, 0.0) + lo) - (base[m - 1] + c_prev + lo)
                       for lo, _, _, _ in _clip(left, *a1)]
        if m in base:
            shifts += [(off.get(m, 0.0) + lo) - (base[m] + lo - s1)
                       for lo, _, _, _ in _clip(right, *a2)]
        if shifts and max(shifts) - min(shifts) > BALANCE_TOL:
            violations["affine"] += 1
        if shifts:
            rec["shift"] = float(shifts[0])
        balance.append(rec)
        if s != 0:
            new[m] = NodeWaves(m, s, off[m], segs)
        elif segs:
            violations["measure"] += 1
    return new


def _check_order(nodes: dict, violations: dict):
    """Positive and negative Phi images tile ``I(L+)`` and ``I(L-)``."""
    pos, neg = [], []
    for m in sorted(nodes):
        nw = nodes[m]
        for lo, hi, _, _ in nw.segs:
            (pos if nw.s > 0 else neg).append((nw.offset + lo, nw.offset + hi, m))
    pos.sort()
    neg.sort(reverse=True)
    ok = True
    edge = 0.0
    for lo, hi, m in pos:
        ok &= abs(lo - edge) <= BALANCE_TOL
        edge = hi
    # positive waves ordered left to right as Phi increases
    ok &= all(pos[j][2] <= pos[j + 1][2] for j in range(len(pos) - 1))
    edge = 0.0
    for lo, hi, m in neg:
        ok &= abs(hi - edge) <= BALANCE_TOL
        edge = lo
    ok &= all(neg[j][2] <= neg[j + 1][2] for j in range(len(neg) - 1))
    if not ok:
        violations["order"] += 1


def _merge_breaks(x: np.ndarray) -> np.ndarray:
    x = np.sort(x)
    keep = np.concatenate([[True], np.diff(x) > 2 * SNAP])
    return x[keep]


def _nearest(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    j = np.clip(np.searchsorted(x, v), 1, max(len(x) - 1, 1))
    if len(x) < 2:
        return np.zeros(len(v), dtype=int)
    return np.where(np.abs(v - x[j - 1]) <= np.abs(x[j] - v), j - 1, j)


def _speed_range(curve, lo: float, hi: float):
    a, b, sig = curve.speed_intervals()
    sel = (a < hi - 1e-12) & (b > lo + 1e-12)
    if not np.any(sel):
        j = int(np.clip(np.searchsorted(b, lo), 0, len(sig) - 1)) if len(sig) else 0
        v = float(sig[j]) if len(sig) else float(curve.lam0)
        return v, v
    return float(np.min(sig[sel])), float(np.max(sig[sel]))


def _packages(trace, nodes_k: list, k: int, start_id: int):
    nl = len(nodes_k)
    rec = defaultdict(list)
    for i, layer_nodes in enumerate(nodes_k):
        for m, nw in layer_nodes.items():
            for lo, hi, c, beta in nw.segs:
                # waves below the snapping width cannot delimit an atom
                if hi - lo > 2 * SNAP:
                    rec[c].append((i, m, beta, hi - lo, nw.offset + lo))
    out = []
    pid = start_id
    for c in sorted(rec):
        R = np.array(rec[c], dtype=float)
        li, mm, beta, ln, phi0 = R.T
        li, mm = li.astype(int), mm.astype(int)
        bps = _merge_breaks(np.concatenate([beta, beta + ln]))
        na = len(bps) - 1
        hist = np.full((na, nl), -1, dtype=np.int64)
        phi = np.full((na, nl), np.nan)
        # labels drift by round-off through the layer shifts: snap every
        # segment end to the nearest breakpoint
        j0 = _nearest(bps, beta)
        j1 = _nearest(bps, beta + ln)
        for r in range(len(li)):
            js = np.arange(j0[r], j1[r])
            hist[js, li[r]] = mm[r]
            phi[js, li[r]] = phi0[r] + (bps[js] - beta[r])
        width = np.diff(bps)
        covered = hist[:, c] >= 0
        a = 0
        while a < na:
            if not covered[a]:
                a += 1
                continue
            b = a + 1
            while b < na and covered[b] and np.array_equal(hist[b], hist[a]):
                b += 1
            alive = np.nonzero(hist[a] >= 0)[0]
            first, last = int(alive[0]), int(alive[-1])
            if not np.all(hist[a, first:last + 1] >= 0):
                raise BookkeepingError("wave package reappears after cancellation",
                                       family=k, birth=c)
            meas = float(np.sum(width[a:b]))
            lo = phi[a, first:last + 1]
            ph = np.stack([lo, lo + meas], axis=1)
            pos = hist[a, first:last + 1].copy()
            sign = 1 if ph[0, 0] >= 0 else -1
            sp = np.zeros((len(pos), 2))
            for t, i in enumerate(range(first, last + 1)):
                nw = nodes_k[i][int(pos[t])]
                curve = trace.layers[i].fans[int(pos[t])].curves[k]
                sp[t] = _speed_range(curve, ph[t, 0] - nw.offset, ph[t, 1] - nw.offset)
            death = last + 1 if last + 1 < nl else None
            out.append(WavePackage(pid, k, sign, c, death, pos, ph, sp))
            pid += 1
            a = b
    return out


def _check_positions(trace, packages, violations: dict):
    thetas = [layer.theta for layer in trace.layers]
    for p in packages:
        for t in range(1, len(p.positions)):
            i = p.birth + t
            d = int(p.positions[t] - p.positions[t - 1])
            lo, hi = p.speeds[t - 1]
            if d == 1:
                ok = lo > thetas[i]
            elif d == 0:
                ok = hi <= thetas[i]
            else:
                ok = False
            if not ok:
                violations["positions"] += 1


def build(trace) -> LagrangianRep:
    """Construct the Lagrangian representation of a finished trace."""
    n = trace.n
    nl = len(trace.layers)
    violations = defaultdict(int)
    for key in ("measure", "ledger", "affine", "order", "positions"):
        violations[key] = 0
    balance: list = []
    nodes = []
    for k in range(n):
        seq = [_initial_nodes(trace.layers[0], k)]
        for i in range(1, nl):
            seq.append(_transition(seq[-1], trace.layers[i], i, k, violations, balance))
        for layer_nodes in seq:
            _check_order(layer_nodes, violations)
        nodes.append(seq)
    Lp = np.zeros((n, nl))
    Lm = np.zeros((n, nl))
    for k in range(n):
        for i in range(nl):
            for nw in nodes[k][i].values():
                if nw.s > 0:
                    Lp[k, i] += nw.s
                else:
                    Lm[k, i] += nw.s
    packages, pid = [], 0
    for k in range(n):
        pk = _packages(trace, nodes[k], k, pid)
        pid += len(pk)
        _check_positions(trace, pk, violations)
        packages.append(pk)
    rep = LagrangianRep(trace, nodes, Lp, Lm, packages, balance, dict(violations))
    _check_layer_balance(rep)
    return rep


def _check_layer_balance(rep: LagrangianRep):
    """``L^+`` and ``L^-`` change by created minus cancelled measure."""
    per = defaultdict(lambda: np.zeros(4))
    for r in rep.balance:
        acc = per[(r["family"], r["layer"])]
        sl, sr = r["s_left"], r["s_right"]
        # cancelled waves carry the sign of their piece
        lost = {1: 0.0, -1: 0.0}
        for piece in (sl, sr):
            if piece != 0:
                lost[int(np.sign(piece))] += abs(piece)
        if r["s"] > 0:
            lost[1] -= r["survived"]
            acc[0] += r["created"]
        elif r["s"] < 0:
            lost[-1] -= r["survived"]
            acc[2] += r["created"]
        acc[1] += lost[1]
        acc[3] += lost[-1]
    bad = 0
    for (k, i), (cp, xp, cm, xm) in per.items():
        dp = rep.L_plus[k, i] - rep.L_plus[k, i - 1]
        dm = -(rep.L_minus[k, i] - rep.L_minus[k, i - 1])
        if abs(dp - (cp - xp)) > BALANCE_TOL or abs(dm - (cm - xm)) > BALANCE_TOL:
            bad += 1
    rep.violations["global_balance"] = bad


# ---------------------------------------------------------------------------
# queries

def packages_at(rep: LagrangianRep, i: int, m: int, k: Optional[int] = None) -> list:
    """Packages located at node ``m`` of layer ``i``, ordered by Phi.

    All the packages of one family at one node carry the same sign.
    """
    fams = range(rep.n) if k is None else [k]
    out = []
    for h in fams:
        here = [p for p in rep.layer_packages(h, i) if p.position(i) == m]
        if len({p.sign for p in here}) > 1:
            raise BookkeepingError("packages of both signs at one node", layer=i, node=m, family=h)
        if here and here[0].sign < 0:
            here = here[::-1]
        out += here
    return out


def _endpoint_slopes(model, curve):
    """Exact eigenvalues at the two ends, ordered by increasing tau."""
    l0 = float(model.lam_r(curve.u[0], curve.k)[0])
    l1 = float(model.lam_r(curve.u[-1], curve.k)[0])
    return (l0, l1) if curve.s > 0 else (l1, l0)


def effective_flux(rep: LagrangianRep, k: int, i: int) -> SampledFunction:
    """Effective flux of family ``k`` at layer ``i`` on ``[L^-, L^+]``.

    Each node contributes its reduced flux, translated to its Phi interval and
    corrected by an affine function so that the derivative is continuous
    across node junctions.  The gauge is ``f(L^-) = 0`` and ``f'(L^-) = 0``.
    """
    key = (k, i)
    if key in rep._flux:
        return rep._flux[key]
    trace = rep.trace
    nodes = rep.nodes[k][i]
    order = sorted((nw for nw in nodes.values()), key=lambda nw: nw.offset + _I(nw.s)[0])
    xs, ys = [], []
    val, slope = 0.0, 0.0
    for nw in order:
        curve = trace.layers[i].fans[nw.m].curves[k]
        g = curve.flux_function()
        d0, d1 = _endpoint_slopes(trace.model, curve)
        # chain each node on the previous end so round-off cannot reorder nodes
        start = float(xs[-1][-1]) if xs else nw.offset + float(g.nodes[0])
        x = g.nodes - g.nodes[0] + start
        y = g.values - g.values[0] + (slope - d0) * (g.nodes - g.nodes[0]) + val
        if xs:
            x, y = x[1:], y[1:]
        xs.append(x)
        ys.append(y)
        val = float(y[-1]) if len(y) else val
        slope = slope + (d1 - d0)
    if not xs:
        f = SampledFunction(np.zeros(1), np.zeros(1))
    else:
        x, y = np.concatenate(xs), np.concatenate(ys)
        # waves of round-off size collapse onto repeated nodes
        keep = np.concatenate(([True], np.diff(x) > 0))
        f = SampledFunction(x[keep], y[keep])
    rep._flux[key] = f
    return f


def rep_summary(rep: LagrangianRep) -> dict:
    return {"families": rep.n, "layers": rep.nlayers,
            "packages": [len(p) for p in rep.packages],
            "L_plus": rep.L_plus.tolist(), "L_minus": rep.L_minus.tolist(),
            "violations": dict(rep.violations)}


def genealogy_rows(rep: LagrangianRep):
    """One row per (package, layer) for CSV export."""
    eps = rep.trace.eps
    for pk in rep.packages:
        for p in pk:
            for t, pos in enumerate(p.positions):
                i = p.birth + t
                yield {"package": p.id, "family": p.family, "sign": p.sign, "birth": p.birth,
                       "death": "" if p.death is None else p.death, "layer": i,
                       "time": i * eps, "node": int(pos), "x": rep.trace.x0 + int(pos) * eps,
                       "phi_lo": p.phi[t, 0], "phi_hi": p.phi[t, 1],
                       "speed_lo": p.speeds[t, 0], "speed_hi": p.speeds[t, 1]}
