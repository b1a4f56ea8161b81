"""Convex and concave envelopes of sampled scalar functions.

The envelopes are taken over the node set of a piecewise linear function, so
for a polygon they are exact.  Every other module builds on this layer: wave
speeds are envelope slopes, cubic and quadratic interaction amounts are
envelope differences, and the entropic partitions of the wave bookkeeping are
read off the envelope vertices.

The hull routine is written against plain Python sequences so that it also
runs on ``fractions.Fraction`` input, which the test-suite uses to compare
against an exact brute force.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateRangeError, GridMismatchError

CONTACT_RTOL = 1e-10


def lower_hull(x: Sequence, y: Sequence) -> list:
    """Indices of the vertices of the lower convex hull (monotone chain).

    The pop criterion compares the two chord slopes directly, so the slopes
    recomputed from the returned vertices are strictly increasing with no
    tolerance involved.
    """
    hull: list = []
    for j in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            left = (y[b] - y[a]) / (x[b] - x[a])
            right = (y[j] - y[b]) / (x[j] - x[b])
            if left >= right:
                hull.pop()
            else:
                break
        hull.append(j)
    return hull


def hull_values(x: Sequence, y: Sequence, vertices: Sequence):
    """Evaluate the hull through ``vertices`` at every node.

    Returns ``(values, slopes)`` where ``slopes[j]`` is the slope on the
    segment ``[x[j], x[j+1]]``.
    """
    n = len(x)
    vals = [None] * n
    slopes = [None] * (n - 1)
    for a, b in zip(vertices[:-1], vertices[1:]):
        sl = (y[b] - y[a]) / (x[b] - x[a])
        vals[a] = y[a]
        for j in range(a + 1, b):
            vals[j] = y[a] + sl * (x[j] - x[a])
        for j in range(a, b):
            slopes[j] = sl
    vals[vertices[-1]] = y[vertices[-1]]
    return vals, slopes


@dataclass
class EnvelopeResult:
    """Envelope of a sampled function on a node range.

    Attributes
    ----------
    nodes : abscissae of the range
    hull : envelope values at the nodes
    slopes : envelope slope on each inter-node segment
    contact : True where the envelope touches the function
    vertices : indices (relative to the range) of the hull vertices
    convex : True for the convex (lower) envelope
    """
    nodes: np.ndarray
    hull: np.ndarray
    slopes: np.ndarray
    contact: np.ndarray
    vertices: np.ndarray
    convex: bool = True


@dataclass
class SampledFunction:
    """Piecewise linear function given by its values on increasing nodes.

    ``dleft``/``dright`` optionally hold the derivative of the underlying
    smooth function at the two endpoints; they are used by ``sigma_rh`` when
    the interval degenerates to a point.
    """
    nodes: np.ndarray
    values: np.ndarray
    dleft: Optional[float] = None
    dright: Optional[float] = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.nodes.ndim != 1 or self.nodes.shape != self.values.shape:
            raise DegenerateRangeError("nodes and values must be 1-d arrays of equal length")
        if self.nodes.size < 1:
            raise DegenerateRangeError("a sampled function needs at least one node")
        if self.nodes.size > 1 and not np.all(np.diff(self.nodes) > 0):
            raise DegenerateRangeError("nodes must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DegenerateRangeError("values must be finite")

    @classmethod
    def from_callable(cls, g: Callable, nodes, dg: Optional[Callable] = None):
        nodes = np.asarray(nodes, dtype=float)
        vals = np.array([g(t) for t in nodes], dtype=float)
        dl = dr = None
        if dg is not None:
            dl, dr = float(dg(nodes[0])), float(dg(nodes[-1]))
        return cls(nodes, vals, dl, dr)

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    def __call__(self, t):
        return np.interp(t, self.nodes, self.values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.nodes)

    def derivative_at(self, t: float) -> float:
        """Right-segment slope at ``t`` (left segment at the final node)."""
        if self.nodes.size == 1:
            if self.dleft is None:
                raise DegenerateRangeError("derivative of a one-node function is undefined")
            return float(self.dleft)
        sl = self.slopes()
        j = int(np.searchsorted(self.nodes, t, side="right")) - 1
        j = min(max(j, 0), sl.size - 1)
        return float(sl[j])

    def restrict(self, lo: float, hi: float) -> "SampledFunction":
        """Restriction to ``[lo, hi]``, inserting interpolated endpoints."""
        lo, hi = float(lo), float(hi)
        if hi < lo:
            lo, hi = hi, lo
        tol = 1e-14 * max(1.0, abs(lo), abs(hi))
        if lo < self.a - tol or hi > self.b + tol:
            raise DegenerateRangeError(
                "restriction range outside the domain", lo=lo, hi=hi, a=self.a, b=self.b)
        lo, hi = max(lo, self.a), min(hi, self.b)
        inner = (self.nodes > lo) & (self.nodes < hi)
        xs = np.concatenate(([lo], self.nodes[inner], [hi])) if hi > lo else np.array([lo])
        return SampledFunction(xs, self(xs))

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> "SampledFunction":
        return SampledFunction(self.nodes + dx, self.values + dy, self.dleft, self.dright)

    def mirrored(self) -> "SampledFunction":
        """The function ``t -> -g(-t)``; swaps convex and concave envelopes."""
        return SampledFunction(-self.nodes[::-1], -self.values[::-1], self.dright, self.dleft)

    def hull_function(self, convex: bool = True, lo=None, hi=None) -> "SampledFunction":
        """Envelope on ``[lo, hi]`` as a new sampled function."""
        g = self if lo is None and hi is None else self.restrict(
            self.a if lo is None else lo, self.b if hi is None else hi)
        if g.nodes.size == 1:
            return g
        env = convex_envelope(g) if convex else concave_envelope(g)
        return SampledFunction(g.nodes, env.hull)


def _range(g: SampledFunction, sub_range):
    lo, hi = (0, g.nodes.size - 1) if sub_range is None else sub_range
    if lo < 0 or hi > g.nodes.size - 1 or hi - lo < 1:
        raise DegenerateRangeError(
            "envelope needs at least two nodes in range", lo=lo, hi=hi, size=int(g.nodes.size))
    return lo, hi


def _envelope(g: SampledFunction, sub_range, convex: bool) -> EnvelopeResult:
    lo, hi = _range(g, sub_range)
    x = g.nodes[lo:hi + 1].tolist()
    y = g.values[lo:hi + 1].tolist()
    yy = y if convex else [-v for v in y]
    vert = lower_hull(x, yy)
    vals, slopes = hull_values(x, yy, vert)
    vals = np.array(vals, dtype=float)
    slopes = np.array(slopes, dtype=float)
    if not convex:
        vals, slopes = -vals, -slopes
    yv = np.array(y)
    scale = float(np.ptp(yv)) if yv.size else 0.0
    gap = (yv - vals) if convex else (vals - yv)
    contact = gap <= CONTACT_RTOL * max(scale, 1e-300)
    return EnvelopeResult(np.array(x), vals, slopes, contact, np.array(vert), convex)


def convex_envelope(g: SampledFunction, sub_range=None) -> EnvelopeResult:
    """Lower convex envelope of ``g`` on the index range ``sub_range`` (inclusive)."""
    return _envelope(g, sub_range, True)


def concave_envelope(g: SampledFunction, sub_range=None) -> EnvelopeResult:
    """Upper concave envelope of ``g`` on the index range ``sub_range`` (inclusive)."""
    return _envelope(g, sub_range, False)


def sigma_rh(g, a: float, b: Optional[float] = None, dg: Optional[Callable] = None) -> float:
    """Secant (Rankine-Hugoniot) speed of ``g`` on ``[a, b]``.

    ``g`` may be a ``SampledFunction`` or a plain callable.  When ``b`` is
    omitted or equal to ``a`` the derivative is returned: from ``dg`` if given,
    otherwise from the stored endpoint derivatives or the right-segment slope.
    """
    if b is None or b == a:
        if dg is not None:
            return float(dg(a))
        if isinstance(g, SampledFunction):
            if a == g.a and g.dleft is not None:
                return float(g.dleft)
            if a == g.b and g.dright is not None:
                return float(g.dright)
            return g.derivative_at(a)
        raise DegenerateRangeError("singleton interval needs a derivative")
    if b < a:
        a, b = b, a
    return float((g(b) - g(a)) / (b - a))


def envelope_distance_checks(g: SampledFunction, h: SampledFunction, rtol: float = 1e-9) -> dict:
    """Compare envelope-derivative distances with raw-derivative distances.

    Both the sup and the L1 distance between the derivatives of the convex
    envelopes are bounded by the corresponding distance between the
    derivatives of the functions themselves.
    """
    if g.nodes.shape != h.nodes.shape or not np.allclose(g.nodes, h.nodes, rtol=0, atol=1e-14):
        raise GridMismatchError("functions must share the node grid")
    dx = np.diff(g.nodes)
    cg = convex_envelope(g).slopes
    ch = convex_envelope(h).slopes
    env_diff = np.abs(cg - ch)
    raw_diff = np.abs(g.slopes() - h.slopes())
    rep = {
        "env_sup": float(env_diff.max()),
        "env_l1": float(np.sum(env_diff * dx)),
        "raw_sup": float(raw_diff.max()),
        "raw_l1": float(np.sum(raw_diff * dx)),
    }
    scale = 1.0 + max(rep["raw_sup"], float(np.abs(g.slopes()).max()))
    rep["sup_holds"] = rep["env_sup"] <= rep["raw_sup"] + rtol * scale
    rep["l1_holds"] = rep["env_l1"] <= rep["raw_l1"] + rtol * scale * float(np.sum(dx))
    return rep
