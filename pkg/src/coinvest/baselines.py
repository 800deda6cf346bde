"""Comparison methods: Pearson with a significance filter, DTW, and visibility graph + WL kernel.

Every ``*_weights`` function returns a canonical pair -> weight map that
``network.generate_network`` accepts.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import AlignedPanel, minmax_normalize

Pair = tuple[str, str]


# ----------------------------------------------------------------------
# Pearson correlation and its t-test
# ----------------------------------------------------------------------


def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(dof / 2.0, 0.5, dof / (dof + t * t))


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample correlation and its two-sided p-value (t-test, n - 2 dof)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d sequences of equal length")
    n = x.size
    if n < 3:
        raise ValueError("pearson needs at least 3 observations")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("correlation is undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, t_two_sided_p(t, n - 2)


def _feature_rows(panel: AlignedPanel, feature: str) -> np.ndarray:
    if feature not in panel.features:
        raise ValueError(f"unknown feature {feature!r}")
    return panel.values[:, panel.features.index(feature)]


def pcc_weights(panel: AlignedPanel, feature: str = "close", p_threshold: float = 0.01) -> dict[Pair, float]:
    """Pearson r for pairs significant at ``p_threshold``; -inf otherwise.

    Pairs involving a constant series are treated as insignificant.
    """
    rows = _feature_rows(panel, feature)
    idx = {s: n for n, s in enumerate(panel.symbols)}
    out = {}
    for a, b in panel.pairs():
        try:
            r, p = pearson(rows[idx[a]], rows[idx[b]])
        except ValueError:
            out[(a, b)] = -math.inf
            continue
        out[(a, b)] = r if (p < p_threshold or p_threshold >= 1.0) else -math.inf
    return out


# ----------------------------------------------------------------------
# dynamic time warping
# ----------------------------------------------------------------------


def dtw_distance(x: Sequence[float], y: Sequence[float]) -> float:
    """Unconstrained DTW with |a - b| local cost.

    Cells on each anti-diagonal only depend on the previous two, so the
    recursion is vectorised one diagonal at a time.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise ValueError("DTW needs non-empty sequences")
    n, m = x.size, y.size
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for s in range(2, n + m + 1):
        i = np.arange(max(1, s - m), min(n, s - 1) + 1)
        j = s - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = np.abs(x[i - 1] - y[j - 1]) + best
    return float(acc[n, m])


def dtw_weights(panel: AlignedPanel, feature: str = "close", normalize: bool = True) -> dict[Pair, float]:
    """1 / (d + 1) for every pair, on min-max normalized series by default."""
    if normalize:
        panel = minmax_normalize(panel)
    rows = _feature_rows(panel, feature)
    idx = {s: n for n, s in enumerate(panel.symbols)}
    return {(a, b): 1.0 / (dtw_distance(rows[idx[a]], rows[idx[b]]) + 1.0) for a, b in panel.pairs()}


# ----------------------------------------------------------------------
# visibility graphs and the Weisfeiler-Lehman subtree kernel
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SimpleGraph:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    labels: tuple[int, ...] = ()

    def __post_init__(self):
        edges = tuple(sorted({(min(a, b), max(a, b)) for a, b in self.edges}))
        for a, b in edges:
            if a == b or not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                raise ValueError(f"invalid edge ({a}, {b})")
        object.__setattr__(self, "edges", edges)
        labels = self.labels or tuple(self.degrees())
        if len(labels) != self.n_nodes or min(labels, default=0) < 0:
            raise ValueError("need one non-negative label per node")
        object.__setattr__(self, "labels", tuple(int(v) for v in labels))

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def degrees(self) -> list[int]:
        deg = [0] * self.n_nodes
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg


def visibility_graph(series: Sequence[float], rtol: float = 1e-12) -> SimpleGraph:
    """Natural visibility graph; node labels are degrees.

    Points a < b see each other when every point between them lies strictly
    below the segment joining them. Equivalently the slope from a to b must
    exceed every slope from a to an intermediate point; ``rtol`` absorbs
    rounding so collinear points block each other.
    """
    y = np.asarray(series, dtype=np.float64)
    n = y.size
    if n < 2:
        raise ValueError("visibility graph needs at least two points")
    scale = max(1.0, float(np.max(np.abs(y))))
    edges = []
    for a in range(n - 1):
        dt = np.arange(1, n - a, dtype=np.float64)
        slopes = (y[a + 1:] - y[a]) / dt
        # best slope over strictly-intermediate points, for each target b
        prior = np.concatenate(([-np.inf], np.maximum.accumulate(slopes)[:-1]))
        visible = slopes > prior + rtol * scale
        edges.extend((a, a + 1 + int(k)) for k in np.flatnonzero(visible))
    return SimpleGraph(n, tuple(edges))


def wl_histograms(graphs: Sequence[SimpleGraph], iterations: int) -> list[Counter]:
    """Label-count histograms over refinement rounds 0..iterations.

    All graphs share one relabelling table so equal labels mean equal
    rooted subtrees across graphs.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    table: dict[tuple, int] = {}
    labels = [list(g.labels) for g in graphs]
    adjs = [g.neighbors() for g in graphs]
    hists = [Counter((0, lab) for lab in ls) for ls in labels]
    for it in range(1, iterations + 1):
        for k, (ls, adj) in enumerate(zip(labels, adjs)):
            sigs = [(ls[v], tuple(sorted(ls[u] for u in adj[v]))) for v in range(len(ls))]
            new = [table.setdefault(sig, len(table)) for sig in sigs]
            labels[k] = new
            hists[k].update((it, lab) for lab in new)
    return hists


def _dot(h1: Counter, h2: Counter) -> float:
    if len(h2) < len(h1):
        h1, h2 = h2, h1
    return float(sum(c * h2.get(lab, 0) for lab, c in h1.items()))


def wl_kernel(g1: SimpleGraph, g2: SimpleGraph, iterations: int = 3) -> float:
    h1, h2 = wl_histograms([g1, g2], iterations)
    return _dot(h1, h2)


def wl_similarity(g1: SimpleGraph, g2: SimpleGraph, iterations: int = 3) -> float:
    """Cosine-normalised WL subtree kernel, in [0, 1]."""
    h1, h2 = wl_histograms([g1, g2], iterations)
    k11, k22 = _dot(h1, h1), _dot(h2, h2)
    if k11 == 0 or k22 == 0:
        return 0.0
    return _dot(h1, h2) / math.sqrt(k11 * k22)


def vwl_weights(panel: AlignedPanel, feature: str = "close", iterations: int = 3) -> dict[Pair, float]:
    rows = _feature_rows(panel, feature)
    graphs = [visibility_graph(r) for r in rows]
    hists = wl_histograms(graphs, iterations)
    norms = [math.sqrt(_dot(h, h)) for h in hists]
    idx = {s: n for n, s in enumerate(panel.symbols)}
    out = {}
    for a, b in panel.pairs():
        i, j = idx[a], idx[b]
        out[(a, b)] = _dot(hists[i], hists[j]) / (norms[i] * norms[j])
    return out
