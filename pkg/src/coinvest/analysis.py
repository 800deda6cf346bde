"""Graph metrics over co-investment networks: density, hubs, components, distances, coverage."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .network import CoInvestNetwork

logger = logging.getLogger(__name__)


def to_networkx(net: CoInvestNetwork) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(net.nodes)
    g.add_weighted_edges_from(net.edges)
    return g


def edge_density(net: CoInvestNetwork, subset: Iterable[str]) -> float:
    """Share of possible edges present inside ``subset`` (restricted to the net's nodes)."""
    members = set(subset) & set(net.nodes)
    s = len(members)
    if s < 2:
        raise ValueError(f"only {s} subset node(s) are in the network; need 2")
    inside = sum(1 for a, b, _ in net.edges if a in members and b in members)
    return 2.0 * inside / (s * (s - 1))


@dataclass(frozen=True)
class TopDegree:
    tickers: list[str]
    truncated: bool  # k exceeded the node count


def top_degree(net: CoInvestNetwork, k: int) -> TopDegree:
    """The k highest-degree nodes; ties go to the alphabetically earlier ticker."""
    if not net.nodes:
        raise ValueError("empty network")
    deg = net.degree()
    ranked = sorted(deg, key=lambda s: (-deg[s], s))
    if k > len(ranked):
        logger.warning("asked for %d top nodes but the network has %d", k, len(ranked))
    return TopDegree(ranked[:k], k > len(ranked))


@dataclass(frozen=True)
class Influence:
    mean: float
    std: float
    missing: tuple[str, ...] = ()


def influence(tickers: Sequence[str], caps: Mapping[str, float]) -> Influence:
    """Mean and population std of market caps; tickers without a cap are skipped and reported."""
    missing = tuple(t for t in tickers if t not in caps)
    vals = np.array([caps[t] for t in tickers if t in caps], dtype=np.float64)
    if vals.size == 0:
        raise ValueError("none of the tickers has a market cap")
    return Influence(float(vals.mean()), float(vals.std()), missing)


def largest_component(net: CoInvestNetwork) -> CoInvestNetwork:
    """Induced subgraph on the biggest connected node set.

    Equal-size components are ranked by their alphabetically smallest node.
    """
    if not net.nodes:
        return CoInvestNetwork([], [], dict(net.metadata))
    comps = list(nx.connected_components(to_networkx(net)))
    best = min(comps, key=lambda c: (-len(c), min(c)))
    nodes = [s for s in net.nodes if s in best]
    edges = [e for e in net.edges if e[0] in best]
    return CoInvestNetwork(nodes, edges, dict(net.metadata))


@dataclass(frozen=True)
class DistanceSummary:
    mean: float
    std: float
    observed: int
    skipped: int


def avg_distance(nets: Sequence[CoInvestNetwork], u: str, v: str) -> DistanceSummary:
    """Hop distance between u and v averaged over the networks where both are connected."""
    if u == v:
        raise ValueError("need two different tickers")
    dists = []
    for net in nets:
        g = to_networkx(net)
        if u in g and v in g and nx.has_path(g, u, v):
            dists.append(nx.shortest_path_length(g, u, v))
    if not dists:
        raise ValueError(f"no observations: {u} and {v} are never connected in the same network")
    arr = np.asarray(dists, dtype=np.float64)
    return DistanceSummary(float(arr.mean()), float(arr.std()), len(dists), len(nets) - len(dists))


def coverage(net: CoInvestNetwork, watchlist: Sequence[str]) -> float:
    """Fraction of the watchlist appearing on at least one edge."""
    if not watchlist:
        raise ValueError("empty watchlist")
    touched = {a for a, _, _ in net.edges} | {b for _, b, _ in net.edges}
    wanted = list(dict.fromkeys(watchlist))
    return sum(t in touched for t in wanted) / len(wanted)


def read_caps(path) -> dict[str, float]:
    """Market caps from a ``symbol,cap_usd_bn`` CSV."""
    caps = {}
    with Path(path).open(newline="") as fh:
        for row_no, row in enumerate(csv.DictReader(fh), start=1):
            cap = float(row["cap_usd_bn"])
            if cap <= 0:
                raise ValueError(f"{path}: row {row_no}: market cap must be positive")
            caps[row["symbol"].strip()] = cap
    return caps


def read_watchlist(path) -> list[str]:
    lines = Path(path).read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
