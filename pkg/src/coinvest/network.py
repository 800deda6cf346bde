"""Edge weights from trained gate parameters and top-fraction graph generation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

GATE_NAMES = {"i": "input gate", "g": "input representation", "o": "output gate", "f": "forget gate"}

Pair = tuple[str, str]


class NetworkFormatError(ValueError):
    pass


@dataclass
class CoInvestNetwork:
    nodes: list[str]
    edges: list[tuple[str, str, float]]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        order = {s: n for n, s in enumerate(self.nodes)}
        if len(order) != len(self.nodes):
            raise NetworkFormatError("duplicate node names")
        seen = set()
        for a, b, _ in self.edges:
            if a == b:
                raise NetworkFormatError(f"self-loop on {a!r}")
            if a not in order or b not in order:
                raise NetworkFormatError(f"edge ({a}, {b}) references an unknown node")
            if order[a] > order[b]:
                raise NetworkFormatError(f"edge ({a}, {b}) is not in canonical node order")
            if (a, b) in seen:
                raise NetworkFormatError(f"duplicate edge ({a}, {b})")
            seen.add((a, b))

    def adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {s: set() for s in self.nodes}
        for a, b, _ in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    def degree(self) -> dict[str, int]:
        return {s: len(n) for s, n in self.adjacency().items()}

    def edge_set(self) -> set[frozenset]:
        return {frozenset((a, b)) for a, b, _ in self.edges}


def parse_gates(gates: str | Iterable[str]) -> tuple[str, ...]:
    chosen = tuple(dict.fromkeys(gates))
    if not chosen or set(chosen) - set(GATE_NAMES):
        raise ValueError(f"gate selection must be a non-empty subset of 'igof', got {gates!r}")
    return chosen


def extract_weights(model, gates: str | Iterable[str] = "igo", absolute: bool = False) -> dict[Pair, float]:
    """Per-pair sum of first-layer input-to-gate weights.

    For pair p the columns p*K .. p*K+K-1 of each selected W^{i*} matrix are
    summed over all hidden units. ``absolute`` sums magnitudes instead of
    signed values.
    """
    chosen = parse_gates(gates)
    if model.optimizer is None or model.optimizer.t == 0:
        raise ValueError("model has not been trained")
    layer = model.layers[0]
    P, K = len(model.pairs), model.config.n_patterns
    total = np.zeros(P)
    for g in chosen:
        w = layer.w_in[g].value
        if absolute:
            w = np.abs(w)
        total += w.reshape(w.shape[0], P, K).sum(axis=(0, 2))
    return {pair: float(v) for pair, v in zip(model.pairs, total)}


def generate_network(weights: Mapping[Pair, float], gamma: float, nodes: Sequence[str],
                     metadata: dict | None = None) -> CoInvestNetwork:
    """Keep the ceil(gamma * P) heaviest pairs as edges.

    Ties go to the pair earlier in canonical node order. Pairs weighted
    -inf are never selected, so a filtered map can yield fewer edges.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    order = {s: n for n, s in enumerate(nodes)}
    n = len(order)
    P = n * (n - 1) // 2
    canon = {}
    for (a, b), w in weights.items():
        if a not in order or b not in order or a == b:
            raise ValueError(f"weight for unknown or degenerate pair ({a}, {b})")
        key = (a, b) if order[a] < order[b] else (b, a)
        canon[key] = float(w)
    if len(canon) != P:
        raise ValueError(f"weights cover {len(canon)} of {P} pairs")
    count = math.ceil(gamma * P - 1e-9)
    ranked = sorted(canon.items(), key=lambda kv: (-kv[1], order[kv[0][0]], order[kv[0][1]]))
    edges = [(a, b, w) for (a, b), w in ranked[:count] if w != -math.inf]
    edges.sort(key=lambda e: (order[e[0]], order[e[1]]))
    meta = {"gamma": gamma, **(metadata or {})}
    return CoInvestNetwork(list(nodes), edges, meta)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_network(net: CoInvestNetwork, path) -> None:
    """Edge list CSV ``source,target,weight`` plus a JSON sidecar with nodes and metadata."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target", "weight"])
        for a, b, wt in net.edges:
            w.writerow([a, b, repr(float(wt))])
    _sidecar(path).write_text(json.dumps({"nodes": net.nodes, "metadata": net.metadata}, indent=2, sort_keys=True))


def load_network(path) -> CoInvestNetwork:
    path = Path(path)
    try:
        side = json.loads(_sidecar(path).read_text())
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["source", "target", "weight"]:
                raise NetworkFormatError(f"{path}: bad header {header}")
            edges = []
            for row_no, row in enumerate(reader, start=1):
                if len(row) != 3:
                    raise NetworkFormatError(f"{path}: row {row_no} has {len(row)} fields")
                if row[0] == row[1]:
                    raise NetworkFormatError(f"{path}: row {row_no} is a self-loop on {row[0]!r}")
                edges.append((row[0], row[1], float(row[2])))
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, NetworkFormatError):
            raise
        raise NetworkFormatError(f"cannot read network {path}: {exc}") from exc
    return CoInvestNetwork(list(side["nodes"]), edges, side.get("metadata", {}))
