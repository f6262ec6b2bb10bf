"""Instance representation: type graphs, raw edge-list graphs and their I/O.

A :class:`TypeGraph` is the bipartite graph between online vertex *types*
and offline vertices, together with the Poisson arrival rate of every type
and (optionally) positive edge weights.  A :class:`RawGraph` is a general
undirected graph as read from a dataset file; :func:`duplicate_transform`
turns it into a type graph by putting a copy of every vertex on each side.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

__all__ = [
    "GraphParseError",
    "GraphValidationError",
    "RawGraph",
    "TypeGraph",
    "parse_edge_list",
    "read_edge_list",
    "serialize_edge_list",
    "duplicate_transform",
    "validate",
    "random_type_graph",
    "load_type_graph",
    "save_type_graph",
]


class GraphParseError(ValueError):
    """Malformed record in an edge-list file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class GraphValidationError(ValueError):
    pass


@dataclass(frozen=True)
class RawGraph:
    """Undirected simple graph on vertices ``0..n-1``.

    ``edges`` holds pairs ``(u, v)`` with ``u < v`` in sorted order.  ``labels``
    maps each dense index back to the label found in the input file.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...] | None = None
    labels: tuple[int, ...] | None = None
    self_loops_dropped: int = 0
    duplicates_dropped: int = 0

    @property
    def has_weights(self) -> bool:
        return self.weights is not None

    def __eq__(self, other):
        if not isinstance(other, RawGraph):
            return NotImplemented
        return (self.n, self.edges, self.weights, self.labels) == (
            other.n, other.edges, other.weights, other.labels)

    def __hash__(self):
        return hash((self.n, self.edges, self.weights, self.labels))


@dataclass(frozen=True, eq=False)
class TypeGraph:
    """Bipartite type graph ``G = (I, J, E)`` with arrival rates.

    The constructor does not validate; call :func:`validate` for a report or
    :meth:`check` to raise on the first problem.  Arrays are made read-only so
    one instance can be shared by concurrent trials.
    """

    n_types: int
    n_offline: int
    edges: tuple[tuple[int, int], ...]
    rates: np.ndarray
    weights: np.ndarray | None = None
    type_labels: tuple | None = field(default=None, repr=False)
    offline_labels: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(cls, n_types, n_offline, edges, rates=None, weights=None) -> "TypeGraph":
        """Build a type graph with edges sorted lexicographically.

        ``weights`` may be a sequence aligned with ``edges`` or ``None``.
        Missing ``rates`` default to 1 for every type.
        """
        edges = [tuple(e) for e in edges]
        order = sorted(range(len(edges)), key=lambda k: edges[k])
        sorted_edges = [edges[k] for k in order]
        if weights is not None:
            weights = [float(weights[k]) for k in order]
        if rates is None:
            rates = np.ones(n_types)
        return cls(n_types, n_offline, tuple(sorted_edges), rates, weights)

    @property
    def weighted(self) -> bool:
        return self.weights is not None

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_array(self) -> np.ndarray:
        arr = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        arr.setflags(write=False)
        return arr

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Boolean ``(n_types, n_offline)`` adjacency matrix."""
        adj = np.zeros((self.n_types, self.n_offline), dtype=bool)
        if self.edges:
            adj[self.edge_array[:, 0], self.edge_array[:, 1]] = True
        adj.setflags(write=False)
        return adj

    @cached_property
    def weight_matrix(self) -> np.ndarray:
        """Dense weights with zeros off the edge set (ones if unweighted)."""
        wm = np.zeros((self.n_types, self.n_offline))
        if self.edges:
            vals = self.weights if self.weighted else 1.0
            wm[self.edge_array[:, 0], self.edge_array[:, 1]] = vals
        wm.setflags(write=False)
        return wm

    @cached_property
    def type_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """``J_i`` for every type, in increasing index order."""
        nbrs = [[] for _ in range(self.n_types)]
        for i, j in self.edges:
            nbrs[i].append(j)
        return tuple(tuple(sorted(n)) for n in nbrs)

    @cached_property
    def offline_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """``I_j`` for every offline vertex, in increasing index order."""
        nbrs = [[] for _ in range(self.n_offline)]
        for i, j in self.edges:
            nbrs[j].append(i)
        return tuple(tuple(sorted(n)) for n in nbrs)

    @cached_property
    def offline_degree(self) -> np.ndarray:
        deg = np.array([len(n) for n in self.offline_neighbors], dtype=np.int64)
        deg.setflags(write=False)
        return deg

    def weight(self, i: int, j: int) -> float:
        return float(self.weight_matrix[i, j])

    def check(self) -> "TypeGraph":
        problems = validate(self)
        if problems:
            raise GraphValidationError("; ".join(problems))
        return self

    def __eq__(self, other):
        if not isinstance(other, TypeGraph):
            return NotImplemented
        same_w = (self.weights is None and other.weights is None) or (
            self.weights is not None and other.weights is not None
            and np.array_equal(self.weights, other.weights))
        return (self.n_types == other.n_types and self.n_offline == other.n_offline
                and self.edges == other.edges
                and np.array_equal(self.rates, other.rates) and same_w)

    __hash__ = None


def validate(tg: TypeGraph) -> list[str]:
    """Return the list of violated type-graph invariants (empty if valid)."""
    problems = []
    if len(tg.rates) != tg.n_types:
        problems.append(f"rate vector has length {len(tg.rates)}, expected {tg.n_types}")
    for i, lam in enumerate(tg.rates):
        if not np.isfinite(lam) or lam <= 0:
            problems.append(f"nonpositive arrival rate for type {i}: {lam}")
    seen = set()
    for i, j in tg.edges:
        if not (0 <= i < tg.n_types and 0 <= j < tg.n_offline):
            problems.append(f"edge endpoint out of range: ({i}, {j})")
        if (i, j) in seen:
            problems.append(f"duplicate edge ({i}, {j})")
        seen.add((i, j))
    if tg.weights is not None:
        if len(tg.weights) != len(tg.edges):
            problems.append("weights must be given on all edges or on none")
        for (i, j), w in zip(tg.edges, tg.weights):
            if not np.isfinite(w) or w <= 0:
                problems.append(f"nonpositive weight on edge ({i}, {j}): {w}")
    return problems


def _iter_lines(text) -> Iterable[str]:
    if isinstance(text, str):
        return io.StringIO(text)
    return text


def _parse_label(token: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        try:
            value = float(token)
        except ValueError:
            raise GraphParseError(lineno, f"non-numeric vertex token {token!r}") from None
        if not value.is_integer():
            raise GraphParseError(lineno, f"non-integer vertex token {token!r}")
        return int(value)


def parse_edge_list(text: str | TextIO, has_weights: bool = False) -> RawGraph:
    """Parse whitespace-separated ``u v [w]`` records into a :class:`RawGraph`.

    Lines starting with ``%`` or ``#`` are comments.  When the first line is a
    ``%%MatrixMarket`` banner the first non-comment line (the size line) is
    skipped too.  Labels are remapped to dense indices in increasing label
    order; self-loops and repeated undirected edges are dropped (first
    occurrence wins) and counted.  Tokens beyond the required ones are ignored.
    """
    skip_size_line = False
    records = []
    for lineno, line in enumerate(_iter_lines(text), start=1):
        stripped = line.strip()
        if lineno == 1 and stripped.startswith("%%MatrixMarket"):
            skip_size_line = True
            continue
        if not stripped or stripped[0] in "%#":
            continue
        if skip_size_line:
            skip_size_line = False
            continue
        tokens = stripped.split()
        need = 3 if has_weights else 2
        if len(tokens) < need:
            raise GraphParseError(lineno, f"expected {need} fields, got {len(tokens)}")
        u = _parse_label(tokens[0], lineno)
        v = _parse_label(tokens[1], lineno)
        w = None
        if has_weights:
            try:
                w = float(tokens[2])
            except ValueError:
                raise GraphParseError(lineno, f"non-numeric weight {tokens[2]!r}") from None
            if w < 0 or not np.isfinite(w):
                raise GraphValidationError(f"line {lineno}: invalid weight {w}")
        records.append((u, v, w))

    self_loops = sum(1 for u, v, _ in records if u == v)
    kept = [(u, v, w) for u, v, w in records if u != v]
    labels = sorted({x for u, v, _ in kept for x in (u, v)})
    index = {lab: k for k, lab in enumerate(labels)}

    edge_weight: dict[tuple[int, int], float | None] = {}
    duplicates = 0
    for u, v, w in kept:
        a, b = sorted((index[u], index[v]))
        if (a, b) in edge_weight:
            duplicates += 1
            continue
        edge_weight[(a, b)] = w
    edges = tuple(sorted(edge_weight))
    weights = tuple(edge_weight[e] for e in edges) if has_weights else None
    return RawGraph(len(labels), edges, weights, tuple(labels), self_loops, duplicates)


def read_edge_list(path: str | Path, has_weights: bool = False) -> RawGraph:
    with open(path) as fh:
        return parse_edge_list(fh, has_weights)


def serialize_edge_list(g: RawGraph) -> str:
    """Canonical edge-list text: sorted pairs using the original labels."""
    labels = g.labels if g.labels is not None else tuple(range(g.n))
    lines = []
    for k, (u, v) in enumerate(g.edges):
        rec = f"{labels[u]} {labels[v]}"
        if g.weights is not None:
            rec += f" {g.weights[k]!r}"
        lines.append(rec + "\n")
    return "".join(lines)


def duplicate_transform(g: RawGraph) -> TypeGraph:
    """Bipartite double cover: type ``u`` is adjacent to offline ``v`` iff ``{u, v}`` is an edge.

    Every undirected edge yields the two type-graph edges ``(u, v)`` and
    ``(v, u)``; all arrival rates are 1.
    """
    edges = []
    weights = [] if g.weights is not None else None
    for k, (u, v) in enumerate(g.edges):
        if u == v:
            continue
        edges.extend([(u, v), (v, u)])
        if weights is not None:
            weights.extend([g.weights[k], g.weights[k]])
    tg = TypeGraph.from_edges(g.n, g.n, edges, np.ones(g.n), weights)
    if g.labels is not None:
        object.__setattr__(tg, "type_labels", g.labels)
        object.__setattr__(tg, "offline_labels", g.labels)
    return tg


def random_type_graph(n_types: int, n_offline: int, edge_prob: float,
                      rate_range: Sequence[float] = (1.0, 1.0),
                      weight_range: Sequence[float] | None = None,
                      seed: int | None = None,
                      ensure_degree: bool = True) -> TypeGraph:
    """Erdos-Renyi style random type graph.

    With ``ensure_degree`` every type gets at least one neighbor so no
    arrival is trivially unmatchable.
    """
    rng = np.random.default_rng(seed)
    adj = rng.random((n_types, n_offline)) < edge_prob
    if ensure_degree and n_offline > 0:
        for i in np.flatnonzero(~adj.any(axis=1)):
            adj[i, rng.integers(n_offline)] = True
    lo, hi = rate_range
    rates = rng.uniform(lo, hi, n_types) if hi > lo else np.full(n_types, float(lo))
    edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(adj))]
    weights = None
    if weight_range is not None:
        wlo, whi = weight_range
        weights = rng.uniform(wlo, whi, len(edges))
    return TypeGraph.from_edges(n_types, n_offline, edges, rates, weights)


def type_graph_to_dict(tg: TypeGraph) -> dict:
    d = {
        "n_types": tg.n_types,
        "n_offline": tg.n_offline,
        "rates": [float(r) for r in tg.rates],
        "edges": [list(e) for e in tg.edges],
    }
    if tg.weighted:
        d["weights"] = [float(w) for w in tg.weights]
    return d


def type_graph_from_dict(d: dict) -> TypeGraph:
    return TypeGraph.from_edges(d["n_types"], d["n_offline"], [tuple(e) for e in d["edges"]],
                                d.get("rates"), d.get("weights"))


def save_type_graph(tg: TypeGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(type_graph_to_dict(tg), indent=1) + "\n")


def load_type_graph(path: str | Path, has_weights: bool = False) -> TypeGraph:
    """Load a type graph from JSON, or from an edge-list / Matrix Market file.

    Edge-list inputs are general graphs and go through
    :func:`duplicate_transform`.
    """
    path = Path(path)
    if path.suffix == ".json":
        return type_graph_from_dict(json.loads(path.read_text()))
    return duplicate_transform(read_edge_list(path, has_weights))
