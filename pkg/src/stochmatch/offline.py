"""Offline optima in hindsight for realized graphs.

Cardinality uses Hopcroft-Karp (``scipy.sparse.csgraph``); edge weights use
the shortest-augmenting-path assignment solver (``linear_sum_assignment``)
on the rectangular weight matrix, where zero entries stand for non-edges.
Both are deterministic given node order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .graph import GraphParseError, GraphValidationError, TypeGraph, _iter_lines, _parse_label

__all__ = [
    "RealizedGraph",
    "Matching",
    "realize",
    "max_cardinality_matching",
    "max_weight_matching",
    "HindsightOracle",
    "parse_realized_graph",
    "read_realized_graph",
]


@dataclass(frozen=True)
class RealizedGraph:
    """Online nodes ``0..n_online-1`` against offline nodes ``0..n_offline-1``."""

    n_online: int
    n_offline: int
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...] | None = None
    online_types: tuple[int, ...] | None = None

    @property
    def weighted(self) -> bool:
        return self.weights is not None

    def weight_matrix(self) -> np.ndarray:
        wm = np.zeros((self.n_online, self.n_offline))
        for k, (u, v) in enumerate(self.edges):
            wm[u, v] = self.weights[k] if self.weights is not None else 1.0
        return wm


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]
    weight: float

    @property
    def size(self) -> int:
        return len(self.pairs)

    def is_valid(self, g: RealizedGraph) -> bool:
        edge_set = set(g.edges)
        us = [u for u, _ in self.pairs]
        vs = [v for _, v in self.pairs]
        return (len(set(us)) == len(us) and len(set(vs)) == len(vs)
                and all(p in edge_set for p in self.pairs))


def realize(tg: TypeGraph, online_types: Sequence[int]) -> RealizedGraph:
    """One online node per arrival; edges and weights inherited from its type."""
    edges, weights = [], []
    for u, i in enumerate(online_types):
        for j in tg.type_neighbors[i]:
            edges.append((u, j))
            weights.append(tg.weight(i, j))
    return RealizedGraph(len(online_types), tg.n_offline, tuple(edges),
                         tuple(weights) if tg.weighted else None,
                         tuple(int(i) for i in online_types))


def parse_realized_graph(text, has_weights: bool = False) -> RealizedGraph:
    """Parse ``online offline [w]`` records; each side's labels are remapped separately.

    Comment lines start with ``%`` or ``#``; a repeated pair keeps its first weight.
    """
    records = []
    for lineno, line in enumerate(_iter_lines(text), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "%#":
            continue
        tokens = stripped.split()
        need = 3 if has_weights else 2
        if len(tokens) < need:
            raise GraphParseError(lineno, f"expected {need} fields, got {len(tokens)}")
        u, v = _parse_label(tokens[0], lineno), _parse_label(tokens[1], lineno)
        w = None
        if has_weights:
            try:
                w = float(tokens[2])
            except ValueError:
                raise GraphParseError(lineno, f"non-numeric weight {tokens[2]!r}") from None
            if not w > 0 or not np.isfinite(w):
                raise GraphValidationError(f"line {lineno}: weight must be positive, got {w}")
        records.append((u, v, w))
    left = {u: k for k, u in enumerate(sorted({r[0] for r in records}))}
    right = {v: k for k, v in enumerate(sorted({r[1] for r in records}))}
    seen: dict[tuple[int, int], float | None] = {}
    for u, v, w in records:
        seen.setdefault((left[u], right[v]), w)
    edges = tuple(sorted(seen))
    weights = tuple(seen[e] for e in edges) if has_weights else None
    return RealizedGraph(len(left), len(right), edges, weights)


def read_realized_graph(path, has_weights: bool = False) -> RealizedGraph:
    with open(path) as fh:
        return parse_realized_graph(fh, has_weights)


def max_cardinality_matching(g: RealizedGraph) -> Matching:
    if g.n_online == 0 or g.n_offline == 0 or not g.edges:
        return Matching((), 0.0)
    rows = [u for u, _ in g.edges]
    cols = [v for _, v in g.edges]
    biadj = csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                       shape=(g.n_online, g.n_offline))
    mate = maximum_bipartite_matching(biadj, perm_type="column")
    pairs = tuple((u, int(v)) for u, v in enumerate(mate) if v >= 0)
    if g.weighted:
        wm = g.weight_matrix()
        weight = float(sum(wm[u, v] for u, v in pairs))
    else:
        weight = float(len(pairs))
    return Matching(pairs, weight)


def max_weight_matching(g: RealizedGraph) -> Matching:
    """Maximum total weight matching (not necessarily of maximum size)."""
    if not g.weighted:
        raise ValueError("max_weight_matching needs edge weights")
    if g.n_online == 0 or g.n_offline == 0 or not g.edges:
        return Matching((), 0.0)
    wm = g.weight_matrix()
    rows, cols = linear_sum_assignment(wm, maximize=True)
    pairs = tuple((int(u), int(v)) for u, v in zip(rows, cols) if wm[u, v] > 0)
    return Matching(pairs, float(sum(wm[u, v] for u, v in pairs)))


class HindsightOracle:
    """Memoized hindsight optimum keyed by per-type arrival counts.

    The optimum depends only on how many copies of each type arrived, and
    copies beyond ``|J_i|`` can never be matched, so counts are capped at the
    type's degree.  The realized graph is built in canonical type-major node
    order, which fixes the tie-breaking among optimal matchings.
    """

    def __init__(self, tg: TypeGraph, weighted: bool | None = None):
        self.tg = tg
        self.weighted = tg.weighted if weighted is None else weighted
        self._cap = np.array([len(n) for n in tg.type_neighbors], dtype=np.int64)
        self._cache: dict[tuple, tuple[float, np.ndarray]] = {}

    def _solve(self, key: tuple) -> tuple[float, np.ndarray]:
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        types = [i for i, c in enumerate(key) for _ in range(c)]
        g = realize(self.tg, types)
        m = max_weight_matching(g) if self.weighted else max_cardinality_matching(g)
        by_type = np.zeros((self.tg.n_types, self.tg.n_offline), dtype=np.int64)
        for u, v in m.pairs:
            by_type[types[u], v] += 1
        by_type.setflags(write=False)
        self._cache[key] = (m.weight, by_type)
        return self._cache[key]

    def key(self, counts) -> tuple:
        return tuple(np.minimum(np.asarray(counts), self._cap).tolist())

    def value(self, counts) -> float:
        return self._solve(self.key(counts))[0]

    def pairs_by_type(self, counts) -> np.ndarray:
        """``(n_types, n_offline)`` counts of matched (type, offline) pairs."""
        return self._solve(self.key(counts))[1]

    def values(self, counts: np.ndarray) -> np.ndarray:
        capped = np.minimum(counts, self._cap)
        return np.array([self._solve(tuple(row))[0] for row in capped.tolist()])

    def __len__(self) -> int:
        return len(self._cache)
