"""Reference fractional matchings for the stochastic algorithms.

The Natural LP has one capacity constraint per online type and one
constraint per offline vertex ``j`` and subset ``S`` of its neighbors::

    sum_{i in S} x_ij <= 1 - exp(-sum_{i in S} lambda_i)

:func:`solve_natural_lp` handles the exponential family by cutting planes:
solve a master LP, ask :func:`separation_oracle` for the most violated
subset at every offline vertex, add the cuts, repeat.
:func:`estimate_fractional_matching_mc` is the sampling alternative: the
frequency with which the hindsight optimum pairs each (type, offline) edge.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .arrivals import derive_seed, sample_poisson_batch
from .graph import TypeGraph
from .offline import HindsightOracle

__all__ = [
    "FractionalMatching",
    "DenseLP",
    "LPResult",
    "LPInfeasible",
    "LPUnbounded",
    "NaturalLPError",
    "Cut",
    "simplex_solve",
    "subset_violation",
    "separation_oracle",
    "solve_natural_lp",
    "solve_natural_lp_enumerated",
    "estimate_fractional_matching_mc",
    "check_converse_jensen",
    "converse_jensen_bound",
    "format_fractional",
    "save_fractional",
    "load_fractional",
]


@dataclass(frozen=True)
class FractionalMatching:
    """Dense ``(n_types, n_offline)`` matrix of ``x_ij`` (zero off the edges)."""

    dense: np.ndarray
    provenance: str = "exact-lp"
    objective_value: float | None = field(default=None, compare=False)

    def __post_init__(self):
        d = np.array(self.dense, dtype=float)
        d.setflags(write=False)
        object.__setattr__(self, "dense", d)

    @property
    def value(self) -> float:
        return float(self.dense.sum())

    def on_edges(self, tg: TypeGraph) -> np.ndarray:
        if not tg.edges:
            return np.zeros(0)
        return self.dense[tg.edge_array[:, 0], tg.edge_array[:, 1]]

    def rho(self, tg: TypeGraph) -> np.ndarray:
        return self.dense / tg.rates[:, None]

    def __getitem__(self, ij) -> float:
        return float(self.dense[ij])

    def __eq__(self, other):
        if not isinstance(other, FractionalMatching):
            return NotImplemented
        return self.provenance == other.provenance and np.array_equal(self.dense, other.dense)

    __hash__ = None


# ---------------------------------------------------------------------------
# LP engine


class LPInfeasible(Exception):
    pass


class LPUnbounded(Exception):
    pass


@dataclass
class DenseLP:
    """``maximize c.x  s.t.  A x <= b,  x >= 0``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape[0] != self.b.size:
            raise ValueError("constraint rows and right-hand side differ in length")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.c))):
            raise ValueError("LP coefficients must be finite")

    def add_row(self, coeffs, rhs: float) -> None:
        self.A = np.vstack([self.A, np.asarray(coeffs, dtype=float)[None, :]])
        self.b = np.append(self.b, float(rhs))


@dataclass
class LPResult:
    value: float
    x: np.ndarray


def simplex_solve(lp: DenseLP, tol: float = 1e-9) -> LPResult:
    """Solve ``lp`` with the HiGHS dual simplex at tight tolerances.

    Raises :class:`LPInfeasible` or :class:`LPUnbounded`.
    """
    n = lp.c.size
    if n == 0:
        if np.any(lp.b < -tol):
            raise LPInfeasible("empty LP with negative right-hand side")
        return LPResult(0.0, np.zeros(0))
    res = linprog(-lp.c, A_ub=lp.A if lp.A.size else None, b_ub=lp.b if lp.A.size else None,
                  bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": tol,
                           "dual_feasibility_tolerance": tol})
    if res.status == 2:
        raise LPInfeasible(res.message)
    if res.status == 3:
        raise LPUnbounded(res.message)
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    return LPResult(float(lp.c @ x), x)


# ---------------------------------------------------------------------------
# Separation


@dataclass(frozen=True)
class Cut:
    offline: int
    subset: tuple[int, ...]
    violation: float


def subset_violation(x_vals, rates) -> float:
    """``sum x - (1 - exp(-sum lambda))`` with exactly rounded sums."""
    return math.fsum(x_vals) - 1.0 + math.exp(-math.fsum(rates))


def separation_oracle(j: int, x, tg: TypeGraph, tol: float = 1e-7) -> Cut | None:
    """Most violated subset constraint at offline vertex ``j``, or ``None``.

    Neighbors are sorted by ``x_ij / lambda_i`` (descending, ties by index)
    and every prefix is scanned.  Prefixes suffice once the empty prefix
    (violation 0) is counted: for a fixed total rate the best subset sum of
    ``x`` is bounded by the fractional greedy, which is linear between prefix
    breakpoints, and the ``exp`` term is convex there.  So any positive
    violation is attained by a prefix.
    """
    dense = np.asarray(getattr(x, "dense", x), dtype=float)
    nbrs = tg.offline_neighbors[j]
    if not nbrs:
        return None
    xs = [float(dense[i, j]) for i in nbrs]
    lams = [float(tg.rates[i]) for i in nbrs]
    order = sorted(range(len(nbrs)), key=lambda k: (-xs[k] / lams[k], nbrs[k]))
    best_k, best_v = -1, -math.inf
    for k in range(1, len(order) + 1):
        pre = order[:k]
        v = subset_violation([xs[m] for m in pre], [lams[m] for m in pre])
        if v > best_v:
            best_k, best_v = k, v
    if best_v <= tol:
        return None
    return Cut(j, tuple(sorted(nbrs[m] for m in order[:best_k])), best_v)


# ---------------------------------------------------------------------------
# Natural LP


class NaturalLPError(RuntimeError):
    def __init__(self, message: str, last_iterate: np.ndarray, residual: float):
        super().__init__(f"{message} (residual violation {residual:.3g})")
        self.last_iterate = last_iterate
        self.residual = residual


def _base_lp(tg: TypeGraph) -> DenseLP:
    n_e = tg.n_edges
    rows, rhs = [], []
    for i in range(tg.n_types):
        row = np.zeros(n_e)
        row[[k for k, (a, _) in enumerate(tg.edges) if a == i]] = 1.0
        if row.any():
            rows.append(row)
            rhs.append(tg.rates[i])
    return DenseLP(np.ones(n_e), np.array(rows).reshape(-1, n_e), np.array(rhs))


def _edge_index(tg: TypeGraph) -> dict[tuple[int, int], int]:
    return {e: k for k, e in enumerate(tg.edges)}


def _subset_row(tg: TypeGraph, index, j: int, subset) -> tuple[np.ndarray, float]:
    row = np.zeros(tg.n_edges)
    for i in subset:
        row[index[(i, j)]] = 1.0
    return row, 1.0 - math.exp(-math.fsum(float(tg.rates[i]) for i in subset))


def _to_dense(tg: TypeGraph, values: np.ndarray) -> np.ndarray:
    dense = np.zeros((tg.n_types, tg.n_offline))
    if tg.edges:
        dense[tg.edge_array[:, 0], tg.edge_array[:, 1]] = values
    return dense


def _violated_prefixes(j: int, dense: np.ndarray, tg: TypeGraph, tol: float) -> list[tuple[int, ...]]:
    """Every prefix of the x/lambda-descending order of ``j``'s neighbors violated by more than ``tol``."""
    nbrs = tg.offline_neighbors[j]
    xs = np.array([dense[i, j] for i in nbrs], dtype=float)
    lams = np.array([tg.rates[i] for i in nbrs], dtype=float)
    order = sorted(range(len(nbrs)), key=lambda k: (-xs[k] / lams[k], nbrs[k]))
    out = []
    for k in range(1, len(order) + 1):
        pre = order[:k]
        if subset_violation(xs[pre], lams[pre]) > tol:
            out.append(tuple(sorted(nbrs[m] for m in pre)))
    return out


def solve_natural_lp(tg: TypeGraph, tol: float = 1e-7, max_rounds_factor: int = 10) -> FractionalMatching:
    """Optimal Natural LP solution by cutting planes.

    The master LP starts from the type capacity rows and every singleton
    subset cut.  Each round adds every violated prefix cut of every offline
    vertex.  Raises :class:`NaturalLPError` after ``max_rounds_factor * |E|``
    rounds, or if a cut already in the master LP is reported violated again
    (the LP solver and the separation tolerance disagree).
    """
    tg.check()
    if not tg.edges:
        return FractionalMatching(np.zeros((tg.n_types, tg.n_offline)), "exact-lp", 0.0)
    index = _edge_index(tg)
    lp = _base_lp(tg)
    present = set()
    for i, j in tg.edges:
        lp.add_row(*_subset_row(tg, index, j, (i,)))
        present.add((j, (i,)))

    cap = max_rounds_factor * tg.n_edges
    rounds = 0
    while True:
        sol = simplex_solve(lp)
        dense = _to_dense(tg, sol.x)
        cuts = [(j, s) for j in range(tg.n_offline) for s in _violated_prefixes(j, dense, tg, tol)]
        if not cuts:
            return FractionalMatching(dense, "exact-lp", sol.value)
        rounds += 1
        if rounds > cap:
            raise NaturalLPError("cutting-plane round cap exceeded", dense, _max_violation(dense, tg))
        for j, s in cuts:
            if (j, s) in present:
                raise NaturalLPError("violated cut already present in the master LP", dense,
                                     _max_violation(dense, tg))
            present.add((j, s))
            lp.add_row(*_subset_row(tg, index, j, s))


def _max_violation(dense: np.ndarray, tg: TypeGraph) -> float:
    return max(c.violation for j in range(tg.n_offline) if (c := separation_oracle(j, dense, tg, -np.inf)))


def solve_natural_lp_enumerated(tg: TypeGraph) -> FractionalMatching:
    """Natural LP with every subset constraint written out (small degrees only)."""
    tg.check()
    if not tg.edges:
        return FractionalMatching(np.zeros((tg.n_types, tg.n_offline)), "exact-lp", 0.0)
    index = _edge_index(tg)
    lp = _base_lp(tg)
    rows, rhs = [lp.A], [lp.b]
    for j in range(tg.n_offline):
        nbrs = tg.offline_neighbors[j]
        for r in range(1, len(nbrs) + 1):
            for subset in itertools.combinations(nbrs, r):
                row, b = _subset_row(tg, index, j, subset)
                rows.append(row[None, :])
                rhs.append([b])
    sol = simplex_solve(DenseLP(lp.c, np.vstack(rows), np.concatenate(rhs)))
    return FractionalMatching(_to_dense(tg, sol.x), "exact-lp", sol.value)


# ---------------------------------------------------------------------------
# Monte-Carlo estimate


def estimate_fractional_matching_mc(tg: TypeGraph, samples: int, seed: int,
                                    chunk: int = 10_000) -> FractionalMatching:
    """Fraction of sampled realizations whose optimum pairs type ``i`` with ``j``.

    Each matched copy of type ``i`` adds one to the ``(i, j)`` counter of the
    offline vertex it is matched to.  Ties among optimal matchings follow the
    canonical type-major node order of :class:`HindsightOracle`.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    tg.check()
    oracle = HindsightOracle(tg, weighted=False)
    totals = np.zeros((tg.n_types, tg.n_offline), dtype=np.int64)
    done = 0
    c = 0
    while done < samples:
        n = min(chunk, samples - done)
        batch = sample_poisson_batch(tg, n, derive_seed(seed, c))
        keys, mult = np.unique(np.minimum(batch.counts, [len(nb) for nb in tg.type_neighbors]),
                               axis=0, return_counts=True)
        for key, m in zip(keys, mult):
            totals += m * oracle.pairs_by_type(key)
        done += n
        c += 1
    return FractionalMatching(totals / samples, f"monte-carlo({samples})")


# ---------------------------------------------------------------------------
# Converse Jensen


def converse_jensen_bound(theta: float) -> float:
    """``1 + ((1 - theta) / theta) ln(1 - theta)``."""
    if not (0.0 < theta <= 0.5):
        raise ValueError(f"theta must lie in (0, 1/2], got {theta}")
    return 1.0 + (1.0 - theta) / theta * math.log1p(-theta)


def check_converse_jensen(x, tg: TypeGraph, theta: float, j: int) -> float:
    """Left minus right side of the converse-Jensen bound at offline vertex ``j``."""
    bound = converse_jensen_bound(theta)
    dense = np.asarray(getattr(x, "dense", x), dtype=float)
    excess = np.maximum(dense[:, j] - (1.0 - theta) * np.asarray(tg.rates), 0.0)
    return float(excess.sum() / theta - bound)


# ---------------------------------------------------------------------------
# CSV I/O


def format_fractional(fm: FractionalMatching, tg: TypeGraph) -> str:
    """CSV text ``i,j,x`` (one row per edge) under provenance and shape comments."""
    lines = [f"# provenance: {fm.provenance}",
             f"# shape: {tg.n_types},{tg.n_offline}",
             "i,j,x"]
    for (i, j), v in zip(tg.edges, fm.on_edges(tg)):
        lines.append(f"{i},{j},{float(v)!r}")
    return "\n".join(lines) + "\n"


def save_fractional(fm: FractionalMatching, tg: TypeGraph, path: str | Path) -> None:
    Path(path).write_text(format_fractional(fm, tg))


def load_fractional(path: str | Path) -> FractionalMatching:
    provenance = "exact-lp"
    shape = None
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if key.strip() == "provenance":
                provenance = val.strip()
            elif key.strip() == "shape":
                shape = tuple(int(v) for v in val.split(","))
            continue
        if line == "i,j,x":
            continue
        i, j, v = line.split(",")
        entries.append((int(i), int(j), float(v)))
    if shape is None:
        shape = (max((e[0] for e in entries), default=-1) + 1, max((e[1] for e in entries), default=-1) + 1)
    dense = np.zeros(shape)
    for i, j, v in entries:
        dense[i, j] = v
    return FractionalMatching(dense, provenance)
