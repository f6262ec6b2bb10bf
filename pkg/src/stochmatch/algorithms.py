"""Online matching algorithms behind one per-arrival interface.

Every algorithm is a function ``decide(ctx, state, arrival, rng)`` that
returns the offline vertex the arrival is matched to (or ``None``) and
updates ``state`` in place.  :func:`run` drives a whole arrival sequence.

Randomness contract, shared with the batched engine in
:mod:`stochmatch.simulate`: randomized algorithms draw exactly one uniform
per arrival through ``rng.random()``; Ranking draws one key per offline
vertex at the start of the run and nothing afterwards; deterministic
algorithms never touch ``rng``.  Samples are taken by inverse CDF over
neighbors in increasing index order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import analysis
from .analysis import DEFAULT_THETA, PotentialParams
from .arrivals import Arrival, ArrivalSequence
from .graph import TypeGraph

__all__ = [
    "MatchState",
    "MatcherConfig",
    "Context",
    "TraceEntry",
    "ALGORITHMS",
    "water_fill",
    "balance_step",
    "ocs_weight",
    "balance_swor_decide",
    "balance_ocs_decide",
    "ranking_decide",
    "min_degree_decide",
    "suggested_match_decide",
    "stochastic_swor_decide",
    "regularized_greedy_decide",
    "top_half_decide",
    "regularized_greedy_ew_decide",
    "run",
    "trace_to_jsonl",
]


@dataclass
class MatchState:
    """Mutable per-run state.

    ``best_weight[j]`` is the heaviest edge matched to ``j`` so far (free
    disposal); ``levels`` are the unbounded Balance loads ``y_j``.
    """

    matched: np.ndarray
    best_weight: np.ndarray
    levels: np.ndarray
    objective: float = 0.0
    clock: float = 0.0
    rank: np.ndarray | None = None

    @classmethod
    def fresh(cls, n_offline: int) -> "MatchState":
        return cls(np.zeros(n_offline, dtype=bool), np.zeros(n_offline), np.zeros(n_offline))

    @property
    def n_matched(self) -> int:
        return int(self.matched.sum())

    @property
    def unmatched(self) -> np.ndarray:
        return ~self.matched


def lowest_index(candidates):
    return min(candidates)


def highest_index(candidates):
    return max(candidates)


TIE_RULES = {"lowest-index": lowest_index, "highest-index": highest_index}


@dataclass
class MatcherConfig:
    algorithm: str
    theta: float = DEFAULT_THETA
    seed: int | None = None
    ranking_seed: int | None = None
    tie_break: str = "lowest-index"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {sorted(ALGORITHMS)}")
        if self.tie_break not in TIE_RULES:
            raise ValueError(f"unknown tie rule {self.tie_break!r}")
        PotentialParams(self.theta)

    @property
    def spec(self) -> "AlgorithmSpec":
        return ALGORITHMS[self.algorithm]


@dataclass
class Context:
    """Read-only inputs shared by every run of one instance."""

    tg: TypeGraph
    x: np.ndarray | None = None
    params: PotentialParams = field(default_factory=PotentialParams)
    tie_rule: Callable = lowest_index

    @classmethod
    def build(cls, tg: TypeGraph, x=None, theta: float = DEFAULT_THETA,
              tie_break: str = "lowest-index") -> "Context":
        dense = None if x is None else np.asarray(getattr(x, "dense", x), dtype=float)
        return cls(tg, dense, PotentialParams(theta), TIE_RULES[tie_break])


# ---------------------------------------------------------------------------
# Shared helpers


def water_fill(levels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Unbounded Balance allocation for each row of ``levels``.

    Spreads one unit over the ``mask`` entries of each row so that every
    entry receiving a positive amount ends at the same water level and every
    other masked entry already sits at or above it.  The level comes in
    closed form from the sorted loads.
    """
    levels = np.atleast_2d(np.asarray(levels, dtype=float))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    n_rows, width = levels.shape
    if width == 0:
        return np.zeros_like(levels)
    s = np.sort(np.where(mask, levels, np.inf), axis=1)
    finite = np.isfinite(s)
    cs = np.cumsum(np.where(finite, s, 0.0), axis=1)
    ybar = (1.0 + cs) / np.arange(1, width + 1)
    nxt = np.concatenate([s[:, 1:], np.full((n_rows, 1), np.inf)], axis=1)
    k = np.argmax((ybar <= nxt) & finite, axis=1)
    level = ybar[np.arange(n_rows), k]
    return np.where(mask, np.maximum(level[:, None] - levels, 0.0), 0.0)


def balance_step(levels) -> np.ndarray:
    """Allocation of one arrival over neighbors with loads ``levels``."""
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0:
        raise ValueError("arrival has no neighbors")
    return water_fill(levels[None, :], np.ones((1, levels.size), dtype=bool))[0]


_OCS_CUBIC = (4.0 - 2.0 * math.sqrt(3.0)) / 3.0


def ocs_weight(y):
    """``exp(y + y^2/2 + ((4 - 2 sqrt 3)/3) y^3)``, the Balance OCS reweighting."""
    y = np.asarray(y, dtype=float)
    out = np.exp(y + 0.5 * y * y + _OCS_CUBIC * y ** 3)
    return float(out) if out.ndim == 0 else out


def sample_index(masses: np.ndarray, u: float) -> int:
    """Inverse-CDF draw over ``masses`` (some positive) with uniform ``u``."""
    cum = np.cumsum(masses)
    k = int(np.searchsorted(cum, u * cum[-1], side="right"))
    if k >= len(masses):
        k = int(np.flatnonzero(masses > 0)[-1])
    return k


def _unmatched_neighbors(ctx: Context, state: MatchState, i: int) -> np.ndarray:
    nbrs = np.asarray(ctx.tg.type_neighbors[i], dtype=np.int64)
    return nbrs[~state.matched[nbrs]]


def _commit(ctx: Context, state: MatchState, i: int, j: int) -> int:
    """Match an arrival of type ``i`` to the unmatched vertex ``j``."""
    w = ctx.tg.weight(i, j)
    state.matched[j] = True
    state.best_weight[j] = w
    state.objective += w
    return j


def _commit_free_disposal(ctx: Context, state: MatchState, i: int, j: int) -> int:
    w = ctx.tg.weight(i, j)
    state.objective += max(w - state.best_weight[j], 0.0)
    state.best_weight[j] = max(state.best_weight[j], w)
    state.matched[j] = True
    return j


def _sample_unmatched(ctx, state, i, masses_full: np.ndarray, u: float):
    """Sample among unmatched neighbors of ``i`` proportionally to ``masses_full``.

    Falls back to uniform over unmatched neighbors when all their masses
    are zero.
    """
    nbrs = np.asarray(ctx.tg.type_neighbors[i], dtype=np.int64)
    free = ~state.matched[nbrs]
    if not free.any():
        return None
    masses = masses_full[nbrs] * free
    if not (masses > 0).any():
        masses = free.astype(float)
    return _commit(ctx, state, i, int(nbrs[sample_index(masses, u)]))


# ---------------------------------------------------------------------------
# Adversarial-model algorithms


def _balance_allocation(ctx: Context, state: MatchState, i: int):
    adj = ctx.tg.adjacency[i]
    if not adj.any():
        return None, None
    pre = state.levels.copy()
    alloc = water_fill(state.levels[None, :], adj[None, :])[0]
    state.levels += alloc
    return pre, alloc


def balance_swor_decide(ctx: Context, state: MatchState, arrival: Arrival, rng):
    """Unbounded Balance step, then sample an unmatched neighbor by its allocation."""
    u = rng.random()
    _, alloc = _balance_allocation(ctx, state, arrival.type_id)
    if alloc is None:
        return None
    return _sample_unmatched(ctx, state, arrival.type_id, alloc, u)


def balance_ocs_decide(ctx: Context, state: MatchState, arrival: Arrival, rng):
    """As Balance SWOR, with masses reweighted by the pre-step loads."""
    u = rng.random()
    pre, alloc = _balance_allocation(ctx, state, arrival.type_id)
    if alloc is None:
        return None
    return _sample_unmatched(ctx, state, arrival.type_id, ocs_weight(pre) * alloc, u)


def ranking_decide(ctx: Context, state: MatchState, arrival: Arrival, rng=None):
    free = _unmatched_neighbors(ctx, state, arrival.type_id)
    if free.size == 0:
        return None
    return _commit(ctx, state, arrival.type_id, int(free[np.argmin(state.rank[free])]))


def min_degree_decide(ctx: Context, state: MatchState, arrival: Arrival, rng=None):
    """Unmatched neighbor of smallest static degree ``|I_j|``, ties to lower index."""
    free = _unmatched_neighbors(ctx, state, arrival.type_id)
    if free.size == 0:
        return None
    return _commit(ctx, state, arrival.type_id, int(free[np.argmin(ctx.tg.offline_degree[free])]))


# ---------------------------------------------------------------------------
# Stochastic-model algorithms


def suggested_match_decide(ctx: Context, state: MatchState, arrival: Arrival, rng):
    """Sample ``j`` w.p. ``x_ij / lambda_i`` regardless of status; keep it if free."""
    u = rng.random()
    i = arrival.type_id
    nbrs = ctx.tg.type_neighbors[i]
    if not nbrs:
        return None
    cum = np.cumsum(ctx.x[i, list(nbrs)])
    k = int(np.searchsorted(cum, u * ctx.tg.rates[i], side="right"))
    if k >= len(nbrs):
        return None
    j = nbrs[k]
    if state.matched[j]:
        return None
    return _commit(ctx, state, i, j)


def stochastic_swor_decide(ctx: Context, state: MatchState, arrival: Arrival, rng):
    """Sample an unmatched neighbor with probability proportional to ``x_ij``."""
    u = rng.random()
    return _sample_unmatched(ctx, state, arrival.type_id, ctx.x[arrival.type_id], u)


def regularized_greedy_decide(ctx: Context, state: MatchState, arrival: Arrival, rng=None):
    """Unmatched neighbor with the smallest regularization term."""
    free = _unmatched_neighbors(ctx, state, arrival.type_id)
    if free.size == 0:
        return None
    r = analysis.regularization_terms(ctx.x, state.unmatched[None, :], ctx.tg.rates,
                                      np.array([arrival.time]), ctx.params)[0]
    vals = r[free]
    best = vals.min()
    j = ctx.tie_rule([int(f) for f, v in zip(free, vals) if v == best])
    return _commit(ctx, state, arrival.type_id, j)


# ---------------------------------------------------------------------------
# Edge-weighted algorithms (free disposal)


def top_half_decide(ctx: Context, state: MatchState, arrival: Arrival, rng):
    """Sample ``tau`` from the top half of ``[0, lambda_i)`` over neighbors by marginal weight."""
    u = rng.random()
    i = arrival.type_id
    nbrs = ctx.tg.type_neighbors[i]
    if not nbrs:
        return None
    marg = [max(ctx.tg.weight(i, j) - state.best_weight[j], 0.0) for j in nbrs]
    order = sorted(range(len(nbrs)), key=lambda k: (-marg[k], nbrs[k]))
    cum = np.cumsum([ctx.x[i, nbrs[k]] for k in order])
    tau = u * ctx.tg.rates[i] / 2.0
    k = int(np.searchsorted(cum, tau, side="right"))
    if k >= len(order):
        return None
    return _commit_free_disposal(ctx, state, i, nbrs[order[k]])


def ew_state(ctx: Context, state: MatchState) -> analysis.EWState:
    return analysis.EWState.from_best_weights(ctx.tg.weight_matrix, state.best_weight,
                                              ctx.x, ctx.tg.rates)


def regularized_greedy_ew_decide(ctx: Context, state: MatchState, arrival: Arrival, rng=None):
    """Neighbor maximizing marginal weight minus regularization; declines below zero."""
    i = arrival.type_id
    nbrs = ctx.tg.type_neighbors[i]
    if not nbrs:
        return None
    snap = ew_state(ctx, state)
    vals = [snap.marginal[i, j] - analysis.regularization_ew(i, j, snap, arrival.time) for j in nbrs]
    best = max(vals)
    if best < 0:
        return None
    j = ctx.tie_rule([j for j, v in zip(nbrs, vals) if v == best])
    return _commit_free_disposal(ctx, state, i, j)


# ---------------------------------------------------------------------------
# Registry and driver


class AlgorithmSpec(NamedTuple):
    decide: Callable
    randomized: bool
    needs_x: bool
    free_disposal: bool
    greedy: bool


ALGORITHMS: dict[str, AlgorithmSpec] = {
    "balance_swor": AlgorithmSpec(balance_swor_decide, True, False, False, True),
    "balance_ocs": AlgorithmSpec(balance_ocs_decide, True, False, False, True),
    "ranking": AlgorithmSpec(ranking_decide, True, False, False, True),
    "min_degree": AlgorithmSpec(min_degree_decide, False, False, False, True),
    "suggested_match": AlgorithmSpec(suggested_match_decide, True, True, False, False),
    "stochastic_swor": AlgorithmSpec(stochastic_swor_decide, True, True, False, True),
    "regularized_greedy": AlgorithmSpec(regularized_greedy_decide, False, True, False, True),
    "top_half": AlgorithmSpec(top_half_decide, True, True, True, False),
    "regularized_greedy_ew": AlgorithmSpec(regularized_greedy_ew_decide, False, True, True, False),
}


class TraceEntry(NamedTuple):
    t: float
    type: int
    matched: int | None
    phi: float | None


def _potential(ctx: Context, state: MatchState, spec: AlgorithmSpec, t: float):
    if ctx.x is None:
        return None
    if spec.free_disposal:
        return analysis.phi_ew(ew_state(ctx, state), t)
    return analysis.phi_unweighted(ctx.x, state.unmatched, ctx.tg.rates, t, ctx.params)


def start_state(ctx: Context, spec: AlgorithmSpec, rng, ranking_rng=None) -> MatchState:
    state = MatchState.fresh(ctx.tg.n_offline)
    if spec.decide is ranking_decide:
        state.rank = np.asarray((ranking_rng or rng).random(ctx.tg.n_offline), dtype=float)
    return state


def run(config: MatcherConfig, tg: TypeGraph, x, seq: ArrivalSequence,
        rng=None, trace: bool = False, ctx: Context | None = None):
    """Feed ``seq`` through the configured algorithm.

    Returns ``(state, trace)`` where ``trace`` lists ``(t, type, matched, phi)``
    per arrival when requested (empty otherwise); ``phi`` is the potential
    right after the decision.
    """
    spec = config.spec
    if spec.needs_x and x is None:
        raise ValueError(f"{config.algorithm} needs a fractional matching")
    if spec.free_disposal and not tg.weighted:
        raise ValueError(f"{config.algorithm} needs an edge-weighted instance")
    if ctx is None:
        ctx = Context.build(tg, x, config.theta, config.tie_break)
    if rng is None:
        rng = np.random.Generator(np.random.Philox(config.seed))
    ranking_rng = None
    if config.ranking_seed is not None:
        ranking_rng = np.random.Generator(np.random.Philox(config.ranking_seed))
    state = start_state(ctx, spec, rng, ranking_rng)
    entries = []
    for arrival in seq:
        state.clock = arrival.time
        j = spec.decide(ctx, state, arrival, rng)
        if trace:
            entries.append(TraceEntry(arrival.time, arrival.type_id, j,
                                      _potential(ctx, state, spec, arrival.time)))
    return state, entries


def trace_to_jsonl(entries) -> str:
    return "".join(json.dumps({"t": e.t, "type": e.type, "matched": e.matched, "phi": e.phi}) + "\n"
                   for e in entries)
