"""Vectorized simulation of many runs at once.

Each kernel walks the arrival positions of an :class:`ArrivalBatch` and
updates every trial (row) in lockstep.  The kernels consume randomness in
exactly the layout :mod:`stochmatch.algorithms` does per run (one uniform
per arrival, or one Ranking key per offline vertex up front) and use the
same floating-point operations, so a batched run and a per-run replay of
the same numbers agree bit for bit.  :func:`replay` does that replay and is
also the fallback for the free-disposal algorithms.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import algorithms as alg
from . import analysis
from .analysis import DEFAULT_THETA
from .arrivals import ArrivalBatch, derive_seed, sample_poisson_batch, substream
from .graph import TypeGraph

__all__ = [
    "BatchResult",
    "Randomness",
    "ArrayFeeder",
    "draw_randomness",
    "simulate_batch",
    "replay",
    "algorithm_stream",
    "simulate_stochastic_chunks",
    "adversarial_batch",
]

DEFAULT_CHUNK = 10_000


@dataclass
class BatchResult:
    objective: np.ndarray
    matched_time: np.ndarray
    levels: np.ndarray | None = None

    @property
    def matched(self) -> np.ndarray:
        return np.isfinite(self.matched_time)

    @property
    def n_trials(self) -> int:
        return len(self.objective)


@dataclass
class Randomness:
    """Per-row random numbers: Ranking keys and per-arrival uniforms."""

    ranks: np.ndarray | None
    uniforms: np.ndarray | None

    def row(self, k: int, length: int) -> np.ndarray:
        parts = []
        if self.ranks is not None:
            parts.append(self.ranks[k])
        if self.uniforms is not None:
            parts.append(self.uniforms[k, :length])
        return np.concatenate(parts) if parts else np.zeros(0)


class ArrayFeeder:
    """Stand-in for ``Generator.random`` that hands out prepared numbers in order."""

    def __init__(self, values):
        self._values = np.asarray(values, dtype=float)
        self._pos = 0

    def random(self, size=None):
        if size is None:
            v = float(self._values[self._pos])
            self._pos += 1
            return v
        n = int(np.prod(size))
        out = self._values[self._pos:self._pos + n].reshape(size)
        self._pos += n
        return out

    @property
    def consumed(self) -> int:
        return self._pos


def draw_randomness(algorithm: str, n_rows: int, max_len: int, n_offline: int,
                    gen: np.random.Generator) -> Randomness:
    spec = alg.ALGORITHMS[algorithm]
    if spec.decide is alg.ranking_decide:
        return Randomness(gen.random((n_rows, n_offline)), None)
    if spec.randomized:
        return Randomness(None, gen.random((n_rows, max_len)))
    return Randomness(None, None)


def algorithm_stream(seed: int, chunk: int, label: str) -> np.random.Generator:
    """Algorithm randomness for one chunk, independent of the arrival stream."""
    return substream(seed, chunk, zlib.crc32(label.encode()))


def _sample_rows(masses: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise version of :func:`algorithms.sample_index`."""
    cum = np.cumsum(masses, axis=1)
    target = u * cum[:, -1]
    k = (cum <= target[:, None]).sum(axis=1)
    over = k >= masses.shape[1]
    if over.any():
        width = masses.shape[1]
        last_pos = width - 1 - np.argmax((masses[over] > 0)[:, ::-1], axis=1)
        k[over] = last_pos
    return k


def replay(algorithm: str, ctx: alg.Context, batch: ArrivalBatch,
           rand: Randomness, theta: float = DEFAULT_THETA) -> BatchResult:
    """Run every row through the per-arrival decide functions."""
    spec = alg.ALGORITHMS[algorithm]
    n_rows = batch.n_trials
    objective = np.zeros(n_rows)
    matched_time = np.full((n_rows, ctx.tg.n_offline), np.inf)
    levels = np.zeros((n_rows, ctx.tg.n_offline))
    for k in range(n_rows):
        n = int(batch.lengths[k])
        feeder = ArrayFeeder(rand.row(k, n))
        state = alg.start_state(ctx, spec, feeder)
        for arrival in batch.sequence(k):
            state.clock = arrival.time
            j = spec.decide(ctx, state, arrival, feeder)
            if j is not None and not np.isfinite(matched_time[k, j]):
                matched_time[k, j] = arrival.time
        objective[k] = state.objective
        levels[k] = state.levels
    return BatchResult(objective, matched_time, levels)


def simulate_batch(algorithm: str, ctx: alg.Context, batch: ArrivalBatch,
                   rand: Randomness) -> BatchResult:
    """Run ``algorithm`` on every row of ``batch``."""
    spec = alg.ALGORITHMS[algorithm]
    if spec.free_disposal or ctx.tie_rule is not alg.lowest_index:
        return replay(algorithm, ctx, batch, rand)
    tg = ctx.tg
    n_rows, n_off = batch.n_trials, tg.n_offline
    adj = tg.adjacency
    wm = tg.weight_matrix
    rows = np.arange(n_rows)
    unmatched = np.ones((n_rows, n_off), dtype=bool)
    objective = np.zeros(n_rows)
    matched_time = np.full((n_rows, n_off), np.inf)
    levels = np.zeros((n_rows, n_off))
    if n_off == 0:
        return BatchResult(objective, matched_time, levels)
    deg = tg.offline_degree.astype(float)
    x = ctx.x

    for m in range(batch.max_len):
        types = batch.types[:, m]
        active = types >= 0
        if not active.any():
            break
        ti = np.where(active, types, 0)
        t = np.where(active, batch.times[:, m], 1.0)
        nbr = adj[ti] & active[:, None]
        free = nbr & unmatched
        any_free = free.any(axis=1)
        choice = np.full(n_rows, -1)

        if algorithm in ("balance_swor", "balance_ocs"):
            u = rand.uniforms[:, m]
            pre = levels.copy()
            allocation = alg.water_fill(levels, nbr)
            levels = levels + allocation
            masses = allocation if algorithm == "balance_swor" else alg.ocs_weight(pre) * allocation
            masses = masses * free
            empty = ~(masses > 0).any(axis=1)
            masses = np.where(empty[:, None], free.astype(float), masses)
            k = _sample_rows(masses, u)
            choice = np.where(any_free, k, -1)
        elif algorithm == "stochastic_swor":
            u = rand.uniforms[:, m]
            masses = x[ti] * free
            empty = ~(masses > 0).any(axis=1)
            masses = np.where(empty[:, None], free.astype(float), masses)
            k = _sample_rows(masses, u)
            choice = np.where(any_free, k, -1)
        elif algorithm == "suggested_match":
            u = rand.uniforms[:, m]
            cum = np.cumsum(x[ti] * nbr, axis=1)
            k = (cum <= (u * tg.rates[ti])[:, None]).sum(axis=1)
            hit = (k < n_off) & active
            kk = np.minimum(k, n_off - 1)
            choice = np.where(hit & unmatched[rows, kk], kk, -1)
        elif algorithm == "ranking":
            keys = np.where(free, rand.ranks, np.inf)
            choice = np.where(any_free, np.argmin(keys, axis=1), -1)
        elif algorithm == "min_degree":
            keys = np.where(free, deg, np.inf)
            choice = np.where(any_free, np.argmin(keys, axis=1), -1)
        elif algorithm == "regularized_greedy":
            r = analysis.regularization_terms(x, unmatched, tg.rates, t, ctx.params)
            keys = np.where(free, r, np.inf)
            choice = np.where(any_free, np.argmin(keys, axis=1), -1)
        else:  # pragma: no cover - registry and kernels out of sync
            raise NotImplementedError(algorithm)

        hit_rows = rows[choice >= 0]
        js = choice[hit_rows]
        unmatched[hit_rows, js] = False
        matched_time[hit_rows, js] = t[hit_rows]
        objective[hit_rows] += wm[ti[hit_rows], js]

    return BatchResult(objective, matched_time, levels)


def simulate_stochastic_chunks(algorithm: str, tg: TypeGraph, x_dense, trials: int, seed: int,
                               theta: float = DEFAULT_THETA, chunk: int = DEFAULT_CHUNK,
                               label: str | None = None) -> Iterator[BatchResult]:
    """Yield results chunk by chunk for ``trials`` Poisson realizations."""
    ctx = alg.Context.build(tg, x_dense, theta)
    label = label or algorithm
    done, c = 0, 0
    while done < trials:
        n = min(chunk, trials - done)
        batch = sample_poisson_batch(tg, n, derive_seed(seed, c))
        rand = draw_randomness(algorithm, n, batch.max_len, tg.n_offline,
                               algorithm_stream(seed, c, label))
        yield simulate_batch(algorithm, ctx, batch, rand)
        done += n
        c += 1


def adversarial_batch(order, n_runs: int, n_types: int) -> ArrivalBatch:
    """The same arrival order repeated for ``n_runs`` rows."""
    types = np.asarray(getattr(order, "types", order), dtype=np.int64)
    n = len(types)
    times = np.asarray(order.times, dtype=float) if hasattr(order, "times") else np.arange(n) / max(n, 1)
    counts = np.bincount(types, minlength=n_types)
    return ArrivalBatch(np.tile(types, (n_runs, 1)), np.tile(times, (n_runs, 1)),
                        np.full(n_runs, n, dtype=np.int64), np.tile(counts, (n_runs, 1)))
