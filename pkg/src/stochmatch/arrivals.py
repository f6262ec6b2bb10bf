"""Realized arrival sequences for the stochastic and adversarial models.

Poisson arrivals are drawn count-then-timestamps: type ``i`` gets a
``Poisson(lambda_i)`` number of arrivals with i.i.d. uniform times on
``[0, 1]``.  Every type draws from its own Philox substream
(``SeedSequence(seed, spawn_key=(i,))``), so adding a type never perturbs the
draws of the others.  Ties in time are broken by generation order (type
index, then draw index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .graph import TypeGraph

__all__ = [
    "Arrival",
    "ArrivalSequence",
    "ArrivalBatch",
    "sample_poisson_arrivals",
    "sample_poisson_batch",
    "adversarial_order",
    "substream",
    "derive_seed",
]


class Arrival(NamedTuple):
    time: float
    type_id: int


@dataclass(frozen=True)
class ArrivalSequence:
    arrivals: tuple[Arrival, ...]
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.arrivals)

    def __iter__(self) -> Iterator[Arrival]:
        return iter(self.arrivals)

    def __getitem__(self, k):
        return self.arrivals[k]

    @property
    def times(self) -> np.ndarray:
        return np.array([a.time for a in self.arrivals], dtype=float)

    @property
    def types(self) -> np.ndarray:
        return np.array([a.type_id for a in self.arrivals], dtype=np.int64)

    def counts(self, n_types: int) -> np.ndarray:
        return np.bincount(self.types, minlength=n_types)

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"t": a.time, "type": a.type_id}) + "\n"
                       for a in self.arrivals)

    @classmethod
    def from_jsonl(cls, text: str, seed: int | None = None) -> "ArrivalSequence":
        arrivals = []
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                arrivals.append(Arrival(float(rec["t"]), int(rec["type"])))
        return cls(tuple(arrivals), seed)


@dataclass(frozen=True)
class ArrivalBatch:
    """Many realizations stored as padded arrays.

    ``types[k, m]`` / ``times[k, m]`` is the ``m``-th arrival of trial ``k``;
    padding entries have type ``-1`` and time ``inf``.
    """

    types: np.ndarray
    times: np.ndarray
    lengths: np.ndarray
    counts: np.ndarray

    @property
    def n_trials(self) -> int:
        return self.types.shape[0]

    @property
    def max_len(self) -> int:
        return self.types.shape[1]

    def sequence(self, k: int, seed: int | None = None) -> ArrivalSequence:
        n = int(self.lengths[k])
        return ArrivalSequence(
            tuple(Arrival(float(t), int(i)) for t, i in zip(self.times[k, :n], self.types[k, :n])),
            seed)

    @classmethod
    def from_sequences(cls, seqs, n_types: int) -> "ArrivalBatch":
        seqs = list(seqs)
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        width = int(lengths.max()) if len(seqs) else 0
        types = np.full((len(seqs), width), -1, dtype=np.int64)
        times = np.full((len(seqs), width), np.inf)
        counts = np.zeros((len(seqs), n_types), dtype=np.int64)
        for k, s in enumerate(seqs):
            n = len(s)
            types[k, :n] = s.types
            times[k, :n] = s.times
            counts[k] = s.counts(n_types)
        return cls(types, times, lengths, counts)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the substream ``key`` of ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic 64-bit child seed."""
    lo, hi = np.random.SeedSequence(seed, spawn_key=key).generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def sample_poisson_batch(tg: TypeGraph, n_trials: int, seed: int) -> ArrivalBatch:
    """Draw ``n_trials`` independent Poisson arrival realizations."""
    n_types = tg.n_types
    counts = np.zeros((n_trials, n_types), dtype=np.int64)
    trial_ids, type_ids, stamps = [], [], []
    for i in range(n_types):
        gen = substream(seed, i)
        c = gen.poisson(float(tg.rates[i]), n_trials)
        counts[:, i] = c
        total = int(c.sum())
        stamps.append(gen.random(total))
        trial_ids.append(np.repeat(np.arange(n_trials), c))
        type_ids.append(np.full(total, i, dtype=np.int64))

    lengths = counts.sum(axis=1)
    width = int(lengths.max()) if n_trials else 0
    types = np.full((n_trials, width), -1, dtype=np.int64)
    times = np.full((n_trials, width), np.inf)
    if width:
        trial_ids = np.concatenate(trial_ids)
        type_ids = np.concatenate(type_ids)
        stamps = np.concatenate(stamps)
        # lexsort is stable: generation order breaks time ties
        order = np.lexsort((stamps, trial_ids))
        trial_ids, type_ids, stamps = trial_ids[order], type_ids[order], stamps[order]
        starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
        pos = np.arange(len(trial_ids)) - starts[trial_ids]
        types[trial_ids, pos] = type_ids
        times[trial_ids, pos] = stamps
    return ArrivalBatch(types, times, lengths, counts)


def sample_poisson_arrivals(tg: TypeGraph, seed: int) -> ArrivalSequence:
    """One realization of the Poisson arrival process on ``[0, 1]``."""
    return sample_poisson_batch(tg, 1, seed).sequence(0, seed)


def adversarial_order(tg: TypeGraph, permutation_seed: int) -> ArrivalSequence:
    """Uniformly random arrival order, each type once, at times ``k / |I|``."""
    n = tg.n_types
    perm = substream(permutation_seed).permutation(n)
    return ArrivalSequence(tuple(Arrival(k / n, int(i)) for k, i in enumerate(perm)),
                           permutation_seed)
