import math
from collections import Counter

import numpy as np
from scipy import stats

from stochmatch import arrivals, graph
from stochmatch.arrivals import (ArrivalBatch, ArrivalSequence, adversarial_order,
                                 sample_poisson_arrivals, sample_poisson_batch)

N = 100_000


def _one_type(rate):
    return graph.TypeGraph.from_edges(1, 1, [(0, 0)], [rate])


def test_poisson_zero_class_rate_one():
    b = sample_poisson_batch(_one_type(1.0), N, seed=11)
    p0 = math.exp(-1)
    freq = float((b.lengths == 0).mean())
    assert abs(freq - p0) <= 3 * math.sqrt(p0 * (1 - p0) / N)


def test_poisson_mean_rate_two():
    b = sample_poisson_batch(_one_type(2.0), N, seed=12)
    assert abs(b.lengths.mean() - 2.0) <= 3 * math.sqrt(2.0 / N)


def test_tiny_rate_mostly_empty():
    b = sample_poisson_batch(_one_type(1e-6), 1000, seed=1)
    assert b.lengths.sum() <= 1


def test_counts_chi_square_fit():
    tg = graph.TypeGraph.from_edges(3, 1, [(0, 0), (1, 0), (2, 0)], [0.5, 1.0, 2.5])
    b = sample_poisson_batch(tg, 20_000, seed=5)
    for i, lam in enumerate(tg.rates):
        k = np.arange(0, 8)
        expected = stats.poisson.pmf(k, lam)
        expected = np.append(expected, 1 - expected.sum()) * b.n_trials
        observed = np.bincount(np.minimum(b.counts[:, i], 8), minlength=9)
        keep = expected > 5
        obs = np.append(observed[keep], observed[~keep].sum())
        exp = np.append(expected[keep], expected[~keep].sum())
        if exp[-1] == 0:
            obs, exp = obs[:-1], exp[:-1]
        assert stats.chisquare(obs, exp).pvalue > 0.001


def test_sequences_sorted_and_deterministic():
    tg = graph.random_type_graph(5, 3, 0.5, (0.5, 2.0), seed=2)
    s1 = sample_poisson_arrivals(tg, 77)
    s2 = sample_poisson_arrivals(tg, 77)
    assert s1.to_jsonl() == s2.to_jsonl()
    assert np.all(np.diff(s1.times) >= 0)
    assert all(0 <= a.time <= 1 for a in s1)
    assert sample_poisson_arrivals(tg, 78).to_jsonl() != s1.to_jsonl() or len(s1) == 0


def test_batch_padding_and_counts():
    tg = graph.random_type_graph(4, 3, 0.5, (0.5, 3.0), seed=4)
    b = sample_poisson_batch(tg, 500, seed=9)
    for k in range(b.n_trials):
        n = b.lengths[k]
        assert np.all(b.types[k, n:] == -1) and np.all(np.isinf(b.times[k, n:]))
        assert np.array_equal(np.bincount(b.types[k, :n], minlength=4), b.counts[k])
        assert np.all(np.diff(b.times[k, :n]) >= 0)


def test_adding_a_type_keeps_other_streams():
    small = graph.TypeGraph.from_edges(2, 1, [(0, 0), (1, 0)], [1.0, 2.0])
    big = graph.TypeGraph.from_edges(3, 1, [(0, 0), (1, 0), (2, 0)], [1.0, 2.0, 0.7])
    a = sample_poisson_batch(small, 200, seed=3)
    b = sample_poisson_batch(big, 200, seed=3)
    assert np.array_equal(a.counts, b.counts[:, :2])


def test_jsonl_round_trip():
    tg = graph.random_type_graph(3, 3, 0.7, (1, 3), seed=0)
    s = sample_poisson_arrivals(tg, 5)
    back = ArrivalSequence.from_jsonl(s.to_jsonl())
    assert back.arrivals == s.arrivals


def test_from_sequences_matches_sampler():
    tg = graph.random_type_graph(3, 2, 0.7, (1, 2), seed=0)
    b = sample_poisson_batch(tg, 20, seed=1)
    again = ArrivalBatch.from_sequences([b.sequence(k) for k in range(20)], 3)
    assert np.array_equal(again.types, b.types) and np.array_equal(again.counts, b.counts)


def test_adversarial_single_and_three():
    one = adversarial_order(graph.TypeGraph.from_edges(1, 1, [(0, 0)]), 4)
    assert [(a.time, a.type_id) for a in one] == [(0.0, 0)]
    tg = graph.TypeGraph.from_edges(3, 1, [(0, 0), (1, 0), (2, 0)])
    seq = adversarial_order(tg, 123)
    assert sorted(seq.types.tolist()) == [0, 1, 2]
    assert np.all(np.diff(seq.times) > 0)
    assert adversarial_order(tg, 123) == seq


def test_adversarial_permutations_uniform():
    tg = graph.TypeGraph.from_edges(3, 1, [(0, 0), (1, 0), (2, 0)])
    counts = Counter(tuple(adversarial_order(tg, s).types.tolist()) for s in range(N))
    assert len(counts) == 6
    p = 1 / 6
    sigma = math.sqrt(p * (1 - p) / N)
    for c in counts.values():
        assert abs(c / N - p) <= 3 * sigma + 1e-12


def test_derive_seed_and_substream_deterministic():
    assert arrivals.derive_seed(1, 2) == arrivals.derive_seed(1, 2)
    assert arrivals.derive_seed(1, 2) != arrivals.derive_seed(1, 3)
    assert arrivals.substream(5, 1).random() == arrivals.substream(5, 1).random()
