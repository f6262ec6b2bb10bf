import numpy as np
import pytest

from oracles import best_matching_dp, has_augmenting_path, realized_weights
from stochmatch import graph, offline
from stochmatch.offline import RealizedGraph, max_cardinality_matching, max_weight_matching


def _random_realized(rng, max_u, max_v, weighted):
    nu, nv = int(rng.integers(1, max_u + 1)), int(rng.integers(1, max_v + 1))
    p = rng.uniform(0.1, 0.8)
    edges = tuple((u, v) for u in range(nu) for v in range(nv) if rng.random() < p)
    weights = tuple(float(w) for w in rng.uniform(0.1, 10.0, len(edges))) if weighted else None
    return RealizedGraph(nu, nv, edges, weights)


def test_k33_and_star():
    k33 = RealizedGraph(3, 3, tuple((u, v) for u in range(3) for v in range(3)))
    assert max_cardinality_matching(k33).size == 3
    star = RealizedGraph(5, 1, tuple((u, 0) for u in range(5)))
    assert max_cardinality_matching(star).size == 1


def test_weighted_examples():
    assert max_weight_matching(RealizedGraph(1, 1, ((0, 0),), (5.0,))).weight == 5.0
    g = RealizedGraph(2, 1, ((0, 0), (1, 0)), (3.0, 7.0))
    m = max_weight_matching(g)
    assert m.weight == 7.0 and m.pairs == ((1, 0),)
    with pytest.raises(ValueError):
        max_weight_matching(RealizedGraph(1, 1, ((0, 0),)))


def test_weight_beats_cardinality_when_it_should():
    # one heavy edge versus two light ones sharing endpoints
    g = RealizedGraph(2, 2, ((0, 0), (0, 1), (1, 0)), (10.0, 1.0, 1.0))
    assert max_weight_matching(g).weight == 10.0
    assert max_cardinality_matching(g).size == 2


def test_cardinality_against_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = _random_realized(rng, 8, 8, weighted=False)
        m = max_cardinality_matching(g)
        assert m.is_valid(g)
        assert m.size == best_matching_dp(g.n_online, g.n_offline, realized_weights(g, unit=True))
        assert not has_augmenting_path(g, m.pairs)


def test_weight_against_exhaustive():
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = _random_realized(rng, 7, 7, weighted=True)
        m = max_weight_matching(g)
        assert m.is_valid(g)
        assert m.weight == pytest.approx(best_matching_dp(g.n_online, g.n_offline, realized_weights(g)),
                                         rel=1e-12, abs=1e-12)


def test_empty_graphs():
    assert max_cardinality_matching(RealizedGraph(0, 3, ())).size == 0
    assert max_weight_matching(RealizedGraph(2, 2, (), ())).weight == 0.0


def test_realize_inherits_type_edges():
    tg = graph.TypeGraph.from_edges(2, 3, [(0, 0), (0, 2), (1, 1)], [1, 1], [2.0, 3.0, 4.0])
    g = offline.realize(tg, [1, 0, 0])
    assert g.edges == ((0, 1), (1, 0), (1, 2), (2, 0), (2, 2))
    assert g.weights == (4.0, 2.0, 3.0, 2.0, 3.0)


def test_hindsight_oracle_caps_counts():
    tg = graph.TypeGraph.from_edges(2, 2, [(0, 0), (1, 0), (1, 1)])
    orc = offline.HindsightOracle(tg)
    assert orc.key([5, 7]) == (1, 2)
    assert orc.value([5, 7]) == 2.0 == orc.value([1, 2])
    assert orc.values(np.array([[0, 0], [3, 0], [0, 1]])).tolist() == [0.0, 1.0, 1.0]
    pbt = orc.pairs_by_type([1, 1])
    assert pbt.sum() == 2 and np.all(pbt <= tg.adjacency)


def test_parse_realized_graph():
    g = offline.parse_realized_graph("# online offline w\n10 3 2.5\n11 3 1\n10 7 4\n10 3 9\n", True)
    assert (g.n_online, g.n_offline) == (2, 2)
    assert g.edges == ((0, 0), (0, 1), (1, 0)) and g.weights == (2.5, 4.0, 1.0)
    assert max_weight_matching(g).weight == 5.0
