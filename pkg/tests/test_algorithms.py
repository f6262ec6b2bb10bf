import json
import math

import numpy as np
import pytest

from conftest import small_instances
from oracles import phi_ew_quadrature, reg_term_ref
from stochmatch import algorithms as alg
from stochmatch import analysis, fractional, graph
from stochmatch.algorithms import Context, MatchState, MatcherConfig, balance_step
from stochmatch.arrivals import Arrival, ArrivalSequence, sample_poisson_arrivals
from stochmatch.simulate import ArrayFeeder

GRID = (np.arange(20_000) + 0.5) / 20_000


def outcome_probabilities(decide, ctx, make_state, arrival):
    """Exact-to-grid outcome distribution of a one-uniform decide function."""
    freq = {}
    for u in GRID:
        state = make_state()
        j = decide(ctx, state, arrival, ArrayFeeder([u]))
        freq[j] = freq.get(j, 0) + 1
    return {k: v / len(GRID) for k, v in freq.items()}


def _state(n_off, matched=(), levels=None, best=None):
    s = MatchState.fresh(n_off)
    s.matched[list(matched)] = True
    if levels is not None:
        s.levels[:] = levels
    if best is not None:
        s.best_weight[:] = best
    return s


# -- Balance ---------------------------------------------------------------

def test_balance_step_examples():
    assert balance_step([0, 0, 0]) == pytest.approx([1 / 3] * 3, abs=1e-15)
    assert balance_step([0, 0.4]) == pytest.approx([0.7, 0.3], abs=1e-15)
    assert balance_step([5.0, 0]).tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        balance_step([])


def test_water_fill_properties():
    rng = np.random.default_rng(0)
    levels = rng.exponential(0.7, (2000, 7)) * (rng.random((2000, 7)) < 0.8)
    mask = rng.random((2000, 7)) < 0.6
    mask[:, 0] = True
    alloc = alg.water_fill(levels, mask)
    assert np.allclose(alloc.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(alloc[~mask] == 0) and np.all(alloc >= 0)
    post = levels + alloc
    for k in range(len(levels)):
        pos = alloc[k] > 0
        ybar = post[k][pos].max()
        assert np.allclose(post[k][pos], ybar, atol=1e-12)
        assert np.all(levels[k][mask[k] & ~pos] >= ybar - 1e-12)


def test_balance_swor_probabilities():
    tg = graph.TypeGraph.from_edges(1, 2, [(0, 0), (0, 1)])
    ctx = Context.build(tg)
    pr = outcome_probabilities(alg.balance_swor_decide, ctx, lambda: _state(2, levels=[0, 0.4]), Arrival(0.1, 0))
    assert pr[0] == pytest.approx(0.7, abs=1e-4) and pr[1] == pytest.approx(0.3, abs=1e-4)
    pr = outcome_probabilities(alg.balance_swor_decide, ctx,
                               lambda: _state(2, matched=[0], levels=[0, 0.4]), Arrival(0.1, 0))
    assert pr == {1: 1.0}
    pr = outcome_probabilities(alg.balance_swor_decide, ctx, lambda: _state(2, matched=[0, 1]), Arrival(0.1, 0))
    assert pr == {None: 1.0}


def test_balance_swor_zero_mass_fallback():
    # neighbor 1 gets no allocation (high level) and neighbor 0 is matched
    tg = graph.TypeGraph.from_edges(1, 2, [(0, 0), (0, 1)])
    pr = outcome_probabilities(alg.balance_swor_decide, Context.build(tg),
                               lambda: _state(2, matched=[0], levels=[0, 5.0]), Arrival(0.1, 0))
    assert pr == {1: 1.0}


def test_ocs_weight_values():
    assert alg.ocs_weight(0.0) == 1.0
    w1 = math.exp(1 + 0.5 + (4 - 2 * math.sqrt(3)) / 3)
    assert alg.ocs_weight(1.0) == pytest.approx(w1, rel=1e-14)
    assert w1 == pytest.approx(5.3583, abs=1e-4)
    masses = alg.ocs_weight(np.array([1.0, 0.0])) * np.array([0.5, 0.5])
    hits = np.array([alg.sample_index(masses, u) for u in GRID])
    assert (hits == 0).mean() == pytest.approx(w1 / (w1 + 1), abs=1e-4)
    assert w1 / (w1 + 1) == pytest.approx(0.8427, abs=1e-4)


def test_balance_ocs_reduces_at_zero_levels():
    tg = graph.TypeGraph.from_edges(1, 3, [(0, 0), (0, 1), (0, 2)])
    ctx = Context.build(tg)
    a = outcome_probabilities(alg.balance_ocs_decide, ctx, lambda: _state(3), Arrival(0.0, 0))
    b = outcome_probabilities(alg.balance_swor_decide, ctx, lambda: _state(3), Arrival(0.0, 0))
    assert a == b


def test_balance_ocs_uses_pre_step_levels():
    # levels (1, 0.5): allocation (0.25, 0.75); masses w(1)*0.25 vs w(0.5)*0.75
    tg = graph.TypeGraph.from_edges(1, 2, [(0, 0), (0, 1)])
    pr = outcome_probabilities(alg.balance_ocs_decide, Context.build(tg),
                               lambda: _state(2, levels=[1.0, 0.5]), Arrival(0.0, 0))
    m0, m1 = alg.ocs_weight(1.0) * 0.25, alg.ocs_weight(0.5) * 0.75
    assert pr[0] == pytest.approx(m0 / (m0 + m1), abs=1e-4)


# -- Ranking / MinDegree ---------------------------------------------------

def test_ranking_examples():
    tg = graph.TypeGraph.from_edges(1, 2, [(0, 0), (0, 1)])
    ctx = Context.build(tg)
    s = _state(2)
    s.rank = np.array([0.9, 0.1])  # vertex 1 ranked first
    assert alg.ranking_decide(ctx, s, Arrival(0, 0)) == 1
    s = _state(2, matched=[1])
    s.rank = np.array([0.9, 0.1])
    assert alg.ranking_decide(ctx, s, Arrival(0, 0)) == 0
    s = _state(2, matched=[0, 1])
    s.rank = np.array([0.9, 0.1])
    assert alg.ranking_decide(ctx, s, Arrival(0, 0)) is None


def test_min_degree_examples():
    # offline 0 has degree 5, offline 1 degree 2
    edges = [(i, 0) for i in range(5)] + [(0, 1), (1, 1)]
    ctx = Context.build(graph.TypeGraph.from_edges(5, 2, edges))
    assert alg.min_degree_decide(ctx, _state(2), Arrival(0, 0)) == 1
    tie = Context.build(graph.TypeGraph.from_edges(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)]))
    assert alg.min_degree_decide(tie, _state(2), Arrival(0, 0)) == 0
    assert alg.min_degree_decide(tie, _state(2, matched=[0, 1]), Arrival(0, 0)) is None


# -- stochastic algorithms ------------------------------------------------

def _ctx_with_x(x, rates, edges=None, weights=None):
    x = np.asarray(x, dtype=float)
    n_i, n_j = x.shape
    edges = edges or [(i, j) for i in range(n_i) for j in range(n_j)]
    tg = graph.TypeGraph.from_edges(n_i, n_j, edges, rates, weights)
    return Context.build(tg, x)


def test_suggested_match_examples():
    ctx = _ctx_with_x([[0.6, 0.2]], [1.0])
    pr = outcome_probabilities(alg.suggested_match_decide, ctx, lambda: _state(2, matched=[0]), Arrival(0, 0))
    assert pr[1] == pytest.approx(0.2, abs=1e-4) and pr[None] == pytest.approx(0.8, abs=1e-4)
    ctx0 = _ctx_with_x([[0.0, 0.0]], [1.0])
    assert outcome_probabilities(alg.suggested_match_decide, ctx0, lambda: _state(2), Arrival(0, 0)) == {None: 1.0}
    ctx1 = _ctx_with_x([[2.0]], [2.0])
    assert outcome_probabilities(alg.suggested_match_decide, ctx1, lambda: _state(1), Arrival(0, 0)) == {0: 1.0}


def test_stochastic_swor_examples():
    ctx = _ctx_with_x([[0.6, 0.2]], [1.0])
    pr = outcome_probabilities(alg.stochastic_swor_decide, ctx, lambda: _state(2), Arrival(0, 0))
    assert pr[0] == pytest.approx(0.75, abs=1e-4) and pr[1] == pytest.approx(0.25, abs=1e-4)
    ctx = _ctx_with_x([[0.5, 0.1]], [1.0])
    assert outcome_probabilities(alg.stochastic_swor_decide, ctx, lambda: _state(2, matched=[0]),
                                 Arrival(0, 0)) == {1: 1.0}
    ctx = _ctx_with_x([[0.5, 0.0, 0.0]], [1.0])
    pr = outcome_probabilities(alg.stochastic_swor_decide, ctx, lambda: _state(3, matched=[0]), Arrival(0, 0))
    assert pr[1] == pytest.approx(0.5, abs=1e-4) and pr[2] == pytest.approx(0.5, abs=1e-4)


def test_regularized_greedy_at_end_picks_lowest_index():
    tg = small_instances(1, seed=11)[0]
    ctx = Context.build(tg, fractional.solve_natural_lp(tg))
    for i in range(tg.n_types):
        nbrs = tg.type_neighbors[i]
        s = _state(tg.n_offline, matched=nbrs[:1])
        free = [j for j in nbrs if not s.matched[j]]
        got = alg.regularized_greedy_decide(ctx, s, Arrival(1.0, i))
        assert got == (free[0] if free else None)


def test_regularized_greedy_single_neighbor_and_tie_rule():
    ctx = _ctx_with_x([[0.3, 0.3]], [1.0])
    assert alg.regularized_greedy_decide(ctx, _state(2, matched=[0]), Arrival(0.2, 0)) == 1
    hi = Context.build(ctx.tg, ctx.x, tie_break="highest-index")
    assert alg.regularized_greedy_decide(ctx, _state(2), Arrival(0.2, 0)) == 0
    assert alg.regularized_greedy_decide(hi, _state(2), Arrival(0.2, 0)) == 1


def test_regularized_greedy_argmin_matches_reference():
    rng = np.random.default_rng(3)
    for tg in small_instances(15, seed=12):
        x = fractional.solve_natural_lp(tg).dense
        ctx = Context.build(tg, x)
        for _ in range(5):
            s = _state(tg.n_offline, matched=np.flatnonzero(rng.random(tg.n_offline) < 0.3))
            i = int(rng.integers(tg.n_types))
            t = float(rng.random())
            free = [j for j in tg.type_neighbors[i] if not s.matched[j]]
            got = alg.regularized_greedy_decide(ctx, s, Arrival(t, i))
            if not free:
                assert got is None
                continue
            refs = {j: reg_term_ref(j, x.tolist(), (~s.matched).tolist(), tg.rates.tolist(), t, 0.4254)
                    for j in free}
            best = min(refs.values())
            assert refs[got] <= best + 1e-12


# -- edge-weighted ---------------------------------------------------------

def test_top_half_examples():
    ctx = _ctx_with_x([[0.5, 0.5]], [1.0], weights=[2.0, 2.0])
    assert outcome_probabilities(alg.top_half_decide, ctx, lambda: _state(2), Arrival(0, 0)) == {0: 1.0}
    ctx = _ctx_with_x([[0.25, 0.25]], [1.0], weights=[3.0, 2.0])
    pr = outcome_probabilities(alg.top_half_decide, ctx, lambda: _state(2), Arrival(0, 0))
    assert pr[0] == pytest.approx(0.5, abs=1e-4) and pr[1] == pytest.approx(0.5, abs=1e-4)
    assert None not in pr


def test_top_half_orders_by_marginal_weight():
    # vertex 0 already holds weight 2.5, so vertex 1 (marginal 2) comes first
    ctx = _ctx_with_x([[0.5, 0.5]], [1.0], weights=[3.0, 2.0])
    pr = outcome_probabilities(alg.top_half_decide, ctx, lambda: _state(2, matched=[0], best=[2.5, 0]),
                               Arrival(0, 0))
    assert pr == {1: 1.0}


def test_top_half_zero_marginal_is_noop():
    ctx = _ctx_with_x([[1.0]], [1.0], weights=[2.0])
    s = _state(1, matched=[0], best=[5.0])
    s.objective = 5.0
    assert alg.top_half_decide(ctx, s, Arrival(0, 0), ArrayFeeder([0.3])) == 0
    assert s.best_weight[0] == 5.0 and s.objective == 5.0


def test_regularized_greedy_ew_at_end_picks_max_marginal():
    ctx = _ctx_with_x([[0.3, 0.3, 0.3]], [1.0], weights=[2.0, 5.0, 5.0])
    assert alg.regularized_greedy_ew_decide(ctx, _state(3), Arrival(1.0, 0)) == 1
    s = _state(3, matched=[1], best=[0, 6.0, 0])
    assert alg.regularized_greedy_ew_decide(ctx, s, Arrival(1.0, 0)) == 2


def test_regularized_greedy_ew_argmax_matches_quadrature():
    rng = np.random.default_rng(4)
    for tg in small_instances(12, max_types=4, max_offline=4, weighted=True, seed=13):
        x = fractional.solve_natural_lp(tg).dense
        ctx = Context.build(tg, x)
        wm = tg.weight_matrix
        for _ in range(3):
            best = np.where(rng.random(tg.n_offline) < 0.5, 0.0, rng.uniform(0, 3, tg.n_offline))
            s = _state(tg.n_offline, matched=np.flatnonzero(best > 0), best=best)
            i = int(rng.integers(tg.n_types))
            t = float(rng.random())
            vals = {}
            for j in tg.type_neighbors[i]:
                after = best.copy()
                after[j] = max(best[j], wm[i, j])
                drop = phi_ew_quadrature(wm, best, x, tg.rates, t) - phi_ew_quadrature(wm, after, x, tg.rates, t)
                vals[j] = max(wm[i, j] - best[j], 0.0) - drop
            got = alg.regularized_greedy_ew_decide(ctx, s, Arrival(t, i))
            top = max(vals.values())
            if top < -1e-9:
                assert got is None
            elif got is not None:
                assert vals[got] >= top - 1e-9


# -- driver and invariants --------------------------------------------------

GREEDY = ("balance_swor", "ranking", "min_degree", "stochastic_swor", "regularized_greedy")


def test_run_examples():
    tg = graph.TypeGraph.from_edges(1, 1, [(0, 0)], [1.0])
    x = fractional.solve_natural_lp(tg)
    for name in alg.ALGORITHMS:
        if alg.ALGORITHMS[name].free_disposal:
            continue
        state, _ = alg.run(MatcherConfig(name, seed=1), tg, x, ArrivalSequence(()))
        assert state.objective == 0.0
    for name in GREEDY:
        state, _ = alg.run(MatcherConfig(name, seed=1), tg, x, ArrivalSequence((Arrival(0.5, 0),)))
        assert state.objective == 1.0


def test_run_is_deterministic_and_traces():
    tg = small_instances(1, seed=14)[0]
    x = fractional.solve_natural_lp(tg)
    seq = sample_poisson_arrivals(tg, 3)
    for name in ("stochastic_swor", "balance_ocs", "ranking"):
        _, t1 = alg.run(MatcherConfig(name, seed=9), tg, x, seq, trace=True)
        _, t2 = alg.run(MatcherConfig(name, seed=9), tg, x, seq, trace=True)
        assert alg.trace_to_jsonl(t1) == alg.trace_to_jsonl(t2)
        recs = [json.loads(line) for line in alg.trace_to_jsonl(t1).splitlines()]
        assert len(recs) == len(seq) and set(recs[0]) == {"t", "type", "matched", "phi"}


def test_config_validation():
    with pytest.raises(ValueError):
        MatcherConfig("nope")
    with pytest.raises(ValueError):
        MatcherConfig("stochastic_swor", theta=0.7)
    tg = graph.TypeGraph.from_edges(1, 1, [(0, 0)])
    with pytest.raises(ValueError):
        alg.run(MatcherConfig("stochastic_swor"), tg, None, ArrivalSequence(()))
    with pytest.raises(ValueError):
        alg.run(MatcherConfig("top_half"), tg, np.ones((1, 1)), ArrivalSequence(()))


@pytest.mark.parametrize("name", sorted(alg.ALGORITHMS))
def test_run_invariants(name):
    spec = alg.ALGORITHMS[name]
    for k, tg in enumerate(small_instances(8, weighted=spec.free_disposal, seed=15)):
        x = fractional.solve_natural_lp(tg)
        ctx = Context.build(tg, x)
        rng = np.random.default_rng(k)
        for r in range(10):
            seq = sample_poisson_arrivals(tg, 100 * k + r)
            state = alg.start_state(ctx, spec, rng)
            prev_levels = state.levels.copy()
            prev_best = state.best_weight.copy()
            for a in seq:
                before = state.matched.copy()
                had_free = any(not before[j] for j in tg.type_neighbors[a.type_id])
                obj_before = state.objective
                j = spec.decide(ctx, state, a, rng)
                if spec.greedy and name in GREEDY:
                    assert (j is not None) == had_free
                if name.startswith("balance") and tg.type_neighbors[a.type_id]:
                    assert state.levels.sum() - prev_levels.sum() == pytest.approx(1.0, abs=1e-12)
                assert np.all(state.levels >= prev_levels)
                assert np.all(state.best_weight >= prev_best)
                if not spec.free_disposal and j is not None:
                    assert not before[j]
                    assert state.objective - obj_before == pytest.approx(tg.weight(a.type_id, j))
                prev_levels = state.levels.copy()
                prev_best = state.best_weight.copy()
            if spec.free_disposal:
                assert state.objective == pytest.approx(state.best_weight.sum(), abs=1e-12)
            else:
                assert state.objective == pytest.approx(state.n_matched)


def test_balance_swor_unmatched_probability_bound_small():
    tg = graph.random_type_graph(6, 4, 0.5, seed=16)
    order = tuple(Arrival(k / 6, i) for k, i in enumerate([3, 1, 5, 0, 2, 4]))
    ctx = Context.build(tg)
    spec = alg.ALGORITHMS["balance_swor"]
    n = 20_000
    rng = np.random.default_rng(0)
    unmatched = np.zeros(tg.n_offline)
    for _ in range(n):
        s = alg.start_state(ctx, spec, rng)
        for a in order:
            spec.decide(ctx, s, a, rng)
        unmatched += ~s.matched
        levels = s.levels
    freq = unmatched / n
    q = analysis.q(levels)
    assert np.all(freq <= q + 3 * np.sqrt(q * (1 - q) / n) + 1e-12)
