"""Empirical ratios of the stochastic-model algorithms on one random instance.

Builds an 8x6 type graph, solves the natural LP by cutting planes, and runs
every unweighted algorithm on the same Poisson realizations.

Run: python3 demos/02_stochastic_ratios.py [trials]
"""

import sys

from stochmatch import fractional, graph, harness

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
tg = graph.random_type_graph(8, 6, 0.4, (0.5, 2.0), seed=3)
print(f"{tg.n_types} types, {tg.n_offline} offline vertices, {tg.n_edges} edges, "
      f"total rate {sum(tg.rates):.3f}")

x = fractional.solve_natural_lp(tg)
print(f"natural LP value {x.value:.6f}")
for j in range(tg.n_offline):
    worst = fractional.separation_oracle(j, x, tg, tol=-1.0)
    print(f"  offline {j}: load {x.dense[:, j].sum():.4f}, tightest subset {worst.subset} "
          f"slack {-worst.violation:.2e}")

ids = ["stochastic_swor", "regularized_greedy", "suggested_match", "ranking",
       "balance_swor", "balance_ocs", "min_degree"]
cfg = harness.ExperimentConfig(instance="inline", algorithms=[harness.AlgorithmEntry(a) for a in ids],
                               fractional={"source": "exact-lp"}, trials=trials, seed=1)
report = harness.run_stochastic_experiment(cfg, threads=4, tg=tg, x=x)
print()
print(f"{'algorithm':20s} {'E[ALG]':>8s} {'E[OPT]':>8s} {'ratio':>8s}")
for r in sorted(report.results, key=lambda r: -r.ratio):
    print(f"{r.algorithm:20s} {r.mean_alg:8.4f} {r.mean_opt:8.4f} {r.ratio:8.4f} +- {r.ci95:.4f}")
