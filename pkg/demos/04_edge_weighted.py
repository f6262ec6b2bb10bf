"""Edge weights with free disposal.

An offline vertex may be rematched; only its heaviest matched edge counts.
Regularized Greedy nets the marginal weight against the drop of the
edge-weighted potential; Top-Half samples from the heaviest half of the
fractional mass.

Run: python3 demos/04_edge_weighted.py [trials]
"""

import sys

import numpy as np

from stochmatch import analysis as an
from stochmatch import fractional, graph, harness

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 5_000
tg = graph.random_type_graph(6, 5, 0.5, (0.5, 2.0), (0.5, 3.0), seed=5)
x = fractional.solve_natural_lp(tg)

# Potential at the start: nothing matched, every edge at full marginal weight.
state = an.EWState.from_best_weights(tg.weight_matrix, np.zeros(tg.n_offline), x.dense, tg.rates)
print(f"Phi(0) = {an.phi_ew(state, 0.0):.4f}  (X = {state.X():.4f}, Y = {state.Y():.4f})")
i, j = tg.edges[0]
print(f"regularization of edge {(i, j)} (w={tg.weight_matrix[i, j]:.3f}) at t=0.5: "
      f"{an.regularization_ew(i, j, state, 0.5):.4f}")

cfg = harness.ExperimentConfig(instance="inline", has_weights=True, trials=trials, seed=2,
                               fractional={"source": "exact-lp"},
                               algorithms=[harness.AlgorithmEntry(a) for a in
                                           ("regularized_greedy_ew", "top_half")])
report = harness.run_stochastic_experiment(cfg, tg=tg, x=x)
for r in report.results:
    print(f"{r.algorithm:22s} E[ALG]={r.mean_alg:.4f} E[OPT]={r.mean_opt:.4f} ratio {r.ratio:.4f} +- {r.ci95:.4f}")
