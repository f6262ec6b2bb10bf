"""Balance SWOR against fixed arrival orders.

For each order the water levels y_j are deterministic, and the chance that
offline vertex j ends unmatched should stay below q(y_j).  Also compares the
worst order ratio of Balance SWOR, Balance+OCS and Ranking.

Run: python3 demos/03_adversarial_balance.py
"""

import numpy as np

from stochmatch import algorithms as alg
from stochmatch import analysis as an
from stochmatch import graph, harness
from stochmatch import simulate as sim
from stochmatch.arrivals import adversarial_order

tg = graph.random_type_graph(7, 6, 0.3, seed=2)
order = adversarial_order(tg, 4)
print("arrival order:", order.types.tolist())

runs = 50_000
batch = sim.adversarial_batch(order, runs, tg.n_types)
rand = sim.draw_randomness("balance_swor", runs, batch.max_len, tg.n_offline, np.random.default_rng(0))
res = sim.simulate_batch("balance_swor", alg.Context.build(tg), batch, rand)
y = res.levels[0]
print(f"\n{'j':>2s} {'y_j':>7s} {'P[unmatched]':>13s} {'q(y_j)':>8s}")
for j in range(tg.n_offline):
    print(f"{j:2d} {y[j]:7.4f} {1 - res.matched[:, j].mean():13.4f} {an.q(y[j]):8.4f}")

cfg = harness.ExperimentConfig(instance="inline", model="adversarial", orders=100, runs_per_order=500,
                               algorithms=[harness.AlgorithmEntry(a) for a in
                                           ("balance_swor", "balance_ocs", "ranking", "min_degree")])
report = harness.run_adversarial_experiment(cfg, tg=tg)
print(f"\nOPT with every type once: {harness.hindsight_full(tg)}")
for r in report.results:
    print(f"{r.algorithm:14s} mean ratio {r.ratio:.4f}  worst order {r.worst_ratio:.4f} +- {r.worst_ci95:.4f}")
