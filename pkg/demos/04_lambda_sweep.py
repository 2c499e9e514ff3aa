"""
How much personality regularization?
====================================

The weight lambda pulls together the latent factors of users who share a
dominant trait. At zero the graph only enters through the neighbor blend.
"""

from apar import Hyperparams, lambda_sweep
from apar.synthetic import planted_corpus

ds, _ = planted_corpus(seed=0)
grid = (0.0, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9)
report = lambda_sweep(ds, grid, hp=Hyperparams(d=10, max_iters=300), seeds=(0, 1, 2))
print(report.render_table())

best = min(grid, key=lambda lam: report.mean("APAR", lam)[0])
print("lowest MAE at lambda =", best)
