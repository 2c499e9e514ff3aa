"""
Quickstart: fit the personality-aware model on a planted corpus
================================================================

A synthetic review corpus stands in for real data. Users fall into four
personality clusters, and each cluster shares a taste over a common pool of
items. Review text carries the cluster's signature words.
"""

import numpy as np

from apar import Hyperparams, fit_apar, mae, recommend_top_n, split_train_test
from apar.synthetic import planted_corpus

ds, clusters = planted_corpus(seed=0)
print(ds)

# hold out 10% of the ratings for testing
train, test = split_train_test(ds, 0.9, seed=0)

# a small latent dimension keeps the demo fast; the default is 100
hp = Hyperparams(d=10, max_iters=300)
fitted = fit_apar(train, hp)
model = fitted.model
print(f"{model.n_iter} iterations, objective {model.objective:.2f}")

# personality neighbors come from the dominant trait read off review text
dominant = [fitted.profiles[u].dominant for u in train.user_ids]
agree = np.mean([dominant[i] == clusters[u] for i, u in enumerate(train.user_ids)])
print(f"dominant trait matches the planted cluster for {agree:.0%} of users")

u, v, truth = test.arrays
pred = model.predict_pairs(u, v, clip=ds.rating_scale)
print(f"test MAE {mae(pred, truth):.3f}")

# top 5 unrated items for the first user
for j, score in recommend_top_n(model, 0, 5, interactions=fitted.interactions):
    print(ds.item_ids[j], round(score, 3))
