"""
From review text to a personality graph
=======================================

Each user's reviews are pooled and tokenized. Word-category frequencies are
combined with per-trait regression weights, and the highest-scoring trait
is the user's dominant trait. Users sharing a dominant trait become
neighbors in the personality graph.
"""

import numpy as np

from apar import (build_personality_graph, category_frequencies,
                  load_lexicon, load_weights, parse_reviews, tokenize, trait_score,
                  user_profiles)

lex = load_lexicon()
weights = load_weights()

tokens = tokenize("We talked to the child about the baby, and saw the whole scene.")
freqs = category_frequencies(tokens, lex)
print({c: round(f, 3) for c, f in freqs.items() if f})

# Conscientiousness uses social, human and seeing words
print("Conscientiousness:", round(trait_score(freqs, weights["Conscientiousness"]), 5))

# a handful of hand-written reviews
lines = [
    '{"reviewerID": "ann", "asin": "v1", "overall": 5, "reviewText": "I think the idea is curious and deep"}',
    '{"reviewerID": "bob", "asin": "v2", "overall": 4, "reviewText": "we talked with the kids and family"}',
    '{"reviewerID": "cat", "asin": "v1", "overall": 4, "reviewText": "I wonder what it means, I consider it"}',
    '{"reviewerID": "dan", "asin": "v3", "overall": 2, "reviewText": ""}',
]
ds = parse_reviews("\n".join(lines).encode())
profiles = user_profiles(ds, lex, weights)
for uid, p in profiles.items():
    print(uid, "untyped" if p.untyped else p.dominant)

graph = build_personality_graph(profiles, ds)
print(graph.L)

# the Laplacian penalty is the sum of squared differences over linked pairs
v = np.arange(ds.n_users, dtype=float)
print(v @ graph.Y @ v, 0.5 * np.sum(graph.Z * (v[:, None] - v[None, :]) ** 2))
