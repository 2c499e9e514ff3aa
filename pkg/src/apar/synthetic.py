"""Planted synthetic corpora with known structure, for checks and demos."""

from __future__ import annotations

import numpy as np

from .ingest import RatingsDataset, ReviewRecord
from .personality import Lexicon, WeightTable, load_lexicon, load_weights

FILLER = ("the", "a", "this", "movie", "plot", "and", "it", "was", "of", "story", "with",
          "episode", "series", "actor", "time", "really", "quite", "on", "for", "its")

DEFAULT_CLUSTER_TRAITS = ("Openness", "Conscientiousness", "Extraversion", "Neuroticism")


def signature_words(trait: str, lex: Lexicon, wt: WeightTable) -> list[str]:
    """Words from every category the trait weighs positively."""
    words = []
    for cat, w in sorted(wt[trait].items()):
        if w > 0 and cat in lex.categories:
            words.extend(sorted(p.rstrip("*") for p in lex.categories[cat]))
    if not words:
        raise ValueError(f"no positively weighted category for {trait}")
    return words


def planted_corpus(
    n_clusters: int = 4,
    users_per_cluster: int = 50,
    n_shared_items: int = 100,
    ratings_per_user: int = 20,
    tail_items_per_user: int = 3,
    noise: float = 0.5,
    helpful_rate: float = 0.2,
    words_per_review: int = 30,
    signal_share: float = 0.3,
    seed: int = 0,
    domain: str = "synthetic",
    cluster_traits=DEFAULT_CLUSTER_TRAITS,
    lexicon: Lexicon | None = None,
    weights: WeightTable | None = None,
) -> tuple[RatingsDataset, dict[str, str]]:
    """Users in personality clusters that share item preferences.

    Each cluster owns a preference level in [1, 5] for every item; a rating
    is that level plus Gaussian noise, rounded and clipped to the 1..5 scale.
    Every user rates ``ratings_per_user`` items from a shared pool plus
    ``tail_items_per_user`` items nobody else rates. Review text mixes filler
    words with words from the categories the cluster's trait weighs
    positively, so the lexicon pipeline recovers the cluster.

    Returns the dataset and the planted trait of every user.
    """
    if n_clusters > len(cluster_traits):
        raise ValueError("more clusters than cluster traits")
    lex = lexicon or load_lexicon()
    wt = weights or load_weights()
    rng = np.random.default_rng(seed)
    n_users = n_clusters * users_per_cluster
    n_items = n_shared_items + n_users * tail_items_per_user
    prefs = rng.uniform(1.0, 5.0, size=(n_clusters, n_items))
    vocab = {t: signature_words(t, lex, wt) for t in cluster_traits[:n_clusters]}
    width = len(str(n_users - 1))
    iwidth = len(str(n_items - 1))

    records = []
    clusters = {}
    for u in range(n_users):
        c = u // users_per_cluster
        trait = cluster_traits[c]
        uid = f"u{u:0{width}d}"
        clusters[uid] = trait
        shared = rng.choice(n_shared_items, size=ratings_per_user, replace=False)
        tail = n_shared_items + u * tail_items_per_user + np.arange(tail_items_per_user)
        for j in np.concatenate([np.sort(shared), tail]):
            rating = int(np.clip(np.rint(prefs[c, j] + noise * rng.standard_normal()), 1, 5))
            n_sig = rng.binomial(words_per_review, signal_share)
            words = list(rng.choice(vocab[trait], size=n_sig))
            words += list(rng.choice(FILLER, size=words_per_review - n_sig))
            rng.shuffle(words)
            total = int(rng.integers(0, 6))
            records.append(ReviewRecord(
                user_id=uid,
                item_id=f"i{int(j):0{iwidth}d}",
                rating=rating,
                text=" ".join(words),
                helpful_votes=int(rng.binomial(total, helpful_rate)),
                total_votes=total,
                timestamp=int(rng.integers(1_300_000_000, 1_400_000_000)),
                domain=domain,
            ))
    return RatingsDataset.from_records(records), clusters


def planted_low_rank(n_users: int = 5, n_items: int = 5, rank: int = 1, observed: float = 0.6,
                     seed: int = 0, low: float = 1.0, high: float = 2.0):
    """A positive rank-``rank`` matrix and an observed mask with every row and column hit.

    Returns ``(W, mask)`` where ``W`` is zero off the mask.
    """
    rng = np.random.default_rng(seed)
    U = rng.uniform(low, high, size=(n_users, rank))
    V = rng.uniform(low, high, size=(n_items, rank))
    full = U @ V.T / rank
    n_obs = max(int(round(observed * n_users * n_items)), max(n_users, n_items))
    while True:
        mask = np.zeros(n_users * n_items)
        mask[rng.choice(n_users * n_items, size=n_obs, replace=False)] = 1.0
        mask = mask.reshape(n_users, n_items)
        if mask.sum(axis=1).all() and mask.sum(axis=0).all():
            return full * mask, mask
