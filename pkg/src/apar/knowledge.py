"""Per-domain knowledge levels from review helpfulness votes.

A user's knowledge level in a domain is the mean helpful-vote fraction of
their reviews there. It shifts the mixing coefficient
``gamma = clamp(beta + kl, 0, 1)`` toward the user's own factors.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .ingest import RatingsDataset, ReviewRecord


def review_helpfulness(rec: ReviewRecord) -> float:
    if rec.helpful_votes < 0 or rec.total_votes < 0 or rec.helpful_votes > rec.total_votes:
        raise ValueError(f"invalid votes ({rec.helpful_votes}, {rec.total_votes})")
    if rec.total_votes == 0:
        return 0.0
    return rec.helpful_votes / rec.total_votes


def knowledge_level(user: int, domain: str, ds: RatingsDataset) -> float:
    """Mean helpfulness of ``user``'s reviews in ``domain``; 0 without reviews."""
    if not 0 <= user < ds.n_users:
        raise ValueError(f"unknown user index {user}")
    uid = ds.user_ids[user]
    vals = [review_helpfulness(r) for r in ds.records if r.user_id == uid and r.domain == domain]
    return sum(vals) / len(vals) if vals else 0.0


def mixing_coefficient(beta: float, kl: float) -> float:
    return min(max(beta + kl, 0.0), 1.0)


@dataclass(frozen=True)
class KnowledgeTable:
    """Knowledge levels and mixing coefficients keyed by ``(user index, domain)``.

    With ``use_knowledge=False`` every coefficient is the constant ``beta``
    (clamped), ignoring helpfulness.
    """

    kl: Mapping[tuple[int, str], float]
    beta: float
    n_users: int
    use_knowledge: bool = True

    @property
    def gamma(self) -> dict[tuple[int, str], float]:
        return {k: self.gamma_for(*k) for k in self.kl}

    @property
    def domains(self) -> list[str]:
        return sorted({d for _, d in self.kl})

    def gamma_for(self, user: int, domain: str) -> float:
        kl = self.kl.get((user, domain), 0.0) if self.use_knowledge else 0.0
        return mixing_coefficient(self.beta, kl)

    def gamma_vector(self, domain: str | None = None) -> np.ndarray:
        """Per-user coefficients for one domain (the only one when ``domain`` is None)."""
        if domain is None:
            doms = self.domains
            if len(doms) > 1:
                raise ValueError(f"table spans several domains {doms}; pass one explicitly")
            domain = doms[0] if doms else ""
        return np.array([self.gamma_for(i, domain) for i in range(self.n_users)])

    def to_csv(self, path, user_ids) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "domain", "kl", "gamma"])
            for (i, d) in sorted(self.kl, key=lambda k: (user_ids[k[0]], k[1])):
                w.writerow([user_ids[i], d, repr(float(self.kl[i, d])), repr(self.gamma_for(i, d))])


def build_knowledge_table(ds: RatingsDataset, beta: float = 0.5,
                          use_knowledge: bool = True) -> KnowledgeTable:
    if not math.isfinite(beta):
        raise ValueError("beta must be finite")
    sums: dict[tuple[int, str], list[float]] = defaultdict(lambda: [0.0, 0])
    for r in ds.records:
        acc = sums[ds.user_index[r.user_id], r.domain]
        acc[0] += review_helpfulness(r)
        acc[1] += 1
    kl = {k: s / n for k, (s, n) in sums.items()}
    return KnowledgeTable(kl, float(beta), ds.n_users, use_knowledge)
