"""Implicit Five-Factor personality scores from review text.

Each user's reviews are pooled, tokenized and scored against a word-category
lexicon; a trait score is a weighted sum of category frequencies. Users who
share a dominant trait are linked in a binary user-user graph whose Laplacian
drives the smoothness penalty of the factor model.
"""

from __future__ import annotations

import csv
import math
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping

import numpy as np

from .ingest import RatingsDataset

TRAITS = ("Openness", "Conscientiousness", "Extraversion", "Agreeableness", "Neuroticism")
TRAIT_ABBREV = dict(zip(TRAITS, "OCEAN"))

_TOKEN = re.compile(r"[^\W_]+")


class LexiconError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)
        self.lineno = lineno


@dataclass(frozen=True)
class Lexicon:
    """Category name -> patterns. A pattern ending in ``*`` matches by prefix."""

    categories: Mapping[str, frozenset[str]]

    def __post_init__(self):
        for name, patterns in self.categories.items():
            if not patterns:
                raise LexiconError(f"category {name!r} has no patterns")
            for p in patterns:
                if not p or p == "*" or "*" in p[:-1]:
                    raise LexiconError(f"bad pattern {p!r} in category {name!r}")

    @property
    def names(self) -> list[str]:
        return list(self.categories)

    def matches(self, token: str) -> list[str]:
        out = []
        for name, patterns in self.categories.items():
            if token in patterns or any(
                p.endswith("*") and token.startswith(p[:-1]) for p in patterns
            ):
                out.append(name)
        return out


def parse_lexicon(lines: Iterable[str]) -> Lexicon:
    """Read the plain-text lexicon format.

    ``%category NAME`` opens a category; following nonblank lines are its
    patterns; ``#`` starts a comment.
    """
    cats: dict[str, set[str]] = {}
    current = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("%"):
            head, _, name = line.partition(" ")
            name = name.strip()
            if head != "%category" or not name or " " in name:
                raise LexiconError(f"expected '%category NAME', got {line!r}", lineno)
            if name in cats:
                raise LexiconError(f"duplicate category {name!r}", lineno)
            cats[name] = set()
            current = name
            continue
        if current is None:
            raise LexiconError("pattern before any %category line", lineno)
        pat = line.lower()
        if " " in pat or pat == "*" or "*" in pat[:-1]:
            raise LexiconError(f"bad pattern {line!r}", lineno)
        cats[current].add(pat)
    for name, pats in cats.items():
        if not pats:
            raise LexiconError(f"category {name!r} has no patterns")
    return Lexicon({k: frozenset(v) for k, v in cats.items()})


def load_lexicon(path: str | os.PathLike | None = None) -> Lexicon:
    """Load a lexicon file; ``None`` loads the bundled demonstration lexicon."""
    if path is None:
        text = resources.files("apar").joinpath("data/demo_lexicon.txt").read_text("utf-8")
        return parse_lexicon(text.splitlines())
    with open(path, encoding="utf-8") as fh:
        return parse_lexicon(fh)


@dataclass(frozen=True)
class WeightTable:
    """Per-trait linear weights over lexicon categories."""

    weights: Mapping[str, Mapping[str, float]]

    def __post_init__(self):
        missing = [t for t in TRAITS if t not in self.weights]
        if missing:
            raise ValueError(f"weight table lacks traits: {', '.join(missing)}")
        for trait, row in self.weights.items():
            if trait not in TRAITS:
                raise ValueError(f"unknown trait {trait!r}")
            if not all(math.isfinite(w) for w in row.values()):
                raise ValueError(f"non-finite weight for {trait}")
            if not any(w != 0 for w in row.values()):
                raise ValueError(f"trait {trait} has no nonzero weight")

    def __getitem__(self, trait: str) -> Mapping[str, float]:
        return self.weights[trait]


def load_weights(path: str | os.PathLike | None = None) -> WeightTable:
    """Read a ``trait,category,weight`` CSV; ``None`` loads the bundled table."""
    if path is None:
        text = resources.files("apar").joinpath("data/demo_weights.csv").read_text("utf-8")
        rows = list(csv.DictReader(text.splitlines()))
    else:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"trait", "category", "weight"}:
        raise ValueError("weights CSV must have header trait,category,weight")
    table: dict[str, dict[str, float]] = defaultdict(dict)
    for n, row in enumerate(rows, start=2):
        try:
            table[row["trait"].strip()][row["category"].strip()] = float(row["weight"])
        except (TypeError, ValueError):
            raise ValueError(f"weights CSV line {n}: bad row {row}") from None
    return WeightTable(dict(table))


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def category_frequencies(tokens: Iterable[str], lex: Lexicon) -> dict[str, float]:
    """Share of tokens matching each category. A token may count for several."""
    counts = Counter(tokens)
    total = sum(counts.values())
    hits = dict.fromkeys(lex.names, 0)
    if total == 0:
        return {c: 0.0 for c in hits}
    for tok, n in counts.items():
        for c in lex.matches(tok):
            hits[c] += n
    return {c: h / total for c, h in hits.items()}


def trait_score(freqs: Mapping[str, float], weights: Mapping[str, float]) -> float:
    total = 0.0
    for c, w in weights.items():
        f = freqs.get(c, 0.0)
        if not (math.isfinite(w) and math.isfinite(f)):
            raise ValueError(f"non-finite weight or frequency for category {c!r}")
        total += w * f
    for c, f in freqs.items():
        if not math.isfinite(f):
            raise ValueError(f"non-finite frequency for category {c!r}")
    return total


def dominant_trait(scores: Mapping[str, float]) -> str:
    # max() keeps the first maximum, which gives the O, C, E, A, N tie order
    return max(TRAITS, key=lambda t: scores[t])


@dataclass(frozen=True)
class PersonalityProfile:
    trait_scores: Mapping[str, float]
    dominant: str
    untyped: bool = False


def profile_from_tokens(tokens: list[str], lex: Lexicon, wt: WeightTable) -> PersonalityProfile:
    freqs = category_frequencies(tokens, lex)
    scores = {t: trait_score(freqs, wt[t]) for t in TRAITS}
    # no lexicon evidence at all (which includes no text) leaves the user untyped
    untyped = not any(freqs.values())
    if untyped:
        scores = dict.fromkeys(TRAITS, 0.0)
    return PersonalityProfile(scores, dominant_trait(scores), untyped)


def user_profiles(ds: RatingsDataset, lex: Lexicon, wt: WeightTable) -> dict[str, PersonalityProfile]:
    """One profile per indexed user, computed from all of that user's review text.

    Users without records in ``ds`` (possible for splits that share the
    parent's index) come out untyped.
    """
    texts: dict[str, list[str]] = defaultdict(list)
    for r in ds.records:
        texts[r.user_id].append(r.text)
    return {u: profile_from_tokens(tokenize(" ".join(texts.get(u, ()))), lex, wt)
            for u in ds.user_ids}


def write_profiles_csv(profiles: Mapping[str, PersonalityProfile], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", *TRAIT_ABBREV.values(), "dominant", "untyped"])
        for u in sorted(profiles):
            p = profiles[u]
            w.writerow([u, *(repr(float(p.trait_scores[t])) for t in TRAITS), p.dominant,
                        int(p.untyped)])


def read_profiles_csv(path) -> dict[str, PersonalityProfile]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            scores = {t: float(row[a]) for t, a in TRAIT_ABBREV.items()}
            out[row["user_id"]] = PersonalityProfile(scores, row["dominant"],
                                                     bool(int(row["untyped"])))
    return out


@dataclass(frozen=True, eq=False)
class PersonalityGraph:
    """Same-personality adjacency ``L`` and its Laplacian ``Y = D - Z`` (with ``Z = L``)."""

    L: np.ndarray
    D: np.ndarray = field(init=False)
    Y: np.ndarray = field(init=False)

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ValueError("personality matrix must be square")
        if not np.array_equal(L, L.T):
            raise ValueError("personality matrix must be symmetric")
        if np.any(np.diag(L) != 0):
            raise ValueError("personality matrix must have a zero diagonal")
        object.__setattr__(self, "L", L)
        D = np.diag(L.sum(axis=1))
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "Y", D - L)

    @property
    def Z(self) -> np.ndarray:
        return self.L

    @property
    def n_users(self) -> int:
        return self.L.shape[0]

    @classmethod
    def empty(cls, n_users: int) -> "PersonalityGraph":
        return cls(np.zeros((n_users, n_users)))

    @classmethod
    def from_labels(cls, labels: Iterable) -> "PersonalityGraph":
        """Link users with equal labels; ``None`` marks an unlinked user."""
        labels = list(labels)
        M = len(labels)
        L = np.zeros((M, M))
        groups = defaultdict(list)
        for i, g in enumerate(labels):
            if g is not None:
                groups[g].append(i)
        for members in groups.values():
            idx = np.array(members)
            L[np.ix_(idx, idx)] = 1.0
        np.fill_diagonal(L, 0.0)
        return cls(L)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.L[i])


def build_personality_graph(profiles: Mapping[str, PersonalityProfile],
                            ds: RatingsDataset) -> PersonalityGraph:
    labels = []
    for u in ds.user_ids:
        if u not in profiles:
            raise KeyError(f"no personality profile for user {u!r}")
        p = profiles[u]
        labels.append(None if p.untyped else p.dominant)
    return PersonalityGraph.from_labels(labels)
