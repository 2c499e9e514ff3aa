"""Review-corpus ingestion, the interaction matrix, and dataset splits.

Reviews arrive as JSON lines in the Amazon review schema::

    {"reviewerID": "u1", "asin": "v1", "overall": 4, "reviewText": "...",
     "helpful": [3, 4], "unixReviewTime": 1400000000}

Records are kept in canonical order (user id, item id, timestamp) and users
and items are indexed densely by sorted id. Every dataset derived from a
parent (splits, folds, sparsified subsets) shares the parent's index maps, so
factor-matrix rows stay aligned across experiments.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

DEFAULT_SCALE = (1, 5)


class DatasetError(ValueError):
    """Raised for invalid or empty datasets."""


class ParseError(DatasetError):
    """A malformed input line."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DSWError(DatasetError):
    """The requested no-common-feedback degree cannot be reached."""

    def __init__(self, message: str, achieved: float, user: str | None = None):
        super().__init__(message)
        self.achieved = achieved
        self.user = user


@dataclass(frozen=True)
class ReviewRecord:
    user_id: str
    item_id: str
    rating: int
    text: str = ""
    helpful_votes: int = 0
    total_votes: int = 0
    timestamp: int = 0
    domain: str = "default"

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise DatasetError("user_id and item_id must be nonempty")
        if self.helpful_votes < 0 or self.total_votes < 0:
            raise DatasetError("vote counts must be nonnegative")
        if self.helpful_votes > self.total_votes:
            raise DatasetError(
                f"helpful_votes ({self.helpful_votes}) exceeds total_votes ({self.total_votes})"
            )

    @property
    def sort_key(self):
        return (self.user_id, self.item_id, self.timestamp)

    def to_json(self) -> dict:
        return {
            "reviewerID": self.user_id,
            "asin": self.item_id,
            "overall": self.rating,
            "reviewText": self.text,
            "helpful": [self.helpful_votes, self.total_votes],
            "unixReviewTime": self.timestamp,
            "domain": self.domain,
        }


@dataclass(frozen=True)
class ParseStats:
    parsed: int = 0
    skipped_blank: int = 0
    rejected: int = 0
    duplicates: int = 0


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    """An immutable, deduplicated collection of reviews with frozen index maps.

    Construct with :meth:`from_records`; the plain constructor expects records
    already in canonical order and index maps covering them.
    """

    records: tuple[ReviewRecord, ...]
    user_index: dict[str, int]
    item_index: dict[str, int]
    rating_scale: tuple[int, int] = DEFAULT_SCALE
    parse_stats: ParseStats | None = field(default=None, compare=False)

    @classmethod
    def from_records(
        cls,
        records: Iterable[ReviewRecord],
        rating_scale: tuple[int, int] = DEFAULT_SCALE,
        parse_stats: ParseStats | None = None,
    ) -> "RatingsDataset":
        records = _dedup(records)
        if not records:
            raise DatasetError("empty dataset")
        lo, hi = rating_scale
        for r in records:
            if not lo <= r.rating <= hi:
                raise DatasetError(f"rating {r.rating} outside scale {rating_scale}")
        users = sorted({r.user_id for r in records})
        items = sorted({r.item_id for r in records})
        return cls(
            records=tuple(records),
            user_index={u: i for i, u in enumerate(users)},
            item_index={v: j for j, v in enumerate(items)},
            rating_scale=tuple(rating_scale),
            parse_stats=parse_stats,
        )

    def subset(self, records: Iterable[ReviewRecord]) -> "RatingsDataset":
        """A dataset over ``records`` sharing this dataset's index maps."""
        records = tuple(sorted(records, key=lambda r: r.sort_key))
        return RatingsDataset(records, self.user_index, self.item_index, self.rating_scale)

    def __len__(self):
        return len(self.records)

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    @cached_property
    def user_ids(self) -> list[str]:
        return sorted(self.user_index, key=self.user_index.__getitem__)

    @cached_property
    def item_ids(self) -> list[str]:
        return sorted(self.item_index, key=self.item_index.__getitem__)

    @cached_property
    def domains(self) -> list[str]:
        return sorted({r.domain for r in self.records})

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row indices, column indices and ratings, one entry per record."""
        u = np.fromiter((self.user_index[r.user_id] for r in self.records), dtype=np.intp,
                        count=len(self.records))
        v = np.fromiter((self.item_index[r.item_id] for r in self.records), dtype=np.intp,
                        count=len(self.records))
        y = np.fromiter((r.rating for r in self.records), dtype=float, count=len(self.records))
        return u, v, y

    def user_items(self) -> dict[int, set[int]]:
        """Map of user index to the set of rated item indices (present users only)."""
        out: dict[int, set[int]] = defaultdict(set)
        for r in self.records:
            out[self.user_index[r.user_id]].add(self.item_index[r.item_id])
        return dict(out)

    def active_users(self) -> list[int]:
        return sorted(self.user_items())

    def dumps(self) -> str:
        """Canonical JSON-lines dump, sorted by user id, item id, timestamp."""
        buf = io.StringIO()
        for r in self.records:
            buf.write(json.dumps(r.to_json(), ensure_ascii=False, separators=(",", ":")))
            buf.write("\n")
        return buf.getvalue()

    def dump(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.user_ids, self.item_ids, list(self.rating_scale)]).encode())
        h.update(self.dumps().encode("utf-8"))
        return h.hexdigest()

    def __repr__(self):
        return (f"RatingsDataset(records={len(self.records)}, users={self.n_users}, "
                f"items={self.n_items}, scale={self.rating_scale})")


def _dedup(records: Iterable[ReviewRecord]) -> list[ReviewRecord]:
    # latest timestamp wins; ties go to the later record in input order
    latest: dict[tuple[str, str], ReviewRecord] = {}
    for r in records:
        key = (r.user_id, r.item_id)
        prev = latest.get(key)
        if prev is None or r.timestamp >= prev.timestamp:
            latest[key] = r
    return sorted(latest.values(), key=lambda r: r.sort_key)


def _open_lines(source) -> Iterable[str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            yield from (line.decode("utf-8") for line in fh)
        return
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    for line in source:
        yield line.decode("utf-8") if isinstance(line, (bytes, bytearray)) else line


def _as_int(value, name: str, lineno: int) -> int:
    if isinstance(value, bool):
        raise ParseError(lineno, f"{name} must be numeric")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        try:
            return _as_int(float(value), name, lineno)
        except ValueError:
            pass
    raise ParseError(lineno, f"{name} must be an integer, got {value!r}")


def parse_reviews(
    source: str | os.PathLike | IO | bytes | Iterable,
    domain: str = "default",
    rating_scale: tuple[int, int] = DEFAULT_SCALE,
) -> RatingsDataset:
    """Parse a JSON-lines review corpus.

    ``source`` may be a path, raw bytes, a binary/text file object or an
    iterable of lines. A per-line ``domain`` key overrides ``domain``.
    Records whose rating falls outside ``rating_scale`` or whose helpful vote
    count exceeds the total are rejected and counted; structurally malformed
    lines raise :class:`ParseError` with the line number.
    """
    lo, hi = rating_scale
    records = []
    blank = rejected = 0
    for lineno, line in enumerate(_open_lines(source), start=1):
        if not line.strip():
            blank += 1
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(lineno, "expected a JSON object")
        for key in ("reviewerID", "asin", "overall"):
            if key not in obj:
                raise ParseError(lineno, f"missing key {key!r}")
        rating = _as_int(obj["overall"], "overall", lineno)
        helpful = obj.get("helpful", [0, 0])
        if not (isinstance(helpful, list) and len(helpful) == 2):
            raise ParseError(lineno, "helpful must be a two-element array")
        hv = _as_int(helpful[0], "helpful[0]", lineno)
        tv = _as_int(helpful[1], "helpful[1]", lineno)
        text = obj.get("reviewText", "") or ""
        if not isinstance(text, str):
            raise ParseError(lineno, "reviewText must be a string")
        if not lo <= rating <= hi or hv < 0 or tv < 0 or hv > tv:
            rejected += 1
            logger.debug("line %d rejected (rating=%s helpful=%s)", lineno, rating, helpful)
            continue
        try:
            records.append(ReviewRecord(
                user_id=str(obj["reviewerID"]),
                item_id=str(obj["asin"]),
                rating=rating,
                text=text,
                helpful_votes=hv,
                total_votes=tv,
                timestamp=_as_int(obj.get("unixReviewTime", 0), "unixReviewTime", lineno),
                domain=str(obj.get("domain", domain)),
            ))
        except DatasetError as exc:
            raise ParseError(lineno, str(exc)) from None
    if not records:
        raise DatasetError("empty dataset")
    deduped = len(_dedup(records))
    stats = ParseStats(parsed=len(records), skipped_blank=blank, rejected=rejected,
                       duplicates=len(records) - deduped)
    logger.info("parsed %d records (%d rejected, %d duplicates collapsed)",
                stats.parsed, stats.rejected, stats.duplicates)
    return RatingsDataset.from_records(records, rating_scale, parse_stats=stats)


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Sparse user-item matrix holding raw rating magnitudes; zero means unobserved."""

    W: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    @property
    def nnz(self) -> int:
        return self.W.nnz

    def dense(self) -> np.ndarray:
        return self.W.toarray()

    def mask(self) -> np.ndarray:
        """The observed-entry indicator as a dense float array."""
        m = np.zeros(self.shape)
        r, c = self.W.nonzero()
        m[r, c] = 1.0
        return m

    def rated_items(self, user: int) -> np.ndarray:
        row = self.W.getrow(user)
        return np.sort(row.indices)


def build_interaction_matrix(ds: RatingsDataset) -> InteractionMatrix:
    u, v, y = ds.arrays
    if np.any(y <= 0):
        raise DatasetError("stored ratings must be positive; zero marks an unobserved entry")
    W = sp.csr_matrix((y, (u, v)), shape=(ds.n_users, ds.n_items))
    W.sum_duplicates()
    W.sort_indices()
    return InteractionMatrix(W)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_train_test(ds: RatingsDataset, train_fraction: float, seed: int):
    """Random record-level split; ``round(fraction * n)`` records go to train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(ds.records)
    if n < 2:
        raise DatasetError("need at least two records to split")
    n_train = min(max(_round_half_up(train_fraction * n), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return (ds.subset(ds.records[i] for i in train_idx),
            ds.subset(ds.records[i] for i in test_idx))


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Test-fold record ordinals for ``k`` near-equal folds."""
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of records ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def kfold(ds: RatingsDataset, k: int, seed: int):
    """``k`` (train, test) pairs whose test folds partition the records."""
    folds = kfold_indices(len(ds.records), k, seed)
    out = []
    for f in folds:
        held = set(f.tolist())
        out.append((ds.subset(r for i, r in enumerate(ds.records) if i not in held),
                    ds.subset(ds.records[i] for i in f)))
    return out


def write_split_manifest(folds: Sequence[Sequence[int]], path: str | os.PathLike) -> None:
    """One line per fold: ``fold <n>:`` followed by the held-out record ordinals."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for n, f in enumerate(folds):
            fh.write(f"fold {n}: " + " ".join(str(int(i)) for i in f) + "\n")


def read_split_manifest(path: str | os.PathLike) -> list[list[int]]:
    folds = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                _, _, rest = line.partition(":")
                folds.append([int(t) for t in rest.split()])
    return folds


def _isolated_users(user_items: dict[int, set[int]], raters: dict[int, set[int]]) -> set[int]:
    return {u for u, items in user_items.items() if all(len(raters[j]) == 1 for j in items)}


def _raters(user_items: dict[int, set[int]]) -> dict[int, set[int]]:
    raters: dict[int, set[int]] = defaultdict(set)
    for u, items in user_items.items():
        for j in items:
            raters[j].add(u)
    return raters


def dsw_degree(ds: RatingsDataset) -> float:
    """Fraction of users sharing no rated item with any other user.

    The denominator counts users with at least one record in ``ds``.
    """
    ui = ds.user_items()
    if not ui:
        raise DatasetError("empty dataset")
    return len(_isolated_users(ui, _raters(ui))) / len(ui)


def make_dsw_subdataset(ds: RatingsDataset, target_degree: float, seed: int,
                        tolerance: float = 0.02) -> RatingsDataset:
    """Delete ratings until ``dsw_degree`` reaches ``target_degree`` (within ``tolerance``).

    Users are visited in a seeded random order. A visited user is isolated by
    dropping each of their ratings on an item someone else also rated; a user
    left with nothing would be emptied and is skipped instead. Only the
    isolated user's ratings are touched, but the deletion can isolate
    co-raters as a side effect, so a move that overshoots the tolerance band
    is undone.
    """
    if not 0.0 <= target_degree <= 1.0:
        raise ValueError(f"target_degree must lie in [0, 1], got {target_degree}")
    ui = {u: set(items) for u, items in ds.user_items().items()}
    M = len(ui)
    raters = _raters(ui)
    isolated = _isolated_users(ui, raters)
    target = _round_half_up(target_degree * M)
    ceiling = math.floor((target_degree + tolerance) * M + 1e-9)

    def degree():
        return len(isolated) / M

    if len(isolated) > ceiling:
        raise DSWError(f"dataset already has degree {degree():.4f} > target {target_degree}",
                       achieved=degree())

    removed: dict[int, set[int]] = defaultdict(set)
    order = np.random.default_rng(seed).permutation(sorted(ui))
    blocked = None
    for u in order.tolist():
        if len(isolated) >= target:
            break
        if u in isolated:
            continue
        shared = {j for j in ui[u] if len(raters[j]) > 1}
        if len(shared) == len(ui[u]):
            blocked = u
            continue
        touched = set()
        for j in shared:
            raters[j].discard(u)
            touched |= raters[j]
        newly = {u} | {v for v in touched
                       if v not in isolated and all(len(raters[k]) == 1 for k in ui[v])}
        if len(isolated) + len(newly) > ceiling:
            for j in shared:
                raters[j].add(u)
            continue
        ui[u] -= shared
        removed[u] |= shared
        isolated |= newly

    achieved = degree()
    if abs(achieved - target_degree) > tolerance + 1e-12:
        name = ds.user_ids[blocked] if blocked is not None else None
        msg = f"could not reach degree {target_degree} (achieved {achieved:.4f})"
        if name is not None:
            msg += f"; user {name!r} has no exclusively rated item"
        raise DSWError(msg, achieved=achieved, user=name)
    if not removed:
        return ds
    uidx, iidx = ds.user_index, ds.item_index
    kept = [r for r in ds.records if iidx[r.item_id] not in removed.get(uidx[r.user_id], ())]
    logger.info("DSW subset: target %.2f achieved %.4f, %d ratings removed",
                target_degree, achieved, len(ds.records) - len(kept))
    return ds.subset(kept)
