"""Reference rating predictors: Random, UserMean, ItemMean and PlainMF."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import DatasetError, RatingsDataset
from .model import FactorModel, Hyperparams, init_model

KINDS = ("Random", "UserMean", "ItemMean", "PlainMF")


@dataclass(eq=False)
class BaselinePredictor:
    kind: str
    rating_scale: tuple[int, int]
    global_mean: float
    user_means: np.ndarray = field(default=None, repr=False)
    item_means: np.ndarray = field(default=None, repr=False)
    model: FactorModel | None = field(default=None, repr=False)
    seed: int = 0


def plain_mf(W: np.ndarray, mask: np.ndarray, hp: Hyperparams,
             init: FactorModel | None = None) -> FactorModel:
    """Regularized NMF on observed entries with square-root multiplicative updates.

    Minimizes ``1/2 ||mask * (W - P Q^T)||^2 + alpha1 ||P||^2 + alpha2 ||Q||^2``
    and stops on the same relative-change rule as the personality model.
    """
    M, N = W.shape
    if init is None:
        init = init_model(M, N, hp)
    P, Q = init.P.copy(), init.Q.copy()
    MW = mask * W

    def f(P, Q):
        R = mask * (P @ Q.T - W)
        return 0.5 * np.sum(R * R) + hp.alpha1 * np.sum(P * P) + hp.alpha2 * np.sum(Q * Q)

    def step(X, num, den):
        ratio = np.divide(num, den, out=np.ones_like(X), where=den > 0)
        return np.maximum(X * np.sqrt(ratio), 1e-30)

    obj = f(P, Q)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, hp.max_iters + 1):
        P = step(P, MW @ Q, (mask * (P @ Q.T)) @ Q + 2.0 * hp.alpha1 * P)
        Q = step(Q, MW.T @ P, (mask * (P @ Q.T)).T @ P + 2.0 * hp.alpha2 * Q)
        new = f(P, Q)
        history.append(new)
        rel = abs(obj - new) / max(abs(obj), np.finfo(float).tiny)
        obj = new
        if rel < hp.tol:
            converged = True
            break
    return FactorModel(P, Q, np.ones(M), np.zeros((M, M), dtype=np.uint8),
                       hp.replace(lam=0.0), objective=float(obj), n_iter=it,
                       converged=converged, history=history)


def fit_baseline(kind: str, train: RatingsDataset, hp: Hyperparams | None = None,
                 seed: int | None = None) -> BaselinePredictor:
    if kind not in KINDS:
        raise ValueError(f"unknown baseline {kind!r}; choose from {KINDS}")
    if len(train.records) == 0:
        raise DatasetError("empty training set")
    hp = hp or Hyperparams()
    seed = hp.seed if seed is None else seed
    u, v, y = train.arrays
    gmean = float(y.mean())
    pred = BaselinePredictor(kind, train.rating_scale, gmean, seed=seed)
    if kind == "UserMean":
        pred.user_means = _group_means(u, y, train.n_users, gmean)
    elif kind == "ItemMean":
        pred.item_means = _group_means(v, y, train.n_items, gmean)
    elif kind == "PlainMF":
        W = np.zeros((train.n_users, train.n_items))
        mask = np.zeros_like(W)
        W[u, v] = y
        mask[u, v] = 1.0
        pred.model = plain_mf(W, mask, hp.replace(seed=seed))
    return pred


def _group_means(idx: np.ndarray, y: np.ndarray, n: int, fallback: float) -> np.ndarray:
    sums = np.bincount(idx, weights=y, minlength=n)
    counts = np.bincount(idx, minlength=n)
    return np.where(counts > 0, sums / np.maximum(counts, 1), fallback)


def predict_many(pred: BaselinePredictor, users, items, clip: bool = True) -> np.ndarray:
    users = np.asarray(users, dtype=np.intp)
    items = np.asarray(items, dtype=np.intp)
    lo, hi = pred.rating_scale
    if pred.kind == "UserMean":
        return pred.user_means[users]
    if pred.kind == "ItemMean":
        return pred.item_means[items]
    if pred.kind == "Random":
        # one generator per pair keeps predictions independent of call order
        return np.array([float(np.random.default_rng([pred.seed, int(i), int(j)])
                               .integers(lo, hi + 1)) for i, j in zip(users, items)])
    out = pred.model.predict_pairs(users, items)
    return np.clip(out, lo, hi) if clip else out


def predict_baseline(pred: BaselinePredictor, i: int, j: int) -> float:
    return float(predict_many(pred, [i], [j])[0])


def expected_random_mae(truth, rating_scale=(1, 5)) -> float:
    """Expected MAE of uniform integer guesses on ``truth``."""
    lo, hi = rating_scale
    levels = np.arange(lo, hi + 1)
    truth = np.asarray(truth, dtype=float)
    return float(np.mean(np.abs(truth[:, None] - levels[None, :]).mean(axis=1)))

