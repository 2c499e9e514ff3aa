"""Personality- and knowledge-aware matrix factorization.

A user's predicted rating blends their own latent factors with the mean
factors of users sharing their dominant personality trait::

    R_hat[i, j] = gamma_i <p_i, q_j> + (1 - gamma_i) mean_{k in nbr(i)} <p_k, q_j>

Collecting the per-user weights in a row-stochastic mixing matrix ``G``
gives ``R_hat = G P Q^T``. Training minimizes

    1/2 ||I * (W - G P Q^T)||^2 + lam tr(P^T Y P) + alpha1 ||P||^2 + alpha2 ||Q||^2

with ``I`` the observed mask and ``Y = D - Z`` the personality Laplacian,
so ``tr(P^T Y P) = 1/2 sum_ij Z_ij ||p_i - p_j||^2``.

The multiplicative updates split each gradient into its positive part
(denominator) and negative part (numerator)::

    P <- P * sqrt([G^T (I*W) Q + 2 lam Z P] / [G^T (I*(G P Q^T)) Q + 2 lam D P + 2 alpha1 P])
    Q <- Q * sqrt([(I*W)^T G P] / [(I*(G P Q^T))^T G P + 2 alpha2 Q])

Each is the exact minimizer of an auxiliary function of the block objective
(quadratic upper bound on the positive part, log bounds on the negative
ones), so the objective never increases.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .ingest import InteractionMatrix
from .knowledge import KnowledgeTable, mixing_coefficient
from .personality import PersonalityGraph

logger = logging.getLogger(__name__)

MAGIC = b"APAR1\n"
OPTIMIZERS = ("multiplicative", "projected-gradient")
NEIGHBOR_MODES = ("mean", "sum")

# smallest value a factor entry may take under multiplicative updates
_FLOOR = 1e-30


class NumericalError(ArithmeticError):
    def __init__(self, message: str, term: str | None = None, iteration: int | None = None):
        super().__init__(message)
        self.term = term
        self.iteration = iteration


class FingerprintError(ValueError):
    """A model file was trained on a different dataset."""


@dataclass(frozen=True)
class Hyperparams:
    d: int = 100
    alpha1: float = 0.1
    alpha2: float = 0.1
    lam: float = 0.1
    beta: float = 0.5
    max_iters: int = 500
    tol: float = 1e-5
    seed: int = 0
    optimizer: str = "multiplicative"
    neighbor_mode: str = "mean"
    use_knowledge: bool = True
    clip: bool = True

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        for name in ("alpha1", "alpha2", "lam", "beta", "tol"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("alpha1", "alpha2", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise ValueError(f"neighbor_mode must be one of {NEIGHBOR_MODES}")

    def replace(self, **changes) -> "Hyperparams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def mixing_matrix(gamma: np.ndarray, L: np.ndarray, neighbor_mode: str = "mean") -> np.ndarray:
    """The ``M x M`` matrix ``G`` with ``R_hat = G P Q^T``.

    Users without neighbors get a unit self weight regardless of gamma.
    """
    gamma = np.asarray(gamma, dtype=float)
    L = np.asarray(L, dtype=float)
    deg = L.sum(axis=1)
    has = deg > 0
    if neighbor_mode == "mean":
        A = L / np.where(has, deg, 1.0)[:, None]
    elif neighbor_mode == "sum":
        A = L.copy()
    else:
        raise ValueError(f"unknown neighbor_mode {neighbor_mode!r}")
    G = np.where(has, 1.0 - gamma, 0.0)[:, None] * A
    G[np.diag_indices_from(G)] += np.where(has, gamma, 1.0)
    return G


@dataclass(eq=False)
class FactorModel:
    P: np.ndarray
    Q: np.ndarray
    gamma: np.ndarray
    neighbors: np.ndarray
    hyperparams: Hyperparams
    objective: float = math.nan
    n_iter: int = 0
    converged: bool = False
    history: list = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[0]

    @property
    def G(self) -> np.ndarray:
        return mixing_matrix(self.gamma, self.neighbors, self.hyperparams.neighbor_mode)

    def neighbor_set(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.neighbors[i])

    def effective_user_factors(self) -> np.ndarray:
        return self.G @ self.P

    def predict_all(self) -> np.ndarray:
        return self.effective_user_factors() @ self.Q.T

    def predict_pairs(self, users, items, clip: tuple[float, float] | None = None) -> np.ndarray:
        users = np.asarray(users, dtype=np.intp)
        items = np.asarray(items, dtype=np.intp)
        U = self.effective_user_factors()
        out = np.einsum("ij,ij->i", U[users], self.Q[items])
        if clip is not None:
            out = np.clip(out, *clip)
        return out


def init_model(M: int, N: int, hp: Hyperparams) -> FactorModel:
    """Factors drawn i.i.d. uniform on (0, 0.01] from ``hp.seed``."""
    if M < 1 or N < 1:
        raise ValueError("M and N must be positive")
    rng = np.random.default_rng(hp.seed)
    P = 0.01 * (1.0 - rng.random((M, hp.d)))
    Q = 0.01 * (1.0 - rng.random((N, hp.d)))
    return FactorModel(P, Q, np.ones(M), np.zeros((M, M), dtype=np.uint8), hp)


def predict(model: FactorModel, i: int, j: int) -> float:
    if not (0 <= i < model.n_users and 0 <= j < model.n_items):
        raise IndexError(f"pair ({i}, {j}) outside {model.n_users} x {model.n_items}")
    q = model.Q[j]
    own = float(model.P[i] @ q)
    nbrs = model.neighbor_set(i)
    if nbrs.size == 0:
        return own
    nb = model.P[nbrs] @ q
    nb = nb.mean() if model.hyperparams.neighbor_mode == "mean" else nb.sum()
    g = model.gamma[i]
    return float(g * own + (1.0 - g) * nb)


def _dense(W) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(W, InteractionMatrix):
        return W.dense(), W.mask()
    W = np.asarray(W, dtype=float)
    return W, (W != 0).astype(float)


class _Problem:
    """Dense operands shared by the objective, gradients and updates."""

    def __init__(self, W, graph: PersonalityGraph | None, G: np.ndarray, hp: Hyperparams):
        W, mask = _dense(W)
        M, N = W.shape
        # data terms only touch observed entries, kept in CSR order
        self.rows, self.cols = np.nonzero(mask)
        self.w = W[self.rows, self.cols]
        self.flat = self.rows * N + self.cols
        self.indptr = np.concatenate(([0], np.cumsum(np.bincount(self.rows, minlength=M))))
        self.shape = (M, N)
        self.MW = self.observed(self.w)
        if graph is None:
            graph = PersonalityGraph.empty(M)
        if graph.n_users != M or G.shape != (M, M):
            raise ValueError("graph, mixing matrix and interaction matrix disagree on users")
        self.Z = graph.Z
        self.Ddiag = np.diag(graph.D).copy()
        self.Y = graph.Y
        self.G = G
        self.hp = hp

    def observed(self, values) -> sp.csr_matrix:
        return sp.csr_matrix((values, self.cols, self.indptr), shape=self.shape)

    def fitted(self, U, Q) -> np.ndarray:
        """Predictions ``U Q^T`` at the observed entries."""
        # one dense BLAS product beats gathering factor rows per entry
        return (U @ Q.T).ravel()[self.flat]

    def terms(self, P, Q) -> dict[str, float]:
        r = self.fitted(self.G @ P, Q) - self.w
        terms = {
            "loss": 0.5 * float(r @ r),
            "personality": self.hp.lam * float(np.sum(P * (self.Y @ P))),
            "user_frobenius": self.hp.alpha1 * float(np.sum(P * P)),
            "item_frobenius": self.hp.alpha2 * float(np.sum(Q * Q)),
        }
        for name, v in terms.items():
            if not math.isfinite(v):
                raise NumericalError(f"non-finite {name} term", term=name)
        return terms

    def value(self, P, Q) -> float:
        return sum(self.terms(P, Q).values())

    def gradients(self, P, Q):
        U = self.G @ P
        E = self.observed(self.fitted(U, Q) - self.w)
        hp = self.hp
        dP = self.G.T @ (E @ Q) + 2.0 * hp.lam * (self.Y @ P) + 2.0 * hp.alpha1 * P
        dQ = E.T @ U + 2.0 * hp.alpha2 * Q
        for name, g in (("dP", dP), ("dQ", dQ)):
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient {name}", term=name)
        return dP, dQ

    def multiplicative_step(self, P, Q):
        hp = self.hp
        G = self.G
        num = G.T @ (self.MW @ Q) + 2.0 * hp.lam * (self.Z @ P)
        den = (G.T @ (self.observed(self.fitted(G @ P, Q)) @ Q)
               + 2.0 * hp.lam * self.Ddiag[:, None] * P + 2.0 * hp.alpha1 * P)
        P = _mult(P, num, den)
        U = G @ P
        num = self.MW.T @ U
        den = self.observed(self.fitted(U, Q)).T @ U + 2.0 * hp.alpha2 * Q
        Q = _mult(Q, num, den)
        return P, Q


def _mult(X, num, den):
    ratio = np.divide(num, den, out=np.ones_like(X), where=den > 0)
    return np.maximum(X * np.sqrt(ratio), _FLOOR)


def _gamma_vector(kt, M: int, hp: Hyperparams) -> np.ndarray:
    if kt is None:
        return np.full(M, mixing_coefficient(hp.beta, 0.0))
    if isinstance(kt, KnowledgeTable):
        g = kt.gamma_vector()
    else:
        g = np.asarray(kt, dtype=float)
    if g.shape != (M,):
        raise ValueError(f"expected {M} mixing coefficients, got shape {g.shape}")
    if np.any((g < 0) | (g > 1)):
        raise ValueError("mixing coefficients must lie in [0, 1]")
    return g


def _problem(model: FactorModel, W, graph, hp) -> _Problem:
    return _Problem(W, graph, model.G, hp if hp is not None else model.hyperparams)


def objective(model: FactorModel, W, graph: PersonalityGraph | None = None,
              hp: Hyperparams | None = None) -> float:
    return _problem(model, W, graph, hp).value(model.P, model.Q)


def gradients(model: FactorModel, W, graph: PersonalityGraph | None = None,
              hp: Hyperparams | None = None) -> tuple[np.ndarray, np.ndarray]:
    return _problem(model, W, graph, hp).gradients(model.P, model.Q)


def train(W, graph: PersonalityGraph | None, kt, hp: Hyperparams,
          init: FactorModel | None = None) -> FactorModel:
    """Fit factors by multiplicative updates or projected gradient descent.

    ``kt`` is a :class:`KnowledgeTable`, an explicit per-user gamma vector, or
    ``None`` for a constant ``clamp(beta)``. ``init`` overrides the seeded
    initialization (its factors are copied). Stops when the relative
    objective change drops below ``hp.tol`` or after ``hp.max_iters``.
    """
    Wd, mask = _dense(W)
    M, N = Wd.shape
    if not mask.any():
        raise ValueError("interaction matrix has no observed entries")
    if graph is None:
        graph = PersonalityGraph.empty(M)
    gamma = _gamma_vector(kt, M, hp)
    if init is None:
        init = init_model(M, N, hp)
    if init.P.shape != (M, hp.d) or init.Q.shape != (N, hp.d):
        raise ValueError("initial factors have the wrong shape")
    model = FactorModel(init.P.copy(), init.Q.copy(), gamma,
                        (graph.L != 0).astype(np.uint8), hp)
    prob = _Problem(Wd, graph, model.G, hp)

    P, Q = model.P, model.Q
    f = prob.value(P, Q)
    history = [f]
    step = 1e-3
    converged = False
    it = 0
    for it in range(1, hp.max_iters + 1):
        try:
            if hp.optimizer == "multiplicative":
                P, Q = prob.multiplicative_step(P, Q)
                f_new = prob.value(P, Q)
            else:
                P, Q, f_new, step = _projected_step(prob, P, Q, f, step)
        except NumericalError as exc:
            exc.iteration = it
            raise NumericalError(f"iteration {it}: {exc}", exc.term, it) from None
        if f_new > f + 1e-9 * max(1.0, abs(f)):
            logger.warning("objective rose at iteration %d: %.12g -> %.12g", it, f, f_new)
        history.append(f_new)
        rel = abs(f - f_new) / max(abs(f), np.finfo(float).tiny)
        f = f_new
        if rel < hp.tol:
            converged = True
            break
    logger.debug("trained %d iterations, objective %.6g, converged=%s", it, f, converged)
    model.P, model.Q = P, Q
    model.objective, model.n_iter, model.converged, model.history = f, it, converged, history
    return model


def _projected_step(prob: _Problem, P, Q, f, step):
    dP, dQ = prob.gradients(P, Q)
    t = step
    for _ in range(60):
        P1 = np.maximum(P - t * dP, 0.0)
        Q1 = np.maximum(Q - t * dQ, 0.0)
        sP, sQ = P1 - P, Q1 - Q
        f1 = prob.value(P1, Q1)
        bound = f + np.sum(dP * sP) + np.sum(dQ * sQ) + (np.sum(sP * sP) + np.sum(sQ * sQ)) / (2 * t)
        if f1 <= bound:
            return P1, Q1, f1, t * 2.0
        t *= 0.5
    return P, Q, f, t


def recommend_top_n(model: FactorModel, i: int, n: int, exclude_rated: bool = True,
                    interactions: InteractionMatrix | None = None) -> list[tuple[int, float]]:
    """Highest-scoring items for user ``i``; ties go to the lower item index."""
    if not 0 <= i < model.n_users:
        raise ValueError(f"unknown user index {i}")
    if n < 1:
        raise ValueError("n must be at least 1")
    scores = model.effective_user_factors()[i] @ model.Q.T
    candidates = np.arange(model.n_items)
    if exclude_rated:
        if interactions is None:
            raise ValueError("exclude_rated needs the interaction matrix")
        candidates = np.setdiff1d(candidates, interactions.rated_items(i))
    order = np.lexsort((candidates, -scores[candidates]))
    return [(int(candidates[k]), float(scores[candidates[k]])) for k in order[:n]]


def save_model(model: FactorModel, path: str | os.PathLike, fingerprint: str = "") -> None:
    """Write the model container.

    Layout: the magic line ``APAR1``, one line of JSON header, then raw
    little-endian float64 ``P`` (M x d), ``Q`` (N x d), ``gamma`` (M), all
    row-major, followed by the neighbor matrix as M x M uint8.
    """
    M, d = model.P.shape
    N = model.Q.shape[0]
    header = {
        "M": M, "N": N, "d": d,
        "hyperparams": model.hyperparams.to_dict(),
        "fingerprint": fingerprint,
        "objective": model.objective,
        "n_iter": model.n_iter,
        "converged": model.converged,
        "layout": ["P:<f8:M,d", "Q:<f8:N,d", "gamma:<f8:M", "neighbors:u1:M,M"],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for arr in (model.P, model.Q, model.gamma):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.neighbors, dtype=np.uint8).tobytes())


def load_model(path: str | os.PathLike, fingerprint: str | None = None) -> FactorModel:
    """Read a model container; refuse it when ``fingerprint`` does not match."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not an APAR1 model file")
        header = json.loads(fh.readline())
        if fingerprint is not None and header["fingerprint"] != fingerprint:
            raise FingerprintError(
                f"{path}: model was trained on dataset {header['fingerprint'][:12]}..., "
                f"not {fingerprint[:12]}...")
        M, N, d = header["M"], header["N"], header["d"]

        def take(count, dtype):
            buf = fh.read(count * np.dtype(dtype).itemsize)
            if len(buf) != count * np.dtype(dtype).itemsize:
                raise ValueError(f"{path}: truncated model file")
            return np.frombuffer(buf, dtype=dtype).copy()

        P = take(M * d, "<f8").reshape(M, d).astype(float)
        Q = take(N * d, "<f8").reshape(N, d).astype(float)
        gamma = take(M, "<f8").astype(float)
        neighbors = take(M * M, np.uint8).reshape(M, M)
    hp = Hyperparams(**header["hyperparams"])
    return FactorModel(P, Q, gamma, neighbors, hp, objective=header["objective"],
                       n_iter=header["n_iter"], converged=header["converged"])
