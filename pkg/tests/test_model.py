import numpy as np
import pytest

from apar.baselines import plain_mf
from apar.ingest import build_interaction_matrix
from apar.model import (FactorModel, FingerprintError, Hyperparams, NumericalError, gradients,
                        init_model, load_model, mixing_matrix, objective, predict,
                        recommend_top_n, save_model, train)
from apar.personality import PersonalityGraph
from apar.synthetic import planted_low_rank


def random_graph(M, rng):
    Z = np.triu(rng.integers(0, 2, (M, M)), 1)
    return PersonalityGraph(Z + Z.T)


def random_instance(rng, M=None, N=None, d=None):
    M = M or int(rng.integers(2, 7))
    N = N or int(rng.integers(2, 7))
    d = d or int(rng.integers(1, 4))
    W = rng.integers(1, 6, (M, N)) * (rng.random((M, N)) < 0.7)
    W[0, 0] = 3
    hp = Hyperparams(d=d, alpha1=rng.uniform(0, 1), alpha2=rng.uniform(0, 1),
                     lam=rng.uniform(0, 1), seed=int(rng.integers(1000)))
    graph = random_graph(M, rng)
    model = init_model(M, N, hp)
    model.P = rng.random((M, d))
    model.Q = rng.random((N, d))
    model.gamma = rng.random(M)
    model.neighbors = (graph.L != 0).astype(np.uint8)
    return W.astype(float), graph, hp, model


def scalar_objective(model, W, graph, hp):
    """Loop-by-loop evaluation of the training objective."""
    M, N = W.shape
    total = 0.0
    for i in range(M):
        for j in range(N):
            if W[i, j] != 0:
                total += 0.5 * (predict(model, i, j) - W[i, j]) ** 2
    for i in range(M):
        for k in range(M):
            diff = model.P[i] - model.P[k]
            total += hp.lam * 0.5 * graph.Z[i, k] * float(diff @ diff)
    total += hp.alpha1 * float(np.sum(model.P ** 2)) + hp.alpha2 * float(np.sum(model.Q ** 2))
    return total


def test_init_deterministic_and_positive():
    hp = Hyperparams(d=4, seed=7)
    a, b = init_model(5, 3, hp), init_model(5, 3, hp)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)
    assert a.P.shape == (5, 4) and a.Q.shape == (3, 4)
    for X in (a.P, a.Q):
        assert np.all(X > 0) and np.all(X <= 0.01)
    assert not np.array_equal(a.P, init_model(5, 3, hp.replace(seed=8)).P)


def _two_user_model(gamma, nbr_p=(0.0, 1.0)):
    hp = Hyperparams(d=2)
    P = np.array([[1.0, 0.0], list(nbr_p)])
    Q = np.array([[2.0, 3.0]])
    L = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    return FactorModel(P, Q, np.array([gamma, gamma]), L, hp)


def test_predict_examples():
    # own score 2, neighbor score 3
    assert predict(_two_user_model(0.5), 0, 0) == pytest.approx(2.5)
    assert predict(_two_user_model(1.0), 0, 0) == pytest.approx(2.0)
    assert predict(_two_user_model(0.0), 0, 0) == pytest.approx(3.0)
    m = _two_user_model(0.3)
    assert m.predict_all()[0, 0] == pytest.approx(predict(m, 0, 0))
    with pytest.raises(IndexError):
        predict(m, 2, 0)


def test_user_without_neighbors_uses_own_factors():
    m = _two_user_model(0.2)
    m.neighbors = np.zeros((2, 2), dtype=np.uint8)
    assert predict(m, 0, 0) == pytest.approx(2.0)
    assert np.allclose(m.G, np.eye(2))


def test_mixing_matrix_rows():
    rng = np.random.default_rng(0)
    L = random_graph(6, rng).L
    g = rng.random(6)
    G = mixing_matrix(g, L, "mean")
    assert np.allclose(G.sum(axis=1), 1.0)
    Gs = mixing_matrix(g, L, "sum")
    has = L.sum(axis=1) > 0
    assert np.allclose(Gs.sum(axis=1)[has], g[has] + (1 - g[has]) * L.sum(axis=1)[has])
    with pytest.raises(ValueError):
        mixing_matrix(g, L, "max")


@pytest.mark.parametrize("seed", range(5))
def test_objective_matches_scalar_loops(seed):
    W, graph, hp, model = random_instance(np.random.default_rng(seed))
    assert objective(model, W, graph, hp) == pytest.approx(
        scalar_objective(model, W, graph, hp), rel=1e-12, abs=1e-12)


def finite_difference(model, W, graph, hp, h=1e-6):
    out = []
    for name in ("P", "Q"):
        X = getattr(model, name)
        g = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            orig = X[idx]
            X[idx] = orig + h
            fp = objective(model, W, graph, hp)
            X[idx] = orig - h
            fm = objective(model, W, graph, hp)
            X[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_rel_err(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(
            np.maximum(np.abs(a), np.abs(n)), 1e-6))))
    return worst


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    W, graph, hp, model = random_instance(np.random.default_rng(100 + seed))
    assert max_rel_err(gradients(model, W, graph, hp),
                       finite_difference(model, W, graph, hp)) < 1e-4


def test_gradient_is_pure_ridge_at_zero_residual():
    rng = np.random.default_rng(3)
    P, Q = rng.random((4, 2)), rng.random((3, 2))
    W = P @ Q.T
    hp = Hyperparams(d=2, lam=0.0, alpha1=0.3, alpha2=0.2)
    m = FactorModel(P, Q, np.ones(4), np.zeros((4, 4), dtype=np.uint8), hp)
    dP, dQ = gradients(m, W, None, hp)
    assert np.allclose(dP, 2 * 0.3 * P, atol=1e-12)
    assert np.allclose(dQ, 2 * 0.2 * Q, atol=1e-12)


def test_planted_rank_one_recovery():
    W, mask = planted_low_rank(seed=0)
    hp = Hyperparams(d=1, alpha1=0.0, alpha2=0.0, lam=0.0, max_iters=500, tol=0.0)
    m = train(W * mask, None, np.ones(5), hp)
    pred = m.predict_all()
    rmse = np.sqrt(np.sum(mask * (pred - W) ** 2) / mask.sum())
    assert rmse < 1e-2


def test_train_is_deterministic():
    W, graph, hp, _ = random_instance(np.random.default_rng(4), M=6, N=5, d=2)
    hp = hp.replace(max_iters=50)
    a = train(W, graph, np.full(6, 0.4), hp)
    b = train(W, graph, np.full(6, 0.4), hp)
    assert np.array_equal(a.P, b.P) and a.history == b.history


@pytest.mark.parametrize("seed", range(4))
def test_multiplicative_monotone_and_positive(seed):
    W, graph, hp, _ = random_instance(np.random.default_rng(200 + seed), M=6, N=6, d=3)
    hp = hp.replace(max_iters=200, tol=0.0)
    m = train(W, graph, np.random.default_rng(seed).random(6), hp)
    h = np.array(m.history)
    assert np.all(np.diff(h) <= 1e-9)
    assert np.all(m.P > 0) and np.all(m.Q > 0)


def test_reduces_to_plain_mf():
    rng = np.random.default_rng(9)
    W = rng.integers(1, 6, (8, 7)) * (rng.random((8, 7)) < 0.6)
    W = W.astype(float)
    hp = Hyperparams(d=3, lam=0.0, max_iters=80, tol=0.0)
    init = init_model(8, 7, hp)
    a = train(W, None, np.ones(8), hp, init=init)
    b = plain_mf(W, (W != 0).astype(float), hp, init=init)
    assert np.allclose(a.history, b.history, rtol=0, atol=1e-8)


def test_user_permutation_equivariance():
    W, graph, hp, _ = random_instance(np.random.default_rng(11), M=5, N=4, d=2)
    hp = hp.replace(max_iters=30)
    gamma = np.linspace(0.1, 0.9, 5)
    init = init_model(5, 4, hp)
    perm = np.array([3, 0, 4, 1, 2])
    base = train(W, graph, gamma, hp, init=init)
    pinit = FactorModel(init.P[perm], init.Q, init.gamma, init.neighbors, hp)
    pgraph = PersonalityGraph(graph.L[np.ix_(perm, perm)])
    moved = train(W[perm], pgraph, gamma[perm], hp, init=pinit)
    assert np.allclose(moved.predict_all(), base.predict_all()[perm], atol=1e-10)


def test_recommend_top_n(fixture_ds):
    inter = build_interaction_matrix(fixture_ds)
    Q = np.array([[1.0], [3.0], [2.0], [3.0], [0.5]])
    m = FactorModel(np.ones((6, 1)), Q, np.ones(6), np.zeros((6, 6), dtype=np.uint8),
                    Hyperparams(d=1))
    top = recommend_top_n(m, 0, 3, exclude_rated=False)
    assert [j for j, _ in top] == [1, 3, 2]
    u1 = fixture_ds.user_index["u1"]
    rated = set(inter.rated_items(u1).tolist())
    top = recommend_top_n(m, u1, 5, interactions=inter)
    assert not rated & {j for j, _ in top}
    assert [s for _, s in top] == sorted((s for _, s in top), reverse=True)
    with pytest.raises(ValueError):
        recommend_top_n(m, 99, 1, exclude_rated=False)


def test_save_load_roundtrip(tmp_path):
    W, graph, hp, _ = random_instance(np.random.default_rng(5), M=4, N=3, d=2)
    m = train(W, graph, np.full(4, 0.5), hp.replace(max_iters=10))
    save_model(m, tmp_path / "m.apar", fingerprint="abc")
    back = load_model(tmp_path / "m.apar", fingerprint="abc")
    assert np.array_equal(back.P, m.P) and np.array_equal(back.Q, m.Q)
    assert np.array_equal(back.gamma, m.gamma)
    assert np.array_equal(back.neighbors, m.neighbors)
    assert back.hyperparams == m.hyperparams
    assert np.array_equal(back.predict_all(), m.predict_all())
    with pytest.raises(FingerprintError):
        load_model(tmp_path / "m.apar", fingerprint="xyz")
    (tmp_path / "bad").write_bytes(b"nope\n")
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad")


def test_projected_gradient_mode_decreases():
    W, graph, hp, _ = random_instance(np.random.default_rng(6), M=6, N=5, d=2)
    hp = hp.replace(optimizer="projected-gradient", max_iters=100, tol=0.0)
    m = train(W, graph, np.full(6, 0.5), hp)
    assert m.history[-1] < m.history[0]
    assert np.all(np.diff(m.history) <= 1e-9 * max(1.0, m.history[0]))
    assert np.all(m.P >= 0) and np.all(m.Q >= 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_error_names_term():
    W = np.array([[1.0, 2.0], [3.0, 0.0]])
    hp = Hyperparams(d=1)
    m = init_model(2, 2, hp)
    m.P[0, 0] = np.inf
    with pytest.raises(NumericalError) as exc:
        objective(m, W, None, hp)
    assert exc.value.term == "loss"


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(d=0)
    with pytest.raises(ValueError):
        Hyperparams(lam=-1.0)
    with pytest.raises(ValueError):
        Hyperparams(optimizer="adam")
    with pytest.raises(ValueError):
        train(np.zeros((2, 2)), None, None, Hyperparams(d=1))


def test_recommend_picks_blended_best():
    m = _two_user_model(0.5)
    m.Q = np.array([[2.0, 3.0], [1.0, 1.0]])
    (top,) = recommend_top_n(m, 0, 1, exclude_rated=False)
    assert top[0] == 0 and top[1] == pytest.approx(2.5)
