import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from exmlds.embed import ContextPairs
from exmlds.errors import DataError, DegenerateGradientError, NumericalError
from exmlds.regress import admm_ridge, default_lambda, gradient_v_cosine, gradient_v_dot, joint_sgd_v
from oracles import cosine


def closed_form(X, Z, lam):
    X = np.asarray(X.toarray() if sp.issparse(X) else X)
    return (np.linalg.solve(X.T @ X + lam * np.eye(X.shape[1]), X.T @ Z)).T


def ridge_objective(X, Z, V, lam):
    X = np.asarray(X.toarray() if sp.issparse(X) else X)
    return np.sum((X @ V.T - Z) ** 2) + lam * np.sum(V ** 2)


@pytest.mark.parametrize("solver", ["admm", "direct"])
def test_identity_interpolates(rng, solver):
    Z = rng.standard_normal((6, 3))
    r = admm_ridge(np.eye(6), Z, lam=0.0, solver=solver, tol=1e-12, max_iters=500)
    assert np.allclose(r.V, Z.T, atol=1e-8)


@pytest.mark.parametrize("solver", ["admm", "direct"])
def test_zero_target(rng, solver):
    X = rng.standard_normal((10, 4))
    for lam in (0.01, 1.0, 10.0):
        assert np.abs(admm_ridge(X, np.zeros((10, 2)), lam=lam, solver=solver).V).max() == 0


def test_admm_matches_closed_form(rng):
    X = rng.standard_normal((30, 8))
    Z = rng.standard_normal((30, 4))
    r = admm_ridge(X, Z, lam=0.1, solver="admm")
    ref = closed_form(X, Z, 0.1)
    assert np.linalg.norm(r.V - ref) / np.linalg.norm(ref) <= 1e-6
    assert r.iterations >= 1 and r.primal_residual >= 0 and r.dual_residual >= 0


def test_admm_fat_sparse(rng):
    X = sp.random(40, 120, density=0.1, random_state=5, format="csr")
    Z = rng.standard_normal((40, 5))
    r = admm_ridge(X, Z, lam=0.5, solver="admm", tol=1e-10, max_iters=500)
    ref = closed_form(X, Z, 0.5)
    assert np.linalg.norm(r.V - ref) / np.linalg.norm(ref) <= 1e-8


def test_admm_stops_at_max_iters(rng):
    X = rng.standard_normal((20, 6))
    r = admm_ridge(X, rng.standard_normal((20, 2)), lam=0.1, solver="admm", tol=0.0, max_iters=7)
    assert r.iterations == 7 and len(r.history) == 7


def test_default_lambda(rng):
    X = rng.standard_normal((12, 5))
    assert default_lambda(X) == pytest.approx(0.01 * np.trace(X.T @ X) / 5)
    assert default_lambda(sp.csr_matrix(X)) == pytest.approx(default_lambda(X))
    assert admm_ridge(X, np.ones((12, 1))).lam == pytest.approx(default_lambda(X))


def test_admm_errors(rng):
    X = rng.standard_normal((5, 3))
    with pytest.raises(DataError):
        admm_ridge(X, np.zeros((4, 2)))
    with pytest.raises(DataError):
        admm_ridge(X, np.zeros((5, 2)), lam=-1)
    with pytest.raises(DataError):
        admm_ridge(X, np.zeros((5, 2)), rho=0)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(DataError):
        admm_ridge(bad, np.zeros((5, 2)))


def K_dot(V, X, i, j):
    return float((V @ X[i]) @ (V @ X[j]))


def K_cos(V, X, i, j):
    return cosine(V @ X[i], V @ X[j])


def finite_diff(f, V, h=1e-5):
    G = np.zeros_like(V)
    for a in range(V.shape[0]):
        for b in range(V.shape[1]):
            Vp, Vm = V.copy(), V.copy()
            Vp[a, b] += h
            Vm[a, b] -= h
            G[a, b] = (f(Vp) - f(Vm)) / (2 * h)
    return G


def test_dot_gradient_examples():
    X = np.array([[1.0], [3.0]])
    assert gradient_v_dot(np.array([[2.0]]), X, 0, 1)[0, 0] == 12.0
    assert not gradient_v_dot(np.zeros((2, 1)), X, 0, 1).any()
    G = gradient_v_dot(np.array([[2.0]]), X, 0, 0)
    assert G[0, 0] == 2 * 2 * 1 * 1


def test_dot_gradient_finite_diff(rng):
    V = rng.standard_normal((3, 4))
    X = rng.standard_normal((5, 4))
    G = gradient_v_dot(V, X, 1, 3)
    F = finite_diff(lambda W: K_dot(W, X, 1, 3), V)
    assert np.linalg.norm(G - F) / np.linalg.norm(F) <= 1e-6


def test_dot_gradient_sparse_rows(rng):
    X = rng.standard_normal((4, 6))
    V = rng.standard_normal((2, 6))
    assert np.allclose(gradient_v_dot(V, sp.csr_matrix(X), 0, 2), gradient_v_dot(V, X, 0, 2))


def test_cosine_gradient_zero_at_maximum(rng):
    V = rng.standard_normal((3, 4))
    x = rng.standard_normal(4)
    X = np.vstack([x, 2.5 * x])
    G = gradient_v_cosine(V, X, 0, 1)
    assert np.abs(G).max() <= 1e-8
    # any perturbation keeps the cosine at its maximum to first order
    D = rng.standard_normal(V.shape)
    h = 1e-5
    deriv = (K_cos(V + h * D, X, 0, 1) - K_cos(V - h * D, X, 0, 1)) / (2 * h)
    assert abs(deriv) <= 1e-8


def test_cosine_gradient_orthogonal_hand_case():
    V = np.eye(2)
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    G = gradient_v_cosine(V, X, 0, 1)
    assert np.array_equal(G, np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_cosine_gradient_finite_diff(rng):
    V = rng.standard_normal((3, 5))
    X = rng.standard_normal((4, 5))
    G = gradient_v_cosine(V, X, 0, 2)
    F = finite_diff(lambda W: K_cos(W, X, 0, 2), V)
    assert np.linalg.norm(G - F) / np.linalg.norm(F) <= 1e-5


def test_cosine_gradient_degenerate():
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DegenerateGradientError):
        gradient_v_cosine(np.eye(2), X, 0, 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10))
def test_cosine_gradient_rescaled_instance(seed, c):
    r = np.random.default_rng(seed)
    V = r.standard_normal((2, 3))
    X = r.standard_normal((2, 3))
    X2 = X.copy()
    X2[0] *= c
    assert np.allclose(V @ X2[0], c * (V @ X[0]))
    assert K_cos(V, X2, 0, 1) == pytest.approx(K_cos(V, X, 0, 1), abs=1e-12)
    D = r.standard_normal(V.shape)
    h = 1e-5
    fd = (K_cos(V + h * D, X2, 0, 1) - K_cos(V - h * D, X2, 0, 1)) / (2 * h)
    assert np.sum(gradient_v_cosine(V, X2, 0, 1) * D) == pytest.approx(fd, rel=1e-5, abs=1e-8)


TOY_X = np.array([[1, .1, 0], [.9, 0, .1], [0, 1, .1], [.1, .9, 0], [0, .1, 1], [.1, 0, .9]])
TOY_PAIRS = ContextPairs(np.array([[0, 1], [1, 0], [2, 3], [3, 2], [4, 5], [5, 4]]), 6)


def test_joint_zero_iterations_keeps_init(rng):
    V0 = rng.standard_normal((2, 3))
    r = joint_sgd_v(TOY_X, TOY_PAIRS, 2, iterations=0, init_V=V0)
    assert np.array_equal(r.V, V0)
    assert len(r.history) == 1


@pytest.mark.parametrize("seed", range(5))
def test_joint_dot_increases_each_epoch(seed):
    r = joint_sgd_v(TOY_X, TOY_PAIRS, 2, n_neg=2, iterations=5, eta=0.01, similarity="dot", seed=seed)
    h = r.history
    assert len(h) == 6
    assert all(b > a for a, b in zip(h, h[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_joint_cosine_stable_and_improves(seed):
    r = joint_sgd_v(TOY_X, TOY_PAIRS, 2, n_neg=2, iterations=20, eta=0.05, similarity="cosine", seed=seed)
    assert np.isfinite(r.V).all() and np.isfinite(r.history).all()
    assert r.history[-1] >= r.history[0]


@pytest.mark.parametrize("similarity,grad", [("dot", gradient_v_dot), ("cosine", gradient_v_cosine)])
def test_joint_single_step_matches_gradient(rng, similarity, grad):
    # one positive pair, no negatives: a single epoch is one ascent step
    X = rng.standard_normal((3, 4))
    V0 = rng.standard_normal((2, 4))
    pairs = ContextPairs(np.array([[0, 1]]), 3)
    eta = 0.03
    r = joint_sgd_v(X, pairs, 2, n_neg=0, iterations=1, eta=eta, similarity=similarity, init_V=V0)
    K = K_dot(V0, X, 0, 1) if similarity == "dot" else K_cos(V0, X, 0, 1)
    want = V0 + eta / (1 + np.exp(K)) * grad(V0, X, 0, 1)
    assert np.allclose(r.V, want, atol=1e-13)


def test_joint_deterministic_and_validates():
    a = joint_sgd_v(TOY_X, TOY_PAIRS, 2, iterations=3, seed=4)
    b = joint_sgd_v(TOY_X, TOY_PAIRS, 2, iterations=3, seed=4)
    assert np.array_equal(a.V, b.V)
    with pytest.raises(DataError):
        joint_sgd_v(TOY_X, TOY_PAIRS, 2, similarity="l2")
    with pytest.raises(DataError):
        joint_sgd_v(TOY_X, ContextPairs(np.array([[0, 1]]), 4), 2)
    with pytest.raises(DataError):
        joint_sgd_v(TOY_X, TOY_PAIRS, 2, init_V=np.zeros((3, 3)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_joint_divergence_is_reported():
    X = 50 * np.abs(np.random.default_rng(0).standard_normal((6, 3)))
    with pytest.raises(NumericalError, match="diverged"):
        joint_sgd_v(X, TOY_PAIRS, 2, n_neg=2, iterations=50, eta=1.0, similarity="dot")
