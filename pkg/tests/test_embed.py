import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import random_binary
from exmlds.embed import (
    ContextPairs,
    build_context_pairs,
    factorize_embeddings,
    init_embeddings,
    log_sigmoid,
    sgns_objective,
    sgns_sgd_embed,
    split_joint_embeddings,
    unigram_distribution,
)
from exmlds.errors import DataError
from exmlds.linalg import gram
from exmlds.sppmi import sppmi
from oracles import knn_sort, log_sigmoid_naive, sgns_objective_loops


def test_pairs_identical_rows():
    pairs = build_context_pairs(np.ones((3, 2)), 1)
    assert pairs.pairs.tolist() == [[0, 1], [1, 0], [2, 0]]


def test_pairs_orthogonal_rows():
    pairs = build_context_pairs(np.eye(3), 1)
    assert pairs.pairs.tolist() == [[0, 1], [1, 0], [2, 0]]


def test_pairs_match_oracle(rng):
    Y = random_binary(rng, 20, 6, 0.35)
    Y[4] = 0
    got = build_context_pairs(Y, 5).as_set()
    want = set()
    for i in range(20):
        if Y[i].any():
            want |= {(i, j) for j, _ in knn_sort(Y[i], Y, 5, exclude=i)}
    assert got == want
    assert not any(i == 4 for i, _ in got)


def test_pairs_validation():
    with pytest.raises(DataError):
        ContextPairs(np.array([[0, 0]]), 2)
    with pytest.raises(DataError):
        ContextPairs(np.array([[0, 2]]), 2)
    with pytest.raises(DataError):
        build_context_pairs(np.eye(2), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100), st.integers(1, 4))
def test_pairs_row_rescaling_invariant(seed, scale, k):
    r = np.random.default_rng(seed)
    Y = random_binary(r, 10, 5, 0.4)
    Y2 = Y.copy()
    Y2[r.integers(10)] *= scale
    assert build_context_pairs(Y, k).as_set() == build_context_pairs(Y2, k).as_set()


def test_factorize_diag():
    Z = factorize_embeddings(sp.csr_matrix(np.diag([4.0, 1.0])), 2)
    assert np.allclose(np.abs(Z), [[2, 0], [0, 1]], atol=1e-14)


def test_factorize_rank_one(rng):
    v = np.abs(rng.standard_normal(6))
    Z = factorize_embeddings(np.outer(v, v), 1)
    assert np.abs(Z @ Z.T - np.outer(v, v)).max() <= 1e-10


def _random_psd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + 0.1 * np.eye(n)


def test_factorize_full_rank_psd(rng):
    S = _random_psd(rng, 12)
    Z = factorize_embeddings(S, 12)
    assert np.linalg.norm(Z @ Z.T - S) <= 1e-8


def test_factorize_sppmi_object(rng):
    S = sppmi(gram(random_binary(rng, 10, 5)), 1)
    Z = factorize_embeddings(S, 4)
    assert Z.shape == (10, 4) and np.isfinite(Z).all()


def test_reconstruction_nonincreasing(rng):
    S = _random_psd(rng, 10)
    errs = [np.linalg.norm(factorize_embeddings(S, k) @ factorize_embeddings(S, k).T - S)
            for k in range(1, 11)]
    assert all(b <= a + 1e-10 for a, b in zip(errs, errs[1:]))


def test_split_examples():
    Z = np.arange(5, dtype=float)[:, None] * np.ones((1, 3))
    Z1, Z2 = split_joint_embeddings(Z, 2, 3)
    assert Z1[:, 0].tolist() == [0, 1] and Z2[:, 0].tolist() == [2, 3, 4]
    Z1, Z2 = split_joint_embeddings(Z, 0, 5)
    assert Z1.shape == (0, 3) and np.array_equal(Z2, Z)
    assert np.array_equal(np.vstack(split_joint_embeddings(Z, 3, 2)), Z)
    with pytest.raises(DataError):
        split_joint_embeddings(Z, 2, 2)


def test_log_sigmoid_stable():
    xs = [-800.0, -30.0, -1.0, 0.0, 2.0, 40.0, 800.0]
    got = log_sigmoid(np.array(xs))
    assert np.all(np.isfinite(got))
    for x, g in zip(xs, got):
        assert g == pytest.approx(log_sigmoid_naive(x), rel=1e-14, abs=1e-300)


def test_objective_zero_embeddings():
    pairs = ContextPairs(np.array([[0, 1], [1, 2], [2, 0], [3, 1]]), 4)
    P = np.full(4, 0.25)
    got = sgns_objective(np.zeros((4, 3)), pairs, 5, P)
    assert got == pytest.approx(-(4 + 5 * 4) * math.log(2), rel=1e-14)


def test_objective_saturation():
    pairs = ContextPairs(np.array([[0, 1]]), 2)
    for t in (10.0, 30.0, 1e3):
        Z = np.array([[t, 0.0], [t, 0.0]])
        val = sgns_objective(Z, pairs, 0, np.array([0.5, 0.5]))
        assert val <= 0 and val == pytest.approx(-math.exp(-t * t), abs=1e-12)


@pytest.mark.parametrize("similarity", ["dot", "cosine"])
def test_objective_matches_loops(rng, similarity):
    Z = rng.standard_normal((5, 2))
    pairs = ContextPairs(np.array([[0, 1], [0, 2], [1, 3], [4, 0], [3, 2]]), 5)
    P = rng.random(5)
    P /= P.sum()
    got = sgns_objective(Z, pairs, 3, P, similarity)
    want = sgns_objective_loops(Z, pairs.pairs, 3, P, similarity)
    assert got == pytest.approx(want, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_objective_rotation_invariant(seed):
    r = np.random.default_rng(seed)
    Z = r.standard_normal((6, 3))
    Q, _ = np.linalg.qr(r.standard_normal((3, 3)))
    pairs = ContextPairs(np.array([[0, 1], [2, 3], [4, 5], [5, 0]]), 6)
    P = np.full(6, 1 / 6)
    assert sgns_objective(Z @ Q, pairs, 2, P) == pytest.approx(sgns_objective(Z, pairs, 2, P), abs=1e-10)


def test_objective_rejects_bad_distribution():
    with pytest.raises(DataError):
        sgns_objective(np.zeros((2, 2)), ContextPairs(np.array([[0, 1]]), 2), 1, np.array([0.3, 0.3]))


def test_unigram_distribution():
    pairs = ContextPairs(np.array([[0, 1], [2, 1], [1, 2], [0, 2], [3, 2], [2, 0]]), 5)
    P = unigram_distribution(pairs)
    counts = np.array([1, 2, 3, 0, 0], dtype=float)
    want = counts ** 0.75 / (counts ** 0.75).sum()
    assert np.allclose(P, want, atol=1e-15)
    assert np.allclose(unigram_distribution(ContextPairs(np.empty((0, 2)), 4)), 0.25)


def test_sgd_no_pairs_returns_init():
    pairs = ContextPairs(np.empty((0, 2)), 4)
    assert np.array_equal(sgns_sgd_embed(pairs, 3, seed=5), init_embeddings(4, 3, 5))


def test_init_range():
    Z = init_embeddings(50, 8, 0)
    assert np.abs(Z).max() <= 0.5 / 8


def test_sgd_mutual_pair_inner_product_increases():
    pairs = ContextPairs(np.array([[0, 1], [1, 0]]), 2)
    dots = []
    sgns_sgd_embed(pairs, 4, n_neg=5, iterations=200, learning_rate=0.05, seed=3,
                   checkpoint=lambda e, Z: dots.append(Z[0] @ Z[1]))
    assert len(dots) == 200
    assert all(b > a for a, b in zip(dots, dots[1:]))


def test_sgd_improves_objective_30_points(rng):
    Y = random_binary(rng, 30, 6, 0.3)
    pairs = build_context_pairs(Y, 3)
    P = unigram_distribution(pairs)
    init = init_embeddings(30, 8, 11)
    Z = sgns_sgd_embed(pairs, 8, n_neg=5, iterations=30, seed=11)
    assert sgns_objective(Z, pairs, 5, P) > sgns_objective(init, pairs, 5, P)


def test_sgd_deterministic():
    pairs = build_context_pairs(random_binary(np.random.default_rng(2), 25, 5), 3)
    a = sgns_sgd_embed(pairs, 6, iterations=5, seed=9)
    b = sgns_sgd_embed(pairs, 6, iterations=5, seed=9)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sgns_sgd_embed(pairs, 6, iterations=5, seed=10))


def test_sgd_async_mode_runs():
    pairs = build_context_pairs(random_binary(np.random.default_rng(4), 40, 6), 4)
    Z = sgns_sgd_embed(pairs, 6, iterations=3, seed=1, workers=3)
    assert Z.shape == (40, 6) and np.isfinite(Z).all()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-4, 0.1))
def test_sgd_finite_from_unit_init(seed, lr):
    r = np.random.default_rng(seed)
    pairs = build_context_pairs(random_binary(r, 15, 4, 0.5), 3)
    init = r.standard_normal((15, 5))
    init /= np.linalg.norm(init, axis=1, keepdims=True)
    Z = sgns_sgd_embed(pairs, 5, n_neg=5, iterations=10, learning_rate=lr, seed=seed, init=init)
    assert np.isfinite(Z).all()


def test_sgd_validation():
    pairs = ContextPairs(np.array([[0, 1]]), 2)
    with pytest.raises(DataError):
        sgns_sgd_embed(pairs, 2, iterations=0)
    with pytest.raises(DataError):
        sgns_sgd_embed(pairs, 2, learning_rate=0)
    with pytest.raises(DataError):
        sgns_sgd_embed(pairs, 2, init=np.zeros((3, 2)))
