"""Instance and label embeddings: SPPMI factorization and native SGNS training."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .linalg import _top_k, truncated_svd

__all__ = [
    "ContextPairs",
    "build_context_pairs",
    "factorize_embeddings",
    "split_joint_embeddings",
    "log_sigmoid",
    "sgns_objective",
    "unigram_distribution",
    "init_embeddings",
    "sgns_sgd_embed",
]


@dataclass(frozen=True)
class ContextPairs:
    """Directed ``(i, j)`` context pairs over ``size`` items, ``i != j``."""

    pairs: np.ndarray  # (m, 2) int64
    size: int

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", p)
        if p.size and (p.min() < 0 or p.max() >= self.size):
            raise DataError("context pair index out of range")
        if np.any(p[:, 0] == p[:, 1]):
            raise DataError("self pairs are not allowed")

    def __len__(self):
        return len(self.pairs)

    def as_set(self):
        return {(int(i), int(j)) for i, j in self.pairs}


def build_context_pairs(labels, k: int) -> ContextPairs:
    """Pairs ``(i, j)`` for the ``k`` cosine-nearest label rows ``j`` of each nonempty row ``i``."""
    if k < 1:
        raise DataError("k must be >= 1")
    Y = sp.csr_matrix(labels, dtype=np.float64)
    n = Y.shape[0]
    if n < 2:
        return ContextPairs(np.empty((0, 2), np.int64), n)
    nonempty = np.flatnonzero(np.diff(Y.indptr) > 0)
    if nonempty.size == 0:
        return ContextPairs(np.empty((0, 2), np.int64), n)
    idx = np.empty((nonempty.size, min(k, n - 1)), dtype=np.int64)
    for start in range(0, nonempty.size, 1024):
        rows = nonempty[start:start + 1024]
        block_idx, _ = _knn_rows(Y, rows, k)
        idx[start:start + rows.size] = block_idx
    src = np.repeat(nonempty, idx.shape[1])
    return ContextPairs(np.column_stack([src, idx.ravel()]), n)


def _knn_rows(Y, rows, k):
    # neighbours of selected rows of Y among all rows, self excluded
    norms = np.sqrt(np.asarray(Y.multiply(Y).sum(axis=1)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    Yn = sp.diags(inv) @ Y
    S = (Yn[rows] @ Yn.T).toarray()
    kk = min(k, Y.shape[0] - 1)
    out = np.empty((rows.size, kk), dtype=np.int64)
    sims = np.empty((rows.size, kk))
    for r, i in enumerate(rows):
        top = _top_k(S[r], kk, int(i))
        out[r] = top
        sims[r] = S[r, top]
    return out, sims


def factorize_embeddings(S, d_prime: int, seed: int = 0) -> np.ndarray:
    """``Z = U diag(s)^{1/2}`` from the top-``d_prime`` singular triplets of ``S``."""
    matrix = S.matrix if hasattr(S, "matrix") else S
    U, s, _ = truncated_svd(matrix, d_prime, seed=seed)
    return U * np.sqrt(s)


def split_joint_embeddings(Z, n: int, L: int):
    Z = np.asarray(Z)
    if Z.shape[0] != n + L:
        raise DataError(f"joint embedding has {Z.shape[0]} rows, expected n+L={n + L}")
    return Z[:n], Z[n:]


def log_sigmoid(x):
    """Numerically stable ``log(sigmoid(x)) = -softplus(-x)``."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def _similarity(Z, i, j, similarity):
    a = np.einsum("ij,ij->i", Z[i], Z[j]) if np.ndim(i) else Z[i] @ Z[j]
    if similarity == "dot":
        return a
    ni = np.linalg.norm(Z[i], axis=-1)
    nj = np.linalg.norm(Z[j], axis=-1)
    den = ni * nj
    return np.divide(a, den, out=np.zeros_like(np.asarray(a, dtype=float)), where=den > 0)


def sgns_objective(Z, pairs: ContextPairs, neg_ratio: float, neg_distribution, similarity="dot") -> float:
    """SGNS log-likelihood with the negative term taken in expectation.

    Each positive pair ``(i, j)`` contributes ``log s(K_ij)`` plus
    ``neg_ratio * sum_j' P(j') log s(-K_ij')``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    P = np.asarray(neg_distribution, dtype=np.float64)
    if not np.isclose(P.sum(), 1.0, atol=1e-9):
        raise DataError("negative distribution must sum to 1")
    p = pairs.pairs if isinstance(pairs, ContextPairs) else np.asarray(pairs).reshape(-1, 2)
    if len(p) == 0:
        return 0.0
    pos = log_sigmoid(_similarity(Z, p[:, 0], p[:, 1], similarity)).sum()
    if similarity == "dot":
        K = Z @ Z.T
    else:
        Zn = Z / np.where(np.linalg.norm(Z, axis=1, keepdims=True) > 0,
                          np.linalg.norm(Z, axis=1, keepdims=True), 1.0)
        K = Zn @ Zn.T
    per_source = log_sigmoid(-K) @ P
    counts = np.bincount(p[:, 0], minlength=Z.shape[0])
    neg = neg_ratio * float(counts @ per_source)
    return float(pos + neg)


def unigram_distribution(pairs: ContextPairs, power: float = 0.75) -> np.ndarray:
    """Negative-sampling distribution ``count^power`` over context endpoints (uniform if no pairs)."""
    counts = np.bincount(pairs.pairs[:, 1], minlength=pairs.size).astype(np.float64) if len(pairs) else None
    if counts is None or counts.sum() == 0:
        return np.full(pairs.size, 1.0 / max(pairs.size, 1))
    w = counts ** power
    w[counts == 0] = 0.0
    return w / w.sum()


def init_embeddings(n: int, d_prime: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.5 / d_prime, 0.5 / d_prime, size=(n, d_prime))


TABLE_SIZE = 1 << 20


def _sampling_table(dist: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(dist)
    cdf /= cdf[-1]
    pos = (np.arange(TABLE_SIZE) + 0.5) / TABLE_SIZE
    return np.searchsorted(cdf, pos, side="right").clip(0, len(dist) - 1).astype(np.int64)


@numba.njit(cache=True, nogil=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True, nogil=True)
def _sgns_pass(Z, pairs, order, table, n_neg, lr0, lr_min, step0, total_steps, state):
    d = Z.shape[1]
    grad = np.zeros(d)
    step = step0
    for t in range(order.shape[0]):
        p = order[t]
        i = pairs[p, 0]
        j = pairs[p, 1]
        lr = lr0 * (1.0 - step / total_steps)
        if lr < lr_min:
            lr = lr_min
        step += 1
        for q in range(d):
            grad[q] = 0.0
        for s in range(n_neg + 1):
            if s == 0:
                c = j
                label = 1.0
            else:
                state = (state * 25214903917 + 11) & 0xFFFFFFFFFFFF
                c = table[(state >> 16) % table.shape[0]]
                if c == i or c == j:
                    continue
                label = 0.0
            dot = 0.0
            for q in range(d):
                dot += Z[i, q] * Z[c, q]
            g = lr * (label - _sigmoid(dot))
            for q in range(d):
                grad[q] += g * Z[c, q]
                Z[c, q] += g * Z[i, q]
        for q in range(d):
            Z[i, q] += grad[q]
    return state


@numba.njit(cache=True, parallel=True)
def _sgns_pass_async(Z, pairs, order, table, n_neg, lr0, lr_min, step0, total_steps, seeds, workers):
    # lock-free shared updates, results depend on thread scheduling
    m = order.shape[0]
    chunk = (m + workers - 1) // workers
    for w in numba.prange(workers):
        lo = w * chunk
        hi = min(m, lo + chunk)
        if lo < hi:
            _sgns_pass(Z, pairs, order[lo:hi], table, n_neg, lr0, lr_min,
                       step0 + lo, total_steps, seeds[w])


def sgns_sgd_embed(pairs: ContextPairs, d_prime: int, n_neg: int = 15, iterations: int = 35,
                   learning_rate: float = 0.025, seed: int = 42, init=None, workers: int = 1,
                   neg_power: float = 0.75, checkpoint=None) -> np.ndarray:
    """Learn embeddings by SGD on the SGNS objective over ``pairs``.

    A single embedding table is shared by items and contexts. Negatives are
    drawn from the ``count**neg_power`` distribution over pair endpoints;
    draws equal to either end of the positive pair are rejected, as in
    word2vec. The learning rate decays
    linearly to ``1e-4 * learning_rate``. ``workers > 1`` enables lock-free
    asynchronous updates (not reproducible). ``checkpoint(epoch, Z)`` is
    called after every epoch.
    """
    if iterations < 1:
        raise DataError("iterations must be >= 1")
    if not learning_rate > 0:
        raise DataError("learning rate must be positive")
    if d_prime < 1:
        raise DataError("d_prime must be >= 1")
    Z = init_embeddings(pairs.size, d_prime, seed) if init is None else np.array(init, dtype=np.float64)
    if Z.shape != (pairs.size, d_prime):
        raise DataError(f"initial embeddings have shape {Z.shape}, expected {(pairs.size, d_prime)}")
    if len(pairs) == 0:
        return Z
    rng = np.random.default_rng(seed)
    table = _sampling_table(unigram_distribution(pairs, neg_power))
    total = float(iterations * len(pairs))
    state = np.int64(rng.integers(1, 1 << 40))
    for epoch in range(iterations):
        order = rng.permutation(len(pairs)).astype(np.int64)
        step0 = float(epoch * len(pairs))
        if workers > 1:
            seeds = rng.integers(1, 1 << 40, size=workers).astype(np.int64)
            _sgns_pass_async(Z, pairs.pairs, order, table, int(n_neg), float(learning_rate),
                             1e-4 * learning_rate, step0, total, seeds, int(workers))
        else:
            state = _sgns_pass(Z, pairs.pairs, order, table, int(n_neg), float(learning_rate),
                               1e-4 * learning_rate, step0, total, state)
        if checkpoint is not None:
            checkpoint(epoch, Z.copy())
    return Z
