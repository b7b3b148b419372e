"""Matrix primitives: label gram products, truncated SVD, exact cosine kNN."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DataError, NumericalError

__all__ = [
    "gram",
    "truncated_svd",
    "fix_signs",
    "row_normalize",
    "cosine_knn",
    "cosine_knn_batch",
]

# below this size a dense LAPACK decomposition is cheaper than Krylov iterations
DENSE_SVD_LIMIT = 600
# similarities equal to this many decimals count as ties in kNN ranking
TIE_DECIMALS = 12


def gram(labels) -> sp.csr_matrix:
    """Instance-instance inner products ``M = Y Y^T`` of label rows (diagonal kept)."""
    Y = sp.csr_matrix(labels, dtype=np.float64)
    if Y.shape[0] == 0:
        raise DataError("label matrix has no rows")
    M = (Y @ Y.T).tocsr()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def fix_signs(U, V):
    """Flip singular-vector pairs so each column of ``U`` has its largest-magnitude entry positive."""
    U = np.array(U, dtype=np.float64, copy=True)
    V = np.array(V, dtype=np.float64, copy=True)
    if U.shape[1] == 0:
        return U, V
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def _is_symmetric(A) -> bool:
    if A.shape[0] != A.shape[1]:
        return False
    if sp.issparse(A):
        diff = (A - A.T)
        return diff.nnz == 0 or abs(diff).max() <= 1e-12 * max(abs(A).max(), 1e-300)
    return np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(np.abs(A).max(), 1e-300))


def truncated_svd(matrix, d_prime: int, *, maxiter=None, seed=0):
    """Top-``d_prime`` singular triplets ``(U, S, V)`` with ``A ~ U diag(S) V^T``.

    Large inputs go through ARPACK (symmetric Lanczos when the input is
    symmetric, otherwise Lanczos on the normal operator); small inputs or
    requests close to full rank use a dense LAPACK decomposition. ``V`` is
    returned with singular vectors as columns. Signs follow :func:`fix_signs`.
    """
    rows, cols = matrix.shape
    kmax = min(rows, cols)
    if not 1 <= d_prime <= kmax:
        raise DataError(f"d_prime={d_prime} outside [1, {kmax}]")

    use_dense = kmax <= DENSE_SVD_LIMIT or d_prime >= kmax // 2
    if use_dense:
        A = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=np.float64)
        if not np.all(np.isfinite(A)):
            raise NumericalError("matrix has non-finite entries")
        try:
            U, S, Vt = sla.svd(A, full_matrices=False, lapack_driver="gesdd")
        except np.linalg.LinAlgError:
            U, S, Vt = sla.svd(A, full_matrices=False, lapack_driver="gesvd")
        U, S, V = U[:, :d_prime], S[:d_prime], Vt[:d_prime].T
    else:
        A = sp.csr_matrix(matrix, dtype=np.float64) if sp.issparse(matrix) else np.asarray(matrix, dtype=np.float64)
        v0 = np.random.default_rng(seed).standard_normal(rows if rows == cols else min(rows, cols))
        try:
            if _is_symmetric(A):
                lam, Q = spla.eigsh(A, k=d_prime, which="LM", v0=v0, maxiter=maxiter, tol=0)
                order = np.argsort(-np.abs(lam), kind="stable")
                lam, Q = lam[order], Q[:, order]
                S = np.abs(lam)
                U = Q
                V = Q * np.where(lam < 0, -1.0, 1.0)
            else:
                U, S, Vt = spla.svds(A, k=d_prime, v0=v0, maxiter=maxiter, tol=0)
                order = np.argsort(-S, kind="stable")
                U, S, V = U[:, order], S[order], Vt[order].T
        except spla.ArpackNoConvergence as exc:
            raise NumericalError(f"truncated SVD did not converge: {exc}") from exc
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(S)) and np.all(np.isfinite(V))):
        raise NumericalError("truncated SVD produced non-finite values")
    S = np.maximum(S, 0.0)
    U, V = fix_signs(U, V)
    return U, S, V


def row_normalize(A) -> np.ndarray:
    """Rows scaled to unit 2-norm; zero rows stay zero."""
    A = np.asarray(A, dtype=np.float64)
    norms = np.linalg.norm(A, axis=-1, keepdims=True)
    return np.divide(A, norms, out=np.zeros_like(A), where=norms > 0)


def _top_k(sims, k, exclude=None):
    """Indices of the ``k`` largest entries, descending, ties broken by lower index."""
    n = sims.shape[0]
    valid = np.ones(n, dtype=bool)
    if exclude is not None and 0 <= exclude < n:
        valid[exclude] = False
    idx = np.flatnonzero(valid)
    k = min(k, idx.size)
    if k == 0:
        return idx[:0]
    # rounding absorbs last-bit noise so mathematically equal similarities tie exactly
    s = np.round(sims[idx], TIE_DECIMALS)
    if k < idx.size:
        # everything tying with the k-th best value must stay a candidate
        kth = np.partition(-s, k - 1)[k - 1]
        keep = -s <= kth
        idx, s = idx[keep], s[keep]
    order = np.lexsort((idx, -s))
    return idx[order[:k]]


def cosine_knn(query, corpus, k: int, exclude=None):
    """Exact ``k`` nearest corpus rows by cosine similarity.

    Returns a list of ``(index, similarity)``. Zero-norm vectors have
    similarity 0 with everything. ``exclude`` (an index) is never returned;
    fewer than ``k`` results come back when the corpus is too small.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    corpus = np.asarray(corpus, dtype=np.float64)
    if corpus.ndim != 2 or corpus.shape[0] == 0:
        raise DataError("corpus must be a nonempty 2-D array")
    q = row_normalize(np.asarray(query, dtype=np.float64)[None, :])[0]
    sims = row_normalize(corpus) @ q
    top = _top_k(sims, k, exclude)
    return [(int(i), float(sims[i])) for i in top]


def cosine_knn_batch(queries, corpus, k: int, exclude_self: bool = False, block: int = 1024):
    """Row-wise :func:`cosine_knn` for a matrix of queries.

    Returns ``(indices, similarities)`` of shape ``(m, min(k, usable))``.
    With ``exclude_self`` query ``i`` never returns corpus row ``i``.
    Accepts dense arrays or sparse matrices for both arguments.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    if sp.issparse(corpus):
        C = sp.csr_matrix(corpus, dtype=np.float64)
        norms = np.sqrt(np.asarray(C.multiply(C).sum(axis=1)).ravel())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        Cn = sp.diags(inv) @ C
    else:
        Cn = row_normalize(corpus)
    if sp.issparse(queries):
        Q = sp.csr_matrix(queries, dtype=np.float64)
        qn = np.sqrt(np.asarray(Q.multiply(Q).sum(axis=1)).ravel())
        qinv = np.divide(1.0, qn, out=np.zeros_like(qn), where=qn > 0)
        Qn = sp.diags(qinv) @ Q
    else:
        Qn = row_normalize(queries)
    m, n = Qn.shape[0], Cn.shape[0]
    kk = min(k, n - 1 if exclude_self else n)
    out_idx = np.zeros((m, max(kk, 0)), dtype=np.int64)
    out_sim = np.zeros((m, max(kk, 0)), dtype=np.float64)
    if kk <= 0:
        return out_idx, out_sim
    for start in range(0, m, block):
        stop = min(m, start + block)
        S = Qn[start:stop] @ Cn.T
        S = S.toarray() if sp.issparse(S) else np.asarray(S)
        for r in range(stop - start):
            i = start + r
            top = _top_k(S[r], kk, i if exclude_self else None)
            out_idx[i] = top
            out_sim[i] = S[r, top]
    return out_idx, out_sim
