"""Linear maps from features to embeddings.

``admm_ridge`` fits ``V`` (d' x d) to ``X V^T ~ Z`` with a ridge penalty.
``joint_sgd_v`` instead ascends the SGNS objective of ``Z = X V^T``
directly, with dot-product or cosine similarity between embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .embed import ContextPairs, sgns_objective
from .errors import DataError, DegenerateGradientError, NumericalError

__all__ = [
    "Regressor",
    "default_lambda",
    "admm_ridge",
    "gradient_v_dot",
    "gradient_v_cosine",
    "joint_sgd_v",
    "NORM_EPS",
]

NORM_EPS = 1e-12
DIRECT_SOLVE_MAX_D = 2000


@dataclass
class Regressor:
    V: np.ndarray
    lam: float = 0.0
    similarity: str = "dot"
    iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    history: list = field(default_factory=list)

    def embed(self, X) -> np.ndarray:
        """``X V^T`` for a matrix of feature rows (dense or sparse)."""
        out = X @ self.V.T
        return np.asarray(out)


def _check_finite(name, A):
    data = A.data if sp.issparse(A) else A
    if not np.all(np.isfinite(data)):
        raise DataError(f"{name} contains non-finite values")


def default_lambda(X) -> float:
    """Scale-aware ridge weight ``0.01 * trace(X^T X) / d``."""
    d = X.shape[1]
    sq = X.multiply(X).sum() if sp.issparse(X) else np.square(X).sum()
    return 0.01 * float(sq) / max(d, 1)


class _ShiftedSolver:
    """Solves ``(2 X^T X + rho I) W = B`` for any ``rho`` from one eigendecomposition."""

    def __init__(self, X):
        self.X = X
        n, d = X.shape
        self.fat = d > n
        G = X @ X.T if self.fat else X.T @ X
        G = G.toarray() if sp.issparse(G) else np.asarray(G)
        evals, self.Q = np.linalg.eigh((G + G.T) * 0.5)
        self.evals = np.maximum(evals, 0.0)

    def solve(self, B, rho):
        Q, e = self.Q, self.evals
        if not self.fat:
            return Q @ ((Q.T @ B) / (2.0 * e + rho)[:, None])
        # Woodbury: (rho I + 2 X^T X)^{-1} = (I - X^T (rho/2 I + X X^T)^{-1} X) / rho
        XB = np.asarray(self.X @ B)
        inner = Q @ ((Q.T @ XB) / (0.5 * rho + e)[:, None])
        return (B - np.asarray(self.X.T @ inner)) / rho


def _direct_ridge(X, Z, lam):
    G = X.T @ X
    G = G.toarray() if sp.issparse(G) else np.asarray(G)
    rhs = np.asarray(X.T @ Z)
    A = G + lam * np.eye(G.shape[0])
    try:
        return sla.cho_solve(sla.cho_factor(A, lower=False), rhs)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        return np.linalg.lstsq(A, rhs, rcond=None)[0]


def admm_ridge(X, Z, lam=None, rho: float = 1.0, max_iters: int = 200, tol: float = 1e-6,
               solver: str = "auto", adaptive_rho: bool = True) -> Regressor:
    """Minimize ``||X V^T - Z||_F^2 + lam ||V||_F^2``.

    ``solver="admm"`` runs consensus ADMM (least-squares step, proximal ridge
    step, scaled dual update) until primal and dual residuals fall below
    ``tol`` (absolute plus relative, Boyd et al. style) or ``max_iters``.
    ``solver="direct"`` solves the normal equations; ``"auto"`` picks direct
    when ``d <= 2000``. ``lam=None`` uses :func:`default_lambda`.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if X.shape[0] != Z.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but Z has {Z.shape[0]}")
    if not sp.issparse(X):
        X = np.asarray(X, dtype=np.float64)
    _check_finite("X", X)
    _check_finite("Z", Z)
    if lam is None:
        lam = default_lambda(X)
    if lam < 0 or not rho > 0:
        raise DataError("need lam >= 0 and rho > 0")
    d = X.shape[1]
    k = Z.shape[1]
    if solver == "auto":
        solver = "direct" if d <= DIRECT_SOLVE_MAX_D else "admm"
    if solver == "direct":
        W = _direct_ridge(X, Z, lam)
        return Regressor(V=np.ascontiguousarray(W.T), lam=float(lam))
    if solver != "admm":
        raise DataError(f"unknown solver {solver!r}")

    lin = _ShiftedSolver(X)
    XtZ2 = 2.0 * np.asarray(X.T @ Z)
    W = np.zeros((d, k))
    U = np.zeros((d, k))
    Lam = np.zeros((d, k))  # scaled dual
    sqrt_p = np.sqrt(d * k)
    r_norm = s_norm = np.inf
    it = 0
    history = []
    for it in range(1, max_iters + 1):
        W = lin.solve(XtZ2 + rho * (U - Lam), rho)
        U_old = U
        U = rho * (W + Lam) / (2.0 * lam + rho)
        Lam = Lam + W - U
        r_norm = np.linalg.norm(W - U)
        s_norm = rho * np.linalg.norm(U - U_old)
        eps_pri = sqrt_p * tol + tol * max(np.linalg.norm(W), np.linalg.norm(U))
        eps_dual = sqrt_p * tol + tol * rho * np.linalg.norm(Lam)
        history.append((r_norm, s_norm, rho))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            break
        if adaptive_rho:
            if r_norm > 10.0 * s_norm:
                rho *= 2.0
                Lam /= 2.0
            elif s_norm > 10.0 * r_norm:
                rho /= 2.0
                Lam *= 2.0
    return Regressor(V=np.ascontiguousarray(U.T), lam=float(lam), iterations=it,
                     primal_residual=float(r_norm), dual_residual=float(s_norm), history=history)


def _row(X, i):
    if sp.issparse(X):
        return np.asarray(X[i].toarray()).ravel()
    return np.asarray(X[i], dtype=np.float64)


def gradient_v_dot(V, X, i, j) -> np.ndarray:
    """Gradient of ``<V x_i, V x_j>`` w.r.t. ``V``: ``z_i x_j^T + z_j x_i^T``."""
    xi, xj = _row(X, i), _row(X, j)
    zi, zj = V @ xi, V @ xj
    return np.outer(zi, xj) + np.outer(zj, xi)


def gradient_v_cosine(V, X, i, j) -> np.ndarray:
    """Gradient of ``cos(V x_i, V x_j)`` w.r.t. ``V``.

    With ``a = z_i.z_j``, ``b = 1/|z_i|``, ``c = 1/|z_j|``:
    ``-a b^3 c z_i x_i^T - a b c^3 z_j x_j^T + b c (z_i x_j^T + z_j x_i^T)``.
    """
    xi, xj = _row(X, i), _row(X, j)
    zi, zj = V @ xi, V @ xj
    ni, nj = np.linalg.norm(zi), np.linalg.norm(zj)
    if ni <= NORM_EPS or nj <= NORM_EPS:
        raise DegenerateGradientError(f"embedding norm below {NORM_EPS} for pair ({i}, {j})")
    a, b, c = zi @ zj, 1.0 / ni, 1.0 / nj
    return (-a * b**3 * c * np.outer(zi, xi) - a * b * c**3 * np.outer(zj, xj)
            + b * c * (np.outer(zi, xj) + np.outer(zj, xi)))


@numba.njit(cache=True)
def _sigm(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _embed_row(V, indptr, indices, data, r, out):
    for q in range(V.shape[0]):
        out[q] = 0.0
    for p in range(indptr[r], indptr[r + 1]):
        col = indices[p]
        val = data[p]
        for q in range(V.shape[0]):
            out[q] += V[q, col] * val


@numba.njit(cache=True)
def _apply_row(V, indptr, indices, data, r, coef, eta):
    for p in range(indptr[r], indptr[r + 1]):
        col = indices[p]
        val = data[p] * eta
        for q in range(V.shape[0]):
            V[q, col] += coef[q] * val


@numba.njit(cache=True)
def _pair_coefs(zi, zj, cosine, gscale, ci, cj):
    # adds gscale * dK/dV expressed as coefficient vectors on x_i and x_j
    a = 0.0
    for q in range(zi.shape[0]):
        a += zi[q] * zj[q]
    if not cosine:
        for q in range(zi.shape[0]):
            ci[q] += gscale * zj[q]
            cj[q] += gscale * zi[q]
        return True
    ni = 0.0
    nj = 0.0
    for q in range(zi.shape[0]):
        ni += zi[q] * zi[q]
        nj += zj[q] * zj[q]
    ni = np.sqrt(ni)
    nj = np.sqrt(nj)
    if ni <= 1e-12 or nj <= 1e-12:
        return False
    b = 1.0 / ni
    c = 1.0 / nj
    for q in range(zi.shape[0]):
        ci[q] += gscale * (b * c * zj[q] - a * b * b * b * c * zi[q])
        cj[q] += gscale * (b * c * zi[q] - a * b * c * c * c * zj[q])
    return True


@numba.njit(cache=True)
def _similarity_of(zi, zj, cosine):
    a = 0.0
    ni = 0.0
    nj = 0.0
    for q in range(zi.shape[0]):
        a += zi[q] * zj[q]
        ni += zi[q] * zi[q]
        nj += zj[q] * zj[q]
    if not cosine:
        return a, True
    if ni <= 1e-24 or nj <= 1e-24:
        return 0.0, False
    return a / np.sqrt(ni * nj), True


@numba.njit(cache=True)
def _joint_epoch(V, indptr, indices, data, src_order, starts, ctx, table, n_neg, eta, cosine, state):
    dprime = V.shape[0]
    zi = np.zeros(dprime)
    zc = np.zeros(dprime)
    ci = np.zeros(dprime)
    max_ctx = 0
    for t in range(starts.shape[0] - 1):
        if starts[t + 1] - starts[t] > max_ctx:
            max_ctx = starts[t + 1] - starts[t]
    rows = np.empty(max_ctx * (n_neg + 1), dtype=np.int64)
    coefs = np.zeros((max_ctx * (n_neg + 1), dprime))
    for t in range(src_order.shape[0]):
        i = src_order[t]
        lo = starts[i]
        hi = starts[i + 1]
        if lo == hi:
            continue
        _embed_row(V, indptr, indices, data, i, zi)
        for q in range(dprime):
            ci[q] = 0.0
        m = 0
        for p in range(lo, hi):
            j = ctx[p]
            for s in range(n_neg + 1):
                if s == 0:
                    c = j
                else:
                    state = (state * 25214903917 + 11) & 0xFFFFFFFFFFFF
                    c = table[(state >> 16) % table.shape[0]]
                _embed_row(V, indptr, indices, data, c, zc)
                K, ok = _similarity_of(zi, zc, cosine)
                if not ok:
                    continue
                g = _sigm(-K) if s == 0 else -_sigm(K)
                for q in range(dprime):
                    coefs[m, q] = 0.0
                if _pair_coefs(zi, zc, cosine, g, ci, coefs[m]):
                    rows[m] = c
                    m += 1
        # every z above used the pre-update V, so this is one gradient step
        _apply_row(V, indptr, indices, data, i, ci, eta)
        for r in range(m):
            _apply_row(V, indptr, indices, data, rows[r], coefs[r], eta)
    return state


def joint_sgd_v(X, pairs: ContextPairs, d_prime: int, n_neg: int = 15, iterations: int = 35,
                eta: float = 0.01, similarity: str = "dot", seed: int = 42, init_V=None,
                report_objective: bool | None = None) -> Regressor:
    """Stochastic gradient ascent on the SGNS objective of ``Z = X V^T`` w.r.t. ``V``.

    Instances are visited in a seeded random order each epoch; for instance
    ``i`` the gradient sums ``sigma(-K_ij) dK_ij`` over its context pairs and
    ``-sigma(K_ij') dK_ij'`` over ``n_neg`` uniformly drawn negatives per pair
    (``i`` and ``j`` included, so the step is unbiased for the expected
    negative term), then ``V += eta * grad``. Pairs with a zero-norm embedding are skipped
    under cosine similarity. ``history`` holds the objective after each epoch,
    preceded by its initial value.
    """
    if similarity not in ("dot", "cosine"):
        raise DataError(f"similarity must be 'dot' or 'cosine', got {similarity!r}")
    if iterations < 0 or not eta > 0:
        raise DataError("need iterations >= 0 and eta > 0")
    Xs = sp.csr_matrix(X, dtype=np.float64)
    Xs.sort_indices()
    n, d = Xs.shape
    if pairs.size != n:
        raise DataError(f"pairs index {pairs.size} items but X has {n} rows")
    rng = np.random.default_rng(seed)
    if init_V is None:
        V = rng.uniform(-0.5 / d_prime, 0.5 / d_prime, size=(d_prime, d))
    else:
        V = np.array(init_V, dtype=np.float64)
        if V.shape != (d_prime, d):
            raise DataError(f"init_V has shape {V.shape}, expected {(d_prime, d)}")
    if report_objective is None:
        report_objective = n <= 10000
    uniform = np.full(n, 1.0 / n)

    def objective():
        return sgns_objective(np.asarray(Xs @ V.T), pairs, n_neg, uniform, similarity)

    history = [objective()] if report_objective else []
    p = pairs.pairs[np.lexsort((pairs.pairs[:, 1], pairs.pairs[:, 0]))]
    starts = np.searchsorted(p[:, 0], np.arange(n + 1)).astype(np.int64)
    ctx = np.ascontiguousarray(p[:, 1])
    table = (np.arange(1 << 20, dtype=np.int64) * n) >> 20
    state = np.int64(rng.integers(1, 1 << 40))
    for epoch in range(iterations):
        order = rng.permutation(n).astype(np.int64)
        state = _joint_epoch(V, Xs.indptr.astype(np.int64), Xs.indices.astype(np.int64), Xs.data,
                             order, starts, ctx, table, int(n_neg), float(eta),
                             similarity == "cosine", state)
        if not np.all(np.isfinite(V)):
            raise NumericalError(f"joint SGD diverged in epoch {epoch + 1}; lower eta (now {eta})")
        if report_objective:
            history.append(objective())
    return Regressor(V=V, similarity=similarity, iterations=iterations, history=history)
