"""Shifted positive PMI transforms of co-occurrence matrices.

Only the stored (nonzero) entries of a co-occurrence matrix carry a defined
PMI value; everything else is undefined and maps to 0 once clamped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError

__all__ = [
    "PMIMatrix",
    "SPPMIMatrix",
    "pmi",
    "sppmi",
    "build_joint_matrix",
    "shifted_log_cond_prob",
    "knn_sparsify",
    "block_sppmi",
]


@dataclass(frozen=True)
class PMIMatrix:
    """PMI values at the defined coordinates of a ``shape`` matrix."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple

    def dense(self, fill=np.nan) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=np.float64)
        out[self.rows, self.cols] = self.values
        return out

    @property
    def defined(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.rows, self.cols] = True
        return mask


@dataclass(frozen=True)
class SPPMIMatrix:
    matrix: sp.csr_matrix
    shift: float  # the log(k) subtracted from PMI

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def _as_coo(M):
    A = sp.coo_matrix(M, dtype=np.float64)
    A.sum_duplicates()
    if A.nnz and (A.data < 0).any():
        raise DataError("co-occurrence matrix must be nonnegative")
    if not np.all(np.isfinite(A.data)):
        raise DataError("co-occurrence matrix has non-finite entries")
    return A


def pmi(M) -> PMIMatrix:
    """``PMI_ij = log(M_ij |M| / (rowsum_i colsum_j))`` on the positive entries of ``M``."""
    A = _as_coo(M)
    total = A.data.sum()
    if not total > 0:
        raise DataError("co-occurrence matrix is all zero")
    rowsum = np.asarray(A.sum(axis=1)).ravel()
    colsum = np.asarray(A.sum(axis=0)).ravel()
    pos = A.data > 0
    r, c, v = A.row[pos], A.col[pos], A.data[pos]
    # a positive entry implies positive marginals for a nonnegative matrix
    values = np.log(v) + np.log(total) - np.log(rowsum[r]) - np.log(colsum[c])
    order = np.lexsort((c, r))
    return PMIMatrix(r[order].astype(np.int64), c[order].astype(np.int64), values[order], A.shape)


def _clamp(result: PMIMatrix, shift: float) -> sp.csr_matrix:
    vals = result.values - shift
    keep = vals > 0
    out = sp.csr_matrix((vals[keep], (result.rows[keep], result.cols[keep])), shape=result.shape)
    out.sort_indices()
    return out


def _shift_of(neg_samples) -> float:
    if not neg_samples > 0:
        raise DataError(f"negative-sample count must be positive, got {neg_samples}")
    return float(np.log(neg_samples))


def sppmi(M, neg_samples: float = 1.0) -> SPPMIMatrix:
    """``max(PMI - log(neg_samples), 0)``, undefined entries set to 0."""
    if not neg_samples >= 1:
        raise DataError(f"neg_samples must be >= 1, got {neg_samples}")
    shift = _shift_of(neg_samples)
    return SPPMIMatrix(_clamp(pmi(M), shift), shift)


def shifted_log_cond_prob(M, neg_samples: float = 1.0, symmetrize: bool = True) -> SPPMIMatrix:
    """Clamped ``log(M_ij / colsum_j) - log(neg_samples)``, the NCE counterpart of SPPMI.

    The raw matrix is asymmetric; by default ``(K + K^T) / 2`` is returned so
    it can be factorized like SPPMI. ``neg_samples`` may be below 1 here.
    """
    A = _as_coo(M)
    if not A.data.sum() > 0:
        raise DataError("co-occurrence matrix is all zero")
    shift = _shift_of(neg_samples)
    colsum = np.asarray(A.sum(axis=0)).ravel()
    pos = A.data > 0
    r, c, v = A.row[pos], A.col[pos], A.data[pos]
    vals = np.log(v) - np.log(colsum[c]) - shift
    keep = vals > 0
    K = sp.csr_matrix((vals[keep], (r[keep], c[keep])), shape=A.shape)
    if symmetrize:
        K = ((K + K.T) * 0.5).tocsr()
    K.eliminate_zeros()
    K.sort_indices()
    return SPPMIMatrix(K, shift)


def build_joint_matrix(M, Y, C, mu1: float, mu2: float, mu3: float) -> sp.csr_matrix:
    """Block matrix ``[[mu2 M, mu3 Y], [mu3 Y^T, mu1 C]]`` of size ``(n+L, n+L)``."""
    M = sp.csr_matrix(M, dtype=np.float64)
    Y = sp.csr_matrix(Y, dtype=np.float64)
    C = sp.csr_matrix(C, dtype=np.float64)
    n, L = Y.shape
    if M.shape != (n, n):
        raise DataError(f"M has shape {M.shape}, expected {(n, n)}")
    if C.shape != (L, L):
        raise DataError(f"C has shape {C.shape}, expected {(L, L)}")
    if min(mu1, mu2, mu3) < 0 or not (mu1 > 0 or mu2 > 0 or mu3 > 0):
        raise DataError("mu weights must be nonnegative with at least one positive")
    A = sp.bmat([[mu2 * M, mu3 * Y], [mu3 * Y.T, mu1 * C]], format="csr")
    A.eliminate_zeros()
    A.sort_indices()
    return A


def knn_sparsify(M, k: int) -> sp.csr_matrix:
    """Keep only entries ``(i, j)`` where each is among the other's top-``k`` off-diagonal entries.

    The diagonal is preserved. Used to restrict SPPMI to kNN context pairs.
    """
    M = sp.csr_matrix(M, dtype=np.float64)
    n = M.shape[0]
    rows, cols = [], []
    for i in range(n):
        lo, hi = M.indptr[i], M.indptr[i + 1]
        idx, val = M.indices[lo:hi], M.data[lo:hi]
        off = idx != i
        idx, val = idx[off], val[off]
        if idx.size:
            order = np.lexsort((idx, -val))[:k]
            rows.append(np.full(order.size, i))
            cols.append(idx[order])
    if rows:
        r, c = np.concatenate(rows), np.concatenate(cols)
        top = sp.csr_matrix((np.ones(r.size), (r, c)), shape=M.shape)
    else:
        top = sp.csr_matrix(M.shape)
    mutual = top.multiply(top.T)
    mutual = mutual + sp.diags(np.ones(n))
    out = M.multiply(mutual > 0).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def block_sppmi(A, n: int, neg_instance: float, neg_cross: float, neg_label: float) -> SPPMIMatrix:
    """SPPMI of a joint ``(n+L)`` matrix with a separate shift per block.

    PMI is computed on the whole matrix; the instance-instance block is
    shifted by ``log(neg_instance)``, the two instance-label blocks by
    ``log(neg_cross)`` and the label-label block by ``log(neg_label)``.
    """
    for k in (neg_instance, neg_cross, neg_label):
        if not k >= 1:
            raise DataError(f"negative-sample counts must be >= 1, got {k}")
    res = pmi(A)
    inst_r, inst_c = res.rows < n, res.cols < n
    shift = np.where(inst_r & inst_c, np.log(neg_instance),
                     np.where(~inst_r & ~inst_c, np.log(neg_label), np.log(neg_cross)))
    vals = res.values - shift
    keep = vals > 0
    out = sp.csr_matrix((vals[keep], (res.rows[keep], res.cols[keep])), shape=res.shape)
    out.sort_indices()
    return SPPMIMatrix(out, float(np.log(neg_instance)))
