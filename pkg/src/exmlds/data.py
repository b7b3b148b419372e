"""Reading and writing extreme-classification repository files, label masking.

File layout::

    n d L
    l1,l2,...,lk f1:v1 f2:v2 ...

Indices are 0-based. A row without labels starts with a space.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError, XMLCParseError

__all__ = [
    "Dataset",
    "MaskResult",
    "parse_xmlc_dataset",
    "load_dataset",
    "load_split_dataset",
    "write_xmlc_dataset",
    "save_dataset",
    "mask_labels",
    "write_mask_manifest",
    "read_mask_manifest",
    "build_label_cooccurrence",
]


@dataclass(frozen=True)
class Dataset:
    features: sp.csr_matrix
    labels: sp.csr_matrix

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"feature rows ({self.features.shape[0]}) != label rows ({self.labels.shape[0]})"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def L(self) -> int:
        return self.labels.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows])

    def with_labels(self, labels: sp.csr_matrix) -> "Dataset":
        return Dataset(self.features, sp.csr_matrix(labels))


@dataclass(frozen=True)
class MaskResult:
    masked: sp.csr_matrix
    hidden: np.ndarray  # (h, 2) int64 array of (row, label), row-major order
    fraction: float
    seed: int
    original_nnz: int = field(default=0)


def _int(token, what, lineno):
    try:
        value = int(token)
    except ValueError:
        raise XMLCParseError(f"non-integer {what} {token!r}", lineno) from None
    return value


def parse_xmlc_dataset(source) -> Dataset:
    """Parse a dataset from a binary/text stream, bytes or str.

    Raises :class:`XMLCParseError` carrying the 1-based line number of the
    first offending line.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in lines]
    if not lines:
        raise XMLCParseError("empty input: missing header", 1)

    header = lines[0].split()
    if len(header) != 3:
        raise XMLCParseError(f"header must be 'n d L', got {lines[0]!r}", 1)
    n, d, L = (_int(t, "header field", 1) for t in header)
    if n < 0 or d < 0 or L < 0:
        raise XMLCParseError("negative dimension in header", 1)

    body = lines[1:]
    # trailing blank lines beyond n rows are tolerated
    while len(body) > n and body[-1].strip() == "":
        body.pop()
    if len(body) != n:
        raise XMLCParseError(f"header declares {n} rows, found {len(body)}", len(lines))

    f_indptr = [0]
    f_indices: list[int] = []
    f_data: list[float] = []
    l_indptr = [0]
    l_indices: list[int] = []
    for row, line in enumerate(body):
        lineno = row + 2
        tokens = line.split()
        if tokens and not line[:1].isspace() and ":" not in tokens[0]:
            label_tok, feat_toks = tokens[0], tokens[1:]
        else:
            label_tok, feat_toks = "", tokens
        labels = set()
        if label_tok:
            for t in label_tok.split(","):
                if t == "":
                    continue
                lab = _int(t, "label", lineno)
                if not 0 <= lab < L:
                    raise XMLCParseError(f"label {lab} out of range [0, {L})", lineno)
                labels.add(lab)
        l_indices.extend(sorted(labels))
        l_indptr.append(len(l_indices))

        feats = {}
        for t in feat_toks:
            idx_s, sep, val_s = t.partition(":")
            if not sep:
                raise XMLCParseError(f"feature token {t!r} lacks ':'", lineno)
            idx = _int(idx_s, "feature index", lineno)
            if not 0 <= idx < d:
                raise XMLCParseError(f"feature index {idx} out of range [0, {d})", lineno)
            try:
                val = float(val_s)
            except ValueError:
                raise XMLCParseError(f"non-numeric feature value {val_s!r}", lineno) from None
            if not math.isfinite(val):
                raise XMLCParseError(f"non-finite feature value {val_s!r}", lineno)
            if idx in feats:
                raise XMLCParseError(f"duplicate feature index {idx}", lineno)
            feats[idx] = val
        for idx in sorted(feats):
            if feats[idx] != 0.0:
                f_indices.append(idx)
                f_data.append(feats[idx])
        f_indptr.append(len(f_indices))

    features = sp.csr_matrix(
        (np.asarray(f_data, dtype=np.float64), np.asarray(f_indices, dtype=np.int64),
         np.asarray(f_indptr, dtype=np.int64)),
        shape=(n, d),
    )
    labels = sp.csr_matrix(
        (np.ones(len(l_indices), dtype=np.float64), np.asarray(l_indices, dtype=np.int64),
         np.asarray(l_indptr, dtype=np.int64)),
        shape=(n, L),
    )
    return Dataset(features, labels)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_xmlc_dataset(fh)


def load_split_dataset(data_path, split_path, column=0) -> Dataset:
    """Load rows of a combined ``*_data.txt`` file selected by a split file.

    Split files list 1-based row numbers, one column per prescribed split.
    """
    full = load_dataset(data_path)
    split = np.loadtxt(split_path, dtype=np.int64, ndmin=2)
    rows = split[:, column] - 1
    if rows.min() < 0 or rows.max() >= full.n:
        raise DataError(f"split file {split_path} references rows outside [1, {full.n}]")
    return full.subset(rows)


def write_xmlc_dataset(dataset: Dataset, stream) -> None:
    """Write ``dataset`` to a text stream; values use ``repr`` so parsing round-trips."""
    X = sp.csr_matrix(dataset.features)
    Y = sp.csr_matrix(dataset.labels)
    X.sort_indices()
    Y.sort_indices()
    stream.write(f"{dataset.n} {dataset.d} {dataset.L}\n")
    for i in range(dataset.n):
        labs = Y.indices[Y.indptr[i]:Y.indptr[i + 1]]
        cols = X.indices[X.indptr[i]:X.indptr[i + 1]]
        vals = X.data[X.indptr[i]:X.indptr[i + 1]]
        parts = [",".join(str(int(j)) for j in labs)]
        parts.extend(f"{int(c)}:{float(v)!r}" for c, v in zip(cols, vals) if v != 0.0)
        stream.write(" ".join(parts) + "\n")


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_xmlc_dataset(dataset, fh)


def dumps_dataset(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_xmlc_dataset(dataset, buf)
    return buf.getvalue()


def _binary_csr(labels) -> sp.csr_matrix:
    Y = sp.csr_matrix(labels, dtype=np.float64, copy=True)
    Y.sum_duplicates()
    Y.eliminate_zeros()
    Y.sort_indices()
    if Y.nnz and not np.all(Y.data == 1.0):
        raise DataError("label matrix must be binary")
    return Y


def mask_labels(labels, fraction: float, seed: int) -> MaskResult:
    """Hide ``round(fraction * nnz)`` uniformly chosen nonzeros of ``labels``."""
    if not 0.0 <= fraction <= 1.0:
        raise DataError(f"mask fraction must lie in [0, 1], got {fraction}")
    Y = _binary_csr(labels)
    nnz = Y.nnz
    n_hidden = int(math.floor(fraction * nnz + 0.5))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(nnz, size=n_hidden, replace=False)) if n_hidden else np.empty(0, np.int64)

    rows = np.repeat(np.arange(Y.shape[0], dtype=np.int64), np.diff(Y.indptr))
    cols = Y.indices.astype(np.int64)
    hidden = np.column_stack([rows[chosen], cols[chosen]]).astype(np.int64)
    keep = np.ones(nnz, dtype=bool)
    keep[chosen] = False
    masked = sp.csr_matrix(
        (np.ones(int(keep.sum())), (rows[keep], cols[keep])), shape=Y.shape
    )
    masked.sort_indices()
    return MaskResult(masked=masked, hidden=hidden.reshape(-1, 2), fraction=float(fraction),
                      seed=int(seed), original_nnz=nnz)


def write_mask_manifest(result: MaskResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{result.fraction!r} {result.seed} {len(result.hidden)}\n")
        for r, c in result.hidden:
            fh.write(f"{int(r)} {int(c)}\n")


def read_mask_manifest(path):
    """Return ``(fraction, seed, hidden)`` from a manifest file."""
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 3:
            raise DataError(f"{os.fspath(path)}: malformed manifest header")
        fraction, seed, count = float(head[0]), int(head[1]), int(head[2])
        hidden = np.array([[int(t) for t in ln.split()] for ln in fh if ln.strip()],
                          dtype=np.int64).reshape(-1, 2)
    if len(hidden) != count:
        raise DataError(f"manifest declares {count} entries, found {len(hidden)}")
    return fraction, seed, hidden


def build_label_cooccurrence(labels) -> sp.csr_matrix:
    """Label-label co-occurrence counts ``C = Y^T Y`` (symmetric, integer valued)."""
    Y = _binary_csr(labels)
    if Y.shape[0] == 0 or Y.shape[1] == 0:
        raise DataError("label matrix is empty")
    C = (Y.T @ Y).tocsr()
    C.sort_indices()
    return C
