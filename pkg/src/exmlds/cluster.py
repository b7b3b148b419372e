"""Spherical k-means partitioning of training instances in feature space."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError

__all__ = ["ClusterModel", "partition_instances", "assign_cluster", "assign_clusters",
           "default_num_clusters"]


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (C, d), unit rows; zero rows for empty clusters
    assignments: np.ndarray  # (n,) int64
    empty: np.ndarray  # (C,) bool
    objective_history: list

    @property
    def num_clusters(self) -> int:
        return self.centroids.shape[0]

    def members(self, t) -> np.ndarray:
        return np.flatnonzero(self.assignments == t)


def default_num_clusters(n: int) -> int:
    return 1 if n < 20000 else math.ceil(n / 6000)


def _normalize_rows(X):
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
        norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        return sp.csr_matrix(sp.diags(inv) @ X), norms
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return X * inv[:, None], norms


def _dense_row(X, i):
    return X[i].toarray().ravel() if sp.issparse(X) else np.array(X[i], dtype=np.float64)


def _seed_centroids(Xn, norms, k, rng):
    # k-means++ on cosine distance 1 - cos
    n = Xn.shape[0]
    usable = np.flatnonzero(norms > 0)
    pool = usable if usable.size >= k else np.arange(n)
    first = pool[rng.integers(pool.size)]
    chosen = [first]
    best = np.asarray(Xn @ _dense_row(Xn, first)).ravel()
    for _ in range(1, k):
        dist = np.clip(1.0 - best, 0.0, None)
        mask = np.zeros(n, dtype=bool)
        mask[pool] = True
        mask[chosen] = False
        w = np.where(mask, dist, 0.0)
        if w.sum() > 0:
            nxt = int(rng.choice(n, p=w / w.sum()))
        else:
            remaining = np.flatnonzero(mask)
            nxt = int(remaining[rng.integers(remaining.size)])
        chosen.append(nxt)
        best = np.maximum(best, np.asarray(Xn @ _dense_row(Xn, nxt)).ravel())
    C = np.vstack([_dense_row(Xn, c) for c in chosen])
    return C


def _assign(Xn, C, empty=None):
    S = np.asarray(Xn @ C.T)
    if empty is not None and empty.any():
        S[:, empty] = -np.inf
    return np.argmax(S, axis=1).astype(np.int64), S


def _update(Xn, labels, k, d):
    ind = sp.csr_matrix((np.ones(labels.size), (labels, np.arange(labels.size))),
                        shape=(k, labels.size))
    sums = ind @ Xn
    sums = sums.toarray() if sp.issparse(sums) else np.asarray(sums)
    norms = np.linalg.norm(sums, axis=1)
    C = np.divide(sums, norms[:, None], out=np.zeros((k, d)), where=norms[:, None] > 0)
    return C


def partition_instances(X, num_clusters: int, max_iters: int = 25, seed: int = 42) -> ClusterModel:
    """Cluster rows of ``X`` by cosine similarity.

    Empty clusters are repaired by splitting the largest one (its member least
    similar to its centroid seeds the new cluster). The returned assignments
    are always the argmax over the returned centroids.
    """
    n, d = X.shape
    if num_clusters < 1:
        raise DataError("num_clusters must be >= 1")
    if num_clusters > n:
        raise DataError(f"num_clusters={num_clusters} exceeds number of instances {n}")
    Xn, norms = _normalize_rows(X)
    if num_clusters == 1:
        C = _update(Xn, np.zeros(n, dtype=np.int64), 1, d)
        empty = np.zeros(1, dtype=bool)
        obj = float(np.asarray(Xn @ C[0]).sum())
        return ClusterModel(C, np.zeros(n, dtype=np.int64), empty, [obj])

    rng = np.random.default_rng(seed)
    C = _seed_centroids(Xn, norms, num_clusters, rng)
    labels, S = _assign(Xn, C)
    history = []
    for _ in range(max_iters):
        for _repair in range(num_clusters):
            counts = np.bincount(labels, minlength=num_clusters)
            holes = np.flatnonzero(counts == 0)
            if holes.size == 0:
                break
            big = int(np.argmax(counts))
            members = np.flatnonzero(labels == big)
            far = members[np.argmin(S[members, big])]
            labels[far] = holes[0]
        C = _update(Xn, labels, num_clusters, d)
        new_labels, S = _assign(Xn, C)
        history.append(float(S[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    labels, S = _assign(Xn, C)
    empty = np.bincount(labels, minlength=num_clusters) == 0
    if empty.any():
        C[empty] = 0.0
        labels, S = _assign(Xn, C, empty)
    return ClusterModel(C, labels, empty, history)


def assign_clusters(X, model: ClusterModel) -> np.ndarray:
    Xn, _ = _normalize_rows(X)
    labels, _ = _assign(Xn, model.centroids, model.empty)
    return labels


def assign_cluster(x, model: ClusterModel) -> int:
    """Index of the most cosine-similar non-empty centroid (lowest index on ties)."""
    x = x.toarray().ravel() if sp.issparse(x) else np.asarray(x, dtype=np.float64).ravel()
    if not np.any(x):
        first = int(np.flatnonzero(~model.empty)[0])
        warnings.warn(f"zero query vector routed to cluster {first}", RuntimeWarning, stacklevel=2)
        return first
    return int(assign_clusters(x[None, :], model)[0])
