"""Label scoring by kNN decompression, joint-embedding rescoring, ranking metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cluster import ClusterModel, assign_clusters
from .errors import DataError
from .linalg import cosine_knn, cosine_knn_batch

__all__ = [
    "ClusterData",
    "TrainedModel",
    "knn_score",
    "knn_scores",
    "rank_labels",
    "combine_scores",
    "score_matrix",
    "predict_top_p",
    "predict_joint",
    "precision_at_k",
    "ndcg_at_k",
    "evaluate",
    "format_report",
]


@dataclass
class ClusterData:
    V: np.ndarray  # (d', d)
    Z: np.ndarray  # (m, d') embeddings of member instances
    members: np.ndarray  # (m,) training row indices
    labels: sp.csr_matrix  # (m, L) member label vectors
    Z2: np.ndarray | None = None  # (L, d') label embeddings, joint models only

    def __post_init__(self):
        m = len(self.members)
        if self.Z.shape[0] != m or self.labels.shape[0] != m:
            raise DataError("cluster arrays disagree on member count")
        if self.V.shape[0] != self.Z.shape[1]:
            raise DataError("regressor output dimension differs from embedding dimension")
        if self.Z2 is not None and self.Z2.shape != (self.labels.shape[1], self.V.shape[0]):
            raise DataError("label embeddings have the wrong shape")


@dataclass
class TrainedModel:
    clusters: ClusterModel
    parts: list  # one ClusterData per cluster (empty clusters hold zero members)
    params: dict = field(default_factory=dict)
    num_features: int = 0
    num_labels: int = 0

    @property
    def joint(self) -> bool:
        return any(p.Z2 is not None for p in self.parts)

    def __post_init__(self):
        if len(self.parts) != self.clusters.num_clusters:
            raise DataError("one ClusterData per cluster required")
        kinds = {p.Z2 is not None for p in self.parts if len(p.members)}
        if len(kinds) > 1:
            raise DataError("label embeddings must be present for all clusters or none")


def knn_score(z, cluster: ClusterData, k: int) -> np.ndarray:
    """Mean label vector of the ``k`` cosine-nearest member embeddings."""
    if len(cluster.members) == 0:
        raise DataError("cannot score against an empty cluster")
    nbrs = cosine_knn(z, cluster.Z, k)
    idx = np.array([i for i, _ in nbrs], dtype=np.int64)
    return np.asarray(cluster.labels[idx].mean(axis=0)).ravel()


def knn_scores(Zq, cluster: ClusterData, k: int) -> np.ndarray:
    """Batch :func:`knn_score`; returns a dense ``(m, L)`` array."""
    idx, _ = cosine_knn_batch(Zq, cluster.Z, k)
    m, kk = idx.shape
    W = sp.csr_matrix((np.full(m * kk, 1.0 / kk), idx.ravel(), np.arange(0, m * kk + 1, kk)),
                      shape=(m, len(cluster.members)))
    return np.asarray((W @ cluster.labels).toarray())


def rank_labels(scores, p: int) -> np.ndarray:
    """Top-``p`` label indices by descending score, ties by lower index."""
    scores = np.asarray(scores)
    p = min(p, scores.shape[-1])
    order = np.lexsort((np.arange(scores.shape[-1]), -scores))
    return order[:p]


def combine_scores(s1, s2) -> np.ndarray:
    """``s1/|s1| + s2/|s2|`` row-wise; a zero-norm part contributes nothing."""
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    n1 = np.linalg.norm(s1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(s2, axis=-1, keepdims=True)
    a = np.divide(s1, n1, out=np.zeros_like(s1), where=n1 > 0)
    b = np.divide(s2, n2, out=np.zeros_like(s2), where=n2 > 0)
    return a + b


def _queries(X, model):
    X = sp.csr_matrix(X, dtype=np.float64)
    if X.shape[1] != model.num_features:
        raise DataError(f"query has {X.shape[1]} features, model expects {model.num_features}")
    return X


def score_matrix(X, model: TrainedModel, k: int, joint=None) -> np.ndarray:
    """Dense ``(m, L)`` label scores for every query row of ``X``.

    ``joint=None`` uses label embeddings whenever the model has them.
    """
    X = _queries(X, model)
    use_joint = model.joint if joint is None else joint
    if use_joint and not model.joint:
        raise DataError("model has no label embeddings")
    route = assign_clusters(X, model.clusters)
    out = np.zeros((X.shape[0], model.num_labels))
    for t, part in enumerate(model.parts):
        rows = np.flatnonzero(route == t)
        if rows.size == 0:
            continue
        Zq = np.asarray(X[rows] @ part.V.T)
        s = knn_scores(Zq, part, k)
        if use_joint:
            s = combine_scores(s, Zq @ part.Z2.T)
        out[rows] = s
    return out


def predict_top_p(x, model: TrainedModel, k: int, p: int) -> np.ndarray:
    if p < 1:
        raise DataError("p must be >= 1")
    X = sp.csr_matrix(np.atleast_2d(x.toarray() if sp.issparse(x) else x))
    return rank_labels(score_matrix(X, model, k, joint=False)[0], p)


def predict_joint(x, model: TrainedModel, k: int, p: int) -> np.ndarray:
    if p < 1:
        raise DataError("p must be >= 1")
    if not model.joint:
        raise DataError("predict_joint needs a model with label embeddings")
    X = sp.csr_matrix(np.atleast_2d(x.toarray() if sp.issparse(x) else x))
    return rank_labels(score_matrix(X, model, k, joint=True)[0], p)


def precision_at_k(ranked, truth, k: int) -> float:
    if k < 1:
        raise DataError("k must be >= 1")
    truth = set(int(t) for t in truth)
    return sum(1 for r in list(ranked)[:k] if int(r) in truth) / k


def ndcg_at_k(ranked, truth, k: int) -> float:
    if k < 1:
        raise DataError("k must be >= 1")
    truth = set(int(t) for t in truth)
    if not truth:
        return 0.0
    dcg = sum(1.0 / math.log2(r + 2) for r, lab in enumerate(list(ranked)[:k]) if int(lab) in truth)
    ideal = sum(1.0 / math.log2(r + 2) for r in range(min(k, len(truth))))
    return dcg / ideal


def evaluate(scores, truth_labels, ks=(1, 3, 5)) -> dict:
    """Average P@k and nDCG@k (as fractions) over all rows, empty truths counting as 0."""
    Y = sp.csr_matrix(truth_labels)
    if Y.shape[0] == 0:
        raise DataError("cannot evaluate on an empty test set")
    kmax = max(ks)
    totals = {f"P@{k}": 0.0 for k in ks} | {f"nDCG@{k}": 0.0 for k in ks}
    for i in range(Y.shape[0]):
        ranked = rank_labels(scores[i], kmax)
        truth = Y.indices[Y.indptr[i]:Y.indptr[i + 1]]
        for k in ks:
            totals[f"P@{k}"] += precision_at_k(ranked, truth, k)
            totals[f"nDCG@{k}"] += ndcg_at_k(ranked, truth, k)
    return {key: val / Y.shape[0] for key, val in totals.items()}


def format_report(metrics: dict, ks=(1, 3, 5)) -> str:
    lines = ["metric    value"]
    for name in ("P", "nDCG"):
        for k in ks:
            key = f"{name}@{k}"
            lines.append(f"{key:<9} {100.0 * metrics[key]:.2f}")
    return "\n".join(lines)
