"""End-to-end training for the four algorithm variants."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.sparse as sp

from .cluster import ClusterModel, default_num_clusters, partition_instances
from .data import Dataset, build_label_cooccurrence
from .embed import build_context_pairs, factorize_embeddings, sgns_sgd_embed
from .errors import DataError
from .linalg import gram
from .predict import ClusterData, TrainedModel
from .regress import admm_ridge, joint_sgd_v
from .sppmi import block_sppmi, build_joint_matrix, knn_sparsify, sppmi

log = logging.getLogger(__name__)

ALGORITHMS = ("exmlds1", "exmlds2", "exmlds3", "joint-sgd")


@dataclass
class HyperParams:
    algo: str = "exmlds1"
    d_prime: int = 100
    k_context: int = 10
    k_predict: int = 10
    p: int = 5
    n_neg: int = 15
    n1: int | None = None
    n2: int | None = None
    n3: int | None = None
    mu1: float = 4.0
    mu2: float = 1.0
    mu3: float = 1.0
    shift: float | None = None  # SPPMI shift count k (subtracts log k); defaults to n_neg
    lam: float | None = None
    clusters: int | None = None
    iterations: int = 35
    learning_rate: float = 0.025
    similarity: str = "cosine"
    seed: int = 42
    threads: int = 1
    deterministic: bool = True
    knn_sparsify: bool = False
    zero_diagonal: bool = False
    admm_rho: float = 1.0
    admm_tol: float = 1e-6
    admm_max_iters: int = 200
    neighbor_space: str = "regressed"  # kNN over X V^T ("regressed") or the learned Z ("learned")

    def validate(self):
        if self.algo not in ALGORITHMS:
            raise DataError(f"unknown algorithm {self.algo!r}; expected one of {ALGORITHMS}")
        for name in ("d_prime", "k_context", "k_predict", "p", "n_neg", "iterations"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        if min(self.mu1, self.mu2, self.mu3) < 0:
            raise DataError("mu weights must be nonnegative")
        if self.algo == "exmlds3" and self.mu1 + self.mu2 + self.mu3 <= 0:
            raise DataError("exmlds3 needs at least one positive mu weight")
        if self.similarity not in ("dot", "cosine"):
            raise DataError("similarity must be dot or cosine")
        if self.neighbor_space not in ("regressed", "learned"):
            raise DataError("neighbor_space must be regressed or learned")
        if self.clusters is not None and self.clusters < 1:
            raise DataError("clusters must be >= 1")
        return self

    @property
    def shift_count(self) -> float:
        return float(self.shift if self.shift is not None else self.n_neg)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _prepare_gram(Y, hp):
    M = gram(Y)
    if hp.zero_diagonal:
        M = M - sp.diags(M.diagonal())
        M.eliminate_zeros()
    if hp.knn_sparsify:
        M = knn_sparsify(M, hp.k_context)
    return sp.csr_matrix(M)


def _safe_sppmi(A, count):
    if A.nnz == 0:
        return sp.csr_matrix(A.shape)
    return sppmi(A, count).matrix


def _embed_exmlds1(X, Y, hp, d_prime):
    S = _safe_sppmi(_prepare_gram(Y, hp), hp.shift_count)
    return factorize_embeddings(S, d_prime, seed=hp.seed), None


def _embed_exmlds2(X, Y, hp, d_prime):
    pairs = build_context_pairs(Y, hp.k_context)
    workers = 1 if hp.deterministic else max(1, hp.threads)
    Z = sgns_sgd_embed(pairs, d_prime, n_neg=hp.n_neg, iterations=hp.iterations,
                       learning_rate=hp.learning_rate, seed=hp.seed, workers=workers)
    return Z, None


def _embed_exmlds3(X, Y, C, hp, d_prime):
    n, L = Y.shape
    A = build_joint_matrix(_prepare_gram(Y, hp), Y, C, hp.mu1, hp.mu2, hp.mu3)
    log.info("joint matrix dimension %d (n=%d + L=%d)", A.shape[0], n, L)
    base = hp.shift_count
    counts = [base if v is None else float(v) for v in (hp.n2, hp.n3, hp.n1)]
    if A.nnz == 0:
        S = sp.csr_matrix(A.shape)
    elif counts[0] == counts[1] == counts[2]:
        S = sppmi(A, counts[0]).matrix
    else:
        S = block_sppmi(A, n, *counts).matrix
    Z = factorize_embeddings(S, min(d_prime, A.shape[0]), seed=hp.seed)
    if Z.shape[1] < d_prime:
        Z = np.hstack([Z, np.zeros((Z.shape[0], d_prime - Z.shape[1]))])
    return Z[:n], Z[n:]


def _train_cluster(X, Y, C, hp: HyperParams, members) -> ClusterData:
    Xc = X[members]
    Yc = Y[members]
    m = len(members)
    if m == 0:
        d_prime = hp.d_prime
        return ClusterData(V=np.zeros((d_prime, X.shape[1])), Z=np.zeros((0, d_prime)),
                           members=members, labels=sp.csr_matrix((0, Y.shape[1])),
                           Z2=np.zeros((Y.shape[1], d_prime)) if hp.algo == "exmlds3" else None)
    # SVD rank cannot exceed the cluster size
    d_prime = hp.d_prime if hp.algo in ("exmlds2", "exmlds3") else min(hp.d_prime, m)
    if hp.algo in ("exmlds1", "joint-sgd"):
        Z, Z2 = _embed_exmlds1(Xc, Yc, hp, d_prime)
    elif hp.algo == "exmlds2":
        Z, Z2 = _embed_exmlds2(Xc, Yc, hp, d_prime)
    else:
        Z, Z2 = _embed_exmlds3(Xc, Yc, C, hp, d_prime)
    if Z.shape[1] < hp.d_prime:
        pad = hp.d_prime - Z.shape[1]
        Z = np.hstack([Z, np.zeros((m, pad))])
    reg = admm_ridge(Xc, Z, lam=hp.lam, rho=hp.admm_rho, max_iters=hp.admm_max_iters, tol=hp.admm_tol)
    V = reg.V
    if hp.algo == "joint-sgd":
        pairs = build_context_pairs(Yc, hp.k_context)
        V = joint_sgd_v(Xc, pairs, hp.d_prime, n_neg=hp.n_neg, iterations=hp.iterations,
                        eta=hp.learning_rate, similarity=hp.similarity, seed=hp.seed, init_V=V,
                        report_objective=False).V
    if hp.neighbor_space == "regressed" or hp.algo == "joint-sgd":
        Zn = np.asarray(Xc @ V.T)
    else:
        Zn = Z
    return ClusterData(V=np.ascontiguousarray(V), Z=np.ascontiguousarray(Zn),
                       members=np.asarray(members, dtype=np.int64), labels=sp.csr_matrix(Yc), Z2=Z2)


def train_model(train: Dataset, hp: HyperParams, cooccurrence=None) -> TrainedModel:
    """Train a model on ``train``.

    ``cooccurrence`` is the label-label matrix used by exmlds3; it defaults to
    ``Y^T Y`` of the training labels.
    """
    hp.validate()
    if train.n == 0:
        raise DataError("training set is empty")
    X = sp.csr_matrix(train.features, dtype=np.float64)
    Y = sp.csr_matrix(train.labels, dtype=np.float64)
    C = None
    if hp.algo == "exmlds3":
        C = build_label_cooccurrence(Y) if cooccurrence is None else sp.csr_matrix(cooccurrence)
        if C.shape != (train.L, train.L):
            raise DataError(f"co-occurrence matrix has shape {C.shape}, expected {(train.L, train.L)}")
    num_clusters = hp.clusters if hp.clusters is not None else default_num_clusters(train.n)
    t0 = time.perf_counter()
    clusters: ClusterModel = partition_instances(X, num_clusters, seed=hp.seed)
    groups = [clusters.members(t) for t in range(clusters.num_clusters)]
    workers = 1 if hp.deterministic else max(1, hp.threads)
    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda g: _train_cluster(X, Y, C, hp, g), groups))
    else:
        parts = [_train_cluster(X, Y, C, hp, g) for g in groups]
    log.info("trained %s on %d instances, %d clusters in %.2fs", hp.algo, train.n,
             clusters.num_clusters, time.perf_counter() - t0)
    return TrainedModel(clusters=clusters, parts=parts, params=hp.to_dict(),
                        num_features=train.d, num_labels=train.L)
