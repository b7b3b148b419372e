"""Named desk-scale reproduction runs used by ``exmlds repro``."""
from __future__ import annotations

import glob
import logging
import os
import time
from dataclasses import replace

from .data import Dataset, build_label_cooccurrence, load_dataset, load_split_dataset, mask_labels
from .errors import DataError
from .pipeline import HyperParams, train_model
from .predict import evaluate, score_matrix

log = logging.getLogger(__name__)

# d'=100, 10 neighbours for context and prediction, 15 negatives, 35 iterations
SMALL_DATASET_PARAMS = HyperParams(d_prime=100, k_context=10, k_predict=10, n_neg=15, iterations=35)


def load_train_test(data_dir, split: int = 0):
    """Find a train/test pair in ``data_dir``.

    Accepts ``train.txt``/``test.txt`` (or ``*_train.txt``/``*_test.txt``),
    or a combined ``*_data.txt`` with ``*_trSplit.txt``/``*_tstSplit.txt``.
    """
    def one(pattern):
        hits = sorted(glob.glob(os.path.join(data_dir, pattern)))
        return hits[0] if hits else None

    train = one("train.txt") or one("*_train.txt") or one("*train*.txt")
    test = one("test.txt") or one("*_test.txt") or one("*test*.txt")
    if train and test and "Split" not in train:
        return load_dataset(train), load_dataset(test)
    data = one("*_data.txt")
    tr, ts = one("*trSplit*.txt"), one("*tstSplit*.txt")
    if data and tr and ts:
        return load_split_dataset(data, tr, split), load_split_dataset(data, ts, split)
    raise DataError(f"no train/test files found in {data_dir}")


def _run(train: Dataset, test: Dataset, hp: HyperParams, cooccurrence=None, joint=None):
    t0 = time.perf_counter()
    model = train_model(train, hp, cooccurrence=cooccurrence)
    elapsed = time.perf_counter() - t0
    scores = score_matrix(test.features, model, hp.k_predict, joint=joint)
    metrics = evaluate(scores, test.labels)
    return {"train_seconds": elapsed, **metrics}


def exmlds1_experiment(data_dir, hp: HyperParams | None = None):
    train, test = load_train_test(data_dir)
    hp = replace(hp or SMALL_DATASET_PARAMS, algo="exmlds1")
    return {"exmlds1": _run(train, test, hp)}


def missing_label_experiment(data_dir, fraction=0.8, seed=42, hp: HyperParams | None = None):
    """Hide ``fraction`` of training labels; exmlds3 (C from full labels) vs exmlds1."""
    train, test = load_train_test(data_dir)
    base = hp or SMALL_DATASET_PARAMS
    C = build_label_cooccurrence(train.labels)
    masked = train.with_labels(mask_labels(train.labels, fraction, seed).masked)
    return {
        "exmlds3": _run(masked, test, replace(base, algo="exmlds3"), cooccurrence=C, joint=True),
        "exmlds1": _run(masked, test, replace(base, algo="exmlds1")),
    }


EXPERIMENTS = {
    "bibtex-exmlds1": exmlds1_experiment,
    "mediamill-exmlds1": exmlds1_experiment,
    "bibtex-missing80": missing_label_experiment,
    "eurlex-missing80": missing_label_experiment,
    "rcv1v2-missing80": missing_label_experiment,
}


def run_experiment(name: str, data_dir, hp: HyperParams | None = None):
    if name not in EXPERIMENTS:
        raise DataError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[name](data_dir, hp=hp)
