"""Command-line driver: ``exmlds {train,predict,eval,mask,repro}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace

import numpy as np

from .container import load_model, save_model
from .data import Dataset, build_label_cooccurrence, load_dataset, mask_labels, save_dataset, write_mask_manifest
from .errors import DataError, NumericalError
from .experiments import EXPERIMENTS, SMALL_DATASET_PARAMS, run_experiment
from .pipeline import ALGORITHMS, HyperParams, train_model
from .predict import evaluate, format_report, rank_labels, score_matrix

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("exmlds")


def _add_hyperparams(p):
    d = HyperParams()
    p.add_argument("--algo", choices=ALGORITHMS, default=d.algo)
    p.add_argument("--dim", type=int, default=d.d_prime, help="embedding dimension d'")
    p.add_argument("--knn-context", type=int, default=d.k_context)
    p.add_argument("--knn-predict", type=int, default=d.k_predict)
    p.add_argument("--neg", type=int, default=d.n_neg, help="negative samples per positive")
    p.add_argument("--n1", type=int, default=None, help="label-label negatives (exmlds3)")
    p.add_argument("--n2", type=int, default=None, help="instance-instance negatives (exmlds3)")
    p.add_argument("--n3", type=int, default=None, help="instance-label negatives (exmlds3)")
    p.add_argument("--shift", type=float, default=None, help="SPPMI shift count k (default: --neg)")
    p.add_argument("--mu1", type=float, default=d.mu1)
    p.add_argument("--mu2", type=float, default=d.mu2)
    p.add_argument("--mu3", type=float, default=d.mu3)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--iters", type=int, default=d.iterations)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--similarity", choices=("dot", "cosine"), default=d.similarity)
    p.add_argument("--neighbor-space", choices=("regressed", "learned"), default=d.neighbor_space)
    p.add_argument("--knn-sparsify", action="store_true")
    p.add_argument("--zero-diagonal", action="store_true")
    _add_runtime(p)


def _add_runtime(p):
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--deterministic", action="store_true", help="force single-threaded modes")


def _hyperparams(args) -> HyperParams:
    return HyperParams(
        algo=args.algo, d_prime=args.dim, k_context=args.knn_context, k_predict=args.knn_predict,
        n_neg=args.neg, n1=args.n1, n2=args.n2, n3=args.n3, shift=args.shift,
        mu1=args.mu1, mu2=args.mu2, mu3=args.mu3, lam=args.lam, clusters=args.clusters,
        iterations=args.iters, learning_rate=args.lr, similarity=args.similarity, seed=args.seed,
        threads=args.threads, deterministic=args.deterministic or args.threads <= 1,
        knn_sparsify=args.knn_sparsify, zero_diagonal=args.zero_diagonal,
        neighbor_space=args.neighbor_space,
    ).validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exmlds", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="training file")
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--cooc", help="file whose labels give the label co-occurrence C (exmlds3)")
    _add_hyperparams(p)

    p = sub.add_parser("predict", help="write top-p labels per test point")
    p.add_argument("--model", required=True)
    p.add_argument("--test", "--data", dest="test", required=True)
    p.add_argument("--topk", type=int, default=5, help="labels returned per point (p)")
    p.add_argument("--knn-predict", type=int, default=None)
    p.add_argument("--no-joint", action="store_true", help="ignore label embeddings")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("eval", help="report P@k and nDCG@k")
    p.add_argument("--model", required=True)
    p.add_argument("--test", "--data", dest="test", required=True)
    p.add_argument("--knn-predict", type=int, default=None)
    p.add_argument("--no-joint", action="store_true")
    p.add_argument("--dump-scores", help="TSV of (point, label, score) for nonzero scores")

    p = sub.add_parser("mask", help="hide a fraction of training labels")
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="masked dataset file")
    p.add_argument("--manifest", help="hidden-entry manifest (default: OUT.manifest)")

    p = sub.add_parser("repro", help="run a named reproduction experiment")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    p.add_argument("--data-dir", required=True)
    p.add_argument("--dim", type=int, default=SMALL_DATASET_PARAMS.d_prime)
    p.add_argument("--knn-predict", type=int, default=SMALL_DATASET_PARAMS.k_predict)
    p.add_argument("--mu1", type=float, default=SMALL_DATASET_PARAMS.mu1)
    _add_runtime(p)
    return parser


def cmd_train(args) -> int:
    hp = _hyperparams(args)
    train = load_dataset(args.data)
    C = build_label_cooccurrence(load_dataset(args.cooc).labels) if args.cooc else None
    t0 = time.perf_counter()
    model = train_model(train, hp, cooccurrence=C)
    elapsed = time.perf_counter() - t0
    save_model(model, args.model)
    print(f"trained {hp.algo} on {train.n} instances ({model.clusters.num_clusters} clusters) "
          f"in {elapsed:.2f} s")
    if hp.algo == "exmlds3":
        print(f"joint matrix dimension: {train.n} + {train.L} = {train.n + train.L}")
    # wall-clock facts live in a sidecar so model bytes stay reproducible
    with open(f"{args.model}.log", "w", encoding="utf-8") as fh:
        json.dump({"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"), "train_seconds": elapsed,
                   "data": args.data, "params": hp.to_dict()}, fh, indent=1)
    return EXIT_OK


def _load_test(path, model):
    test = load_dataset(path)
    if test.n == 0:
        raise DataError(f"{path}: test set is empty")
    if test.d != model.num_features or test.L != model.num_labels:
        raise DataError(f"{path}: dimensions (d={test.d}, L={test.L}) do not match the model "
                        f"(d={model.num_features}, L={model.num_labels})")
    return test


def _scores(args, model, test):
    k = args.knn_predict or model.params.get("k_predict", 10)
    joint = False if args.no_joint else None
    return score_matrix(test.features, model, k, joint=joint)


def cmd_predict(args) -> int:
    model = load_model(args.model)
    test = _load_test(args.test, model)
    p = args.topk
    if p < 1:
        raise DataError("--topk must be >= 1")
    if p > model.num_labels:
        print(f"warning: --topk {p} exceeds L={model.num_labels}; clipping", file=sys.stderr)
        p = model.num_labels
    scores = _scores(args, model, test)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for i in range(test.n):
            ranked = rank_labels(scores[i], p)
            out.write(f"{i}: " + " ".join(f"{int(j)}:{float(scores[i, j])!r}" for j in ranked) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    test = _load_test(args.test, model)
    scores = _scores(args, model, test)
    print(format_report(evaluate(scores, test.labels)))
    if args.dump_scores:
        with open(args.dump_scores, "w", encoding="utf-8") as fh:
            rows, cols = np.nonzero(scores)
            for i, j in zip(rows, cols):
                fh.write(f"{i}\t{j}\t{float(scores[i, j])!r}\n")
    return EXIT_OK


def cmd_mask(args) -> int:
    ds = load_dataset(args.data)
    result = mask_labels(ds.labels, args.fraction, args.seed)
    save_dataset(Dataset(ds.features, result.masked), args.out)
    manifest = args.manifest or f"{args.out}.manifest"
    write_mask_manifest(result, manifest)
    print(f"hid {len(result.hidden)} of {result.original_nnz} label entries; "
          f"masked nnz = {result.masked.nnz}")
    return EXIT_OK


def cmd_repro(args) -> int:
    hp = replace(SMALL_DATASET_PARAMS, d_prime=args.dim, k_predict=args.knn_predict, mu1=args.mu1,
                 seed=args.seed, threads=args.threads,
                 deterministic=args.deterministic or args.threads <= 1)
    results = run_experiment(args.name, args.data_dir, hp=hp)
    for variant, metrics in results.items():
        print(f"== {args.name} / {variant} (train {metrics['train_seconds']:.1f} s)")
        print(format_report(metrics))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "mask": cmd_mask,
            "repro": cmd_repro}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"exmlds {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"exmlds {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
