"""Command-line surface: train, eval, similar, gradcheck, augment.

Exit codes: 0 success, 1 usage error, 2 data error (the module error code
is printed verbatim on stderr). Every run writes a JSON manifest recording
the resolved configuration, SHA-256 digests of the input files, the output
paths, the seed and the wall-clock time, so results can be traced back to
exact inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time

from . import fileio
from .embeddings import load_embedding_file
from .errors import CodedError
from .network import IDENTITY, load_model, save_model
from .model import evaluate, nearest_classes
from .predicates import load_predicate_file, format_predicate_csv, merge_predicates
from .training import (
    FULL_BATCH,
    TrainingConfig,
    TrainingData,
    cross_validate,
    finite_diff_check,
    train,
)

GRADCHECK_TOLERANCE = 1e-4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}")


def _batch_size(text: str):
    if text == FULL_BATCH:
        return FULL_BATCH
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'full', got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("batch size must be positive")
    return value


def _build_parser() -> _Parser:
    parser = _Parser(prog="namezsl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit the transformation network")
    p_train.add_argument("--mode", required=True, choices=("ibt", "pbt"))
    p_train.add_argument("--embeddings", required=True)
    p_train.add_argument("--predicates")
    p_train.add_argument("--profiles")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--hidden", type=int, default=64)
    p_train.add_argument("--outdim", type=int, default=32)
    p_train.add_argument("--iters", type=int, default=1000)
    p_train.add_argument("--lr", type=float, default=1e-4)
    p_train.add_argument("--batch", type=_batch_size, default=64)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p_train.add_argument("--cv", action="store_true")
    p_train.add_argument("--hidden-grid", type=_int_list, default=())
    p_train.add_argument("--outdim-grid", type=_int_list, default=())
    p_train.add_argument("--checkpoints", type=_int_list, default=())
    p_train.add_argument("--const-margin", type=float, default=None)
    p_train.add_argument("--manifest")

    p_eval = sub.add_parser("eval", help="evaluate a model on a labeled test set")
    p_eval.add_argument("--model", required=True, help="model file or the literal 'identity'")
    p_eval.add_argument("--embeddings", required=True)
    p_eval.add_argument("--profiles", required=True)
    p_eval.add_argument("--classes", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--manifest")

    p_sim = sub.add_parser("similar", help="rank pool classes by similarity to a query name")
    p_sim.add_argument("--model", required=True, help="model file or the literal 'identity'")
    p_sim.add_argument("--embeddings", required=True)
    p_sim.add_argument("--query", required=True)
    p_sim.add_argument("--pool", required=True)
    p_sim.add_argument("--k", type=int, required=True)
    p_sim.add_argument("--manifest")

    p_grad = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p_grad.add_argument("--mode", required=True, choices=("ibt", "pbt"))
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--manifest")

    p_aug = sub.add_parser("augment", help="append text-only classes to a predicate matrix")
    p_aug.add_argument("--base", required=True)
    p_aug.add_argument("--extra", required=True)
    p_aug.add_argument("--out", required=True)
    p_aug.add_argument("--manifest")
    return parser


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path, command, argv, config, inputs, outputs, seed, started):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "wall_clock_seconds": time.perf_counter() - started,
    }
    fileio.atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_transform(spec_text: str):
    if spec_text == "identity":
        return IDENTITY
    params, _ = load_model(spec_text)
    return params


def _cmd_train(args, argv, started) -> int:
    if args.mode == "pbt" and not args.predicates:
        raise _UsageError("--mode pbt requires --predicates")
    if args.const_margin is not None and args.predicates:
        raise _UsageError("--const-margin cannot be combined with --predicates")
    table = load_embedding_file(args.embeddings)
    predicates = load_predicate_file(args.predicates) if args.predicates else None
    attr_names = predicates.attribute_names if predicates else None
    profiles = None
    if args.profiles:
        profiles, attr_names = fileio.load_profile_file(args.profiles, attr_names)
    config = TrainingConfig(
        mode=args.mode,
        iterations=args.iters,
        h1=args.hidden,
        d=args.outdim,
        lr=args.lr,
        batch_size=args.batch,
        lam=args.lam,
        seed=args.seed,
        hidden_grid=args.hidden_grid,
        outdim_grid=args.outdim_grid,
        iteration_checkpoints=args.checkpoints,
        const_margin=args.const_margin if args.const_margin is not None else 0.1,
    )
    data = TrainingData(table, tuple(attr_names or ()), predicates=predicates, profiles=profiles)
    if args.cv:
        cv = cross_validate(config, data)
        config = dataclasses.replace(config, h1=cv.h1, d=cv.d, iterations=cv.iterations)
        history = cv.history
        params, _ = train(config, data)
    else:
        params, history = train(config, data)
    meta = {
        "mode": config.mode,
        "seed": config.seed,
        "iterations": config.iterations,
        "embedding_dim": table.dim,
    }
    save_model(params, meta, args.out)
    history_path = args.out + ".history.csv"
    fileio.write_history(history, history_path)
    inputs = {"embeddings": args.embeddings}
    if args.predicates:
        inputs["predicates"] = args.predicates
    if args.profiles:
        inputs["profiles"] = args.profiles
    _write_manifest(
        args.manifest or args.out + ".manifest.json",
        "train", argv, dataclasses.asdict(config), inputs,
        [args.out, history_path], config.seed, started,
    )
    return 0


def _cmd_eval(args, argv, started) -> int:
    transform = _load_transform(args.model)
    table = load_embedding_file(args.embeddings)
    profiles, attr_names = fileio.load_profile_file(args.profiles)
    candidates = fileio.load_class_list(args.classes)
    report = evaluate(transform, table, attr_names, profiles, candidates)
    fileio.write_report(report, args.report)
    inputs = {"embeddings": args.embeddings, "profiles": args.profiles, "classes": args.classes}
    if args.model != "identity":
        inputs["model"] = args.model
    _write_manifest(
        args.manifest or args.report + ".manifest.json",
        "eval", argv, {"model": args.model}, inputs, [args.report], None, started,
    )
    return 0


def _cmd_similar(args, argv, started) -> int:
    transform = _load_transform(args.model)
    table = load_embedding_file(args.embeddings)
    pool = fileio.load_class_list(args.pool)
    ranked = nearest_classes(transform, table, args.query, pool, args.k)
    for rank, (name, sim) in enumerate(ranked, start=1):
        print(f"{rank}\t{name}\t{sim:.6f}")
    inputs = {"embeddings": args.embeddings, "pool": args.pool}
    if args.model != "identity":
        inputs["model"] = args.model
    _write_manifest(
        args.manifest or "similar.manifest.json",
        "similar", argv, {"model": args.model, "query": args.query, "k": args.k},
        inputs, [], None, started,
    )
    return 0


def _cmd_gradcheck(args, argv, started) -> int:
    error = finite_diff_check(args.seed, args.mode)
    print(f"max relative gradient error: {error:.6e}")
    _write_manifest(
        args.manifest or "gradcheck.manifest.json",
        "gradcheck", argv, {"mode": args.mode, "tolerance": GRADCHECK_TOLERANCE},
        {}, [], args.seed, started,
    )
    return 0 if error < GRADCHECK_TOLERANCE else 2


def _cmd_augment(args, argv, started) -> int:
    base = load_predicate_file(args.base)
    extra = load_predicate_file(args.extra)
    merged = merge_predicates(base, extra)
    fileio.atomic_write_text(args.out, format_predicate_csv(merged))
    _write_manifest(
        args.manifest or args.out + ".manifest.json",
        "augment", argv, {}, {"base": args.base, "extra": args.extra}, [args.out], None, started,
    )
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "similar": _cmd_similar,
    "gradcheck": _cmd_gradcheck,
    "augment": _cmd_augment,
}


def run_command(argv: list[str]) -> int:
    started = time.perf_counter()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args, argv, started)
    except (_UsageError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except CodedError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"E_IO: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
