"""Command-line entry point: ``rlrtree <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 invalid data or failed validation,
3 internal error (including disagreeing query results across indices).
Every command that writes artifacts also writes ``<output>.manifest.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import RANKING_VARIANTS, ResultMismatch, knn_groups, rank_accesses, run_knn_bench, run_range_bench
from .dataset import DataError, read_dataset, write_dataset
from .datagen import (
    DISTRIBUTIONS,
    DataGenConfig,
    gen_dataset,
    gen_knn_workload,
    gen_test_queries,
    ingest_points_csv,
    read_knn,
    read_queries,
    write_knn,
    write_queries,
)
from .dqn import ModelError, load_model, save_model
from .policy import NAMED, policy_from_name
from .rtree import RTree, SnapshotError, build_tree
from .trainer import JsonlLogger, TrainConfig, build_rlr_tree, train_choose_subtree, train_combined, train_split

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("rlrtree")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get("RLR_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"RLR_SEED must be an integer, got {raw!r}") from None


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _existing(path: str) -> str:
    if not Path(path).is_file():
        raise UsageError(f"input file not found: {path}")
    return path


def write_manifest(primary_output, args, config: dict, inputs, outputs, started: float) -> Path:
    path = Path(f"{primary_output}.manifest.json")
    doc = {
        "tool": "rlrtree",
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.time() - started, 3),
        "python": platform.python_version(),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# -- subcommands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    started = time.time()
    try:
        cfg = DataGenConfig(args.dist, args.n, args.dims, args.side, args.skew_c, args.mu, args.sigma, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = gen_dataset(cfg)
    write_dataset(args.out, data, header=args.header)
    write_manifest(args.out, args, vars(cfg), [], [args.out], started)
    return EXIT_OK


def cmd_ingest(args) -> int:
    started = time.time()
    data = ingest_points_csv(_existing(args.points))
    write_dataset(args.out, data, header=args.header)
    write_manifest(args.out, args, {"scale": data.scale}, [args.points], [args.out], started)
    print(json.dumps({"objects": len(data), "scale": data.scale}))
    return EXIT_OK


def cmd_gen_queries(args) -> int:
    started = time.time()
    if args.size <= 0:
        raise UsageError("--size must be positive")
    qlo, qhi = gen_test_queries(args.count, args.size, args.dims, args.seed)
    write_queries(args.out, qlo, qhi)
    write_manifest(args.out, args, {"count": args.count, "size": args.size, "dims": args.dims}, [], [args.out], started)
    return EXIT_OK


def cmd_gen_knn(args) -> int:
    started = time.time()
    if any(k < 1 for k in args.k):
        raise UsageError("K values must be positive")
    pts = gen_knn_workload(args.count, args.dims, args.seed)
    write_knn(args.out, pts, args.k)
    write_manifest(args.out, args, {"count": args.count, "dims": args.dims, "k": args.k}, [], [args.out], started)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            k=args.k,
            p=args.p,
            epochs_cs=args.epochs_cs,
            epochs_split=args.epochs_split,
            parts=args.parts,
            M=args.M,
            m=args.m,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _model_paths(out_model: str, agent: str) -> dict[str, Path]:
    out = Path(out_model)
    if agent == "cs":
        return {"choosesubtree": out}
    if agent == "split":
        return {"split": out}
    stem = out.name[: -len(out.suffix)] if out.suffix else out.name
    return {"choosesubtree": out.with_name(f"{stem}.cs.json"), "split": out.with_name(f"{stem}.split.json")}


def cmd_train(args) -> int:
    started = time.time()
    cfg = _train_config(args)
    data = read_dataset(_existing(args.data))
    need = cfg.p if args.agent == "cs" else cfg.parts if args.agent == "split" else max(cfg.p, cfg.parts)
    if len(data) < need:
        raise DataError(f"{args.data}: {len(data)} objects are not enough to train (need at least {need})")
    paths = _model_paths(args.out_model, args.agent)
    log_path = Path(args.log) if args.log else Path(f"{args.out_model}.log.jsonl")
    with JsonlLogger(log_path) as logger:
        if args.agent == "cs":
            nets = {"choosesubtree": train_choose_subtree(data, cfg, logger=logger)}
        elif args.agent == "split":
            nets = {"split": train_split(data, cfg, logger=logger)}
        else:
            cs, sp = train_combined(data, cfg, logger=logger)
            nets = {"choosesubtree": cs, "split": sp}
    hyper = cfg.to_dict()
    for agent, net in nets.items():
        save_model(paths[agent], net, {"agent": agent, "dims": data.dims, "hyperparameters": hyper, "seed": cfg.seed})
    outputs = [*paths.values(), log_path]
    write_manifest(args.out_model, args, hyper, [args.data], outputs, started)
    return EXIT_OK


def _load_nets(args, dims: int):
    nets = {}
    for flag, agent in (("model_cs", "choosesubtree"), ("model_split", "split")):
        path = getattr(args, flag)
        if path is None:
            nets[agent] = None
            continue
        net, meta = load_model(_existing(path), agent=agent, k=args.k)
        if meta.get("dims") not in (None, dims):
            raise ModelError(f"{path}: model trained on {meta.get('dims')}-d data, dataset is {dims}-d")
        nets[agent] = net
    return nets["choosesubtree"], nets["split"]


def cmd_build(args) -> int:
    started = time.time()
    data = read_dataset(_existing(args.data))
    inputs = [args.data]
    if args.policy == "rlr":
        if args.model_cs is None and args.model_split is None:
            raise UsageError("--policy rlr needs --model-cs and/or --model-split")
        cs, sp = _load_nets(args, data.dims)
        inputs += [p for p in (args.model_cs, args.model_split) if p]
        cfg = TrainConfig(k=args.k, M=args.M, m=args.m)
        tree = build_rlr_tree(data, cs, sp, cfg)
    else:
        if args.model_cs or args.model_split:
            raise UsageError(f"--policy {args.policy} takes no models")
        try:
            tree = build_tree(data, policy_from_name(args.policy), args.M, args.m)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    problems = tree.validate()
    if problems:
        for p in problems[:20]:
            print(f"validate: {p}", file=sys.stderr)
        return EXIT_DATA
    tree.save(args.out_index)
    config = {"policy": args.policy, "M": args.M, "m": args.m, "k": args.k}
    write_manifest(args.out_index, args, config, inputs, [args.out_index], started)
    print(json.dumps({"objects": len(tree), "nodes": tree.node_count, "height": tree.height}))
    return EXIT_OK


def _parse_indices(specs) -> dict[str, RTree]:
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        if name in out:
            raise UsageError(f"duplicate index name {name!r}")
        out[name] = RTree.load(_existing(path))
    return out


def cmd_bench(args) -> int:
    started = time.time()
    if not args.queries and not args.knn:
        raise UsageError("give --queries and/or --knn")
    indices = _parse_indices(args.indices)
    baseline = args.baseline or next(iter(indices))
    if baseline not in indices:
        raise UsageError(f"baseline {baseline!r} is not among the indices {sorted(indices)}")
    for path in [*(args.queries or []), *([args.knn] if args.knn else [])]:
        _existing(path)
    summary = {}
    outputs = []
    inputs = [*(args.queries or []), *([args.knn] if args.knn else [])]
    meta = {"inputs": {p: _sha256(p) for p in inputs}}
    if args.queries:
        sets = {Path(p).stem: read_queries(p) for p in args.queries}
        rep = run_range_bench(indices, sets, baseline, threads=args.threads, metadata=meta)
        rep.write_csv(f"{args.report}.range.csv")
        rep.write_json(f"{args.report}.range.json")
        outputs += [f"{args.report}.range.csv", f"{args.report}.range.json"]
        summary["range"] = rep.summary
    if args.knn:
        pts, ks = read_knn(args.knn)
        rep = run_knn_bench(indices, knn_groups(pts, ks), baseline, threads=args.threads, metadata=meta)
        rep.write_csv(f"{args.report}.knn.csv")
        rep.write_json(f"{args.report}.knn.json")
        outputs += [f"{args.report}.knn.csv", f"{args.report}.knn.json"]
        summary["knn"] = rep.summary
    write_manifest(args.report, args, {"baseline": baseline, "threads": args.threads}, inputs, outputs, started)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_rank(args) -> int:
    started = time.time()
    data = read_dataset(_existing(args.data))
    qlo, qhi = read_queries(_existing(args.queries))
    trees = {name: build_tree(data, pol, args.M, args.m) for name, pol in RANKING_VARIANTS.items()}
    res = rank_accesses({name: t.count_accesses(qlo, qhi) for name, t in trees.items()})
    doc = {"queries": res.queries, "best_fraction": res.best_fraction, "single_winner": res.single_winner}
    text = json.dumps(doc, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
        write_manifest(args.report, args, {"M": args.M, "m": args.m}, [args.data, args.queries], [args.report], started)
    print(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    if bool(args.model) == bool(args.index):
        raise UsageError("give exactly one of --model or --index")
    if args.model:
        net, meta = load_model(_existing(args.model))
        doc = {**meta, "parameters": int(sum(p.size for p in net.params())), "finite": net.is_finite()}
    else:
        tree = RTree.load(_existing(args.index))
        problems = tree.validate()
        levels = np.bincount(tree._lvl[: tree.node_count], minlength=tree.height)
        doc = {
            "objects": len(tree),
            "nodes": tree.node_count,
            "height": tree.height,
            "dims": tree.dims,
            "M": tree.M,
            "m": tree.m,
            "nodes_per_level": levels.tolist(),
            "valid": not problems,
            "problems": problems[:20],
        }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _add_tree_args(p) -> None:
    p.add_argument("--M", type=int, default=50, help="maximum entries per node")
    p.add_argument("--m", type=int, default=20, help="minimum entries per node")


def build_parser(seed_default: int) -> argparse.ArgumentParser:
    parser = _Parser(prog="rlrtree", description="R-Tree with learned ChooseSubtree and Split policies.")
    parser.add_argument("--version", action="version", version=f"rlrtree {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--dist", choices=DISTRIBUTIONS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--side", type=float, default=1e-4, help="object side length")
    p.add_argument("--skew-c", type=float, default=9.0)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ingest", help="rescale a point CSV (id, x_1..x_d) into a dataset")
    p.add_argument("--points", required=True)
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-queries", help="generate range query windows")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--size", type=float, required=True, help="window area as a fraction of the unit region")
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_queries)

    p = sub.add_parser("gen-knn", help="generate a KNN workload")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--k", type=int, nargs="+", default=[1])
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_knn)

    p = sub.add_parser("train", help="train ChooseSubtree and/or Split models")
    p.add_argument("--agent", choices=("cs", "split", "combined"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=TrainConfig.k)
    p.add_argument("--p", type=int, default=TrainConfig.p, help="objects per training round")
    p.add_argument("--epochs-cs", type=int, default=TrainConfig.epochs_cs)
    p.add_argument("--epochs-split", type=int, default=TrainConfig.epochs_split)
    p.add_argument("--parts", type=int, default=TrainConfig.parts)
    p.add_argument("--seed", type=int, default=seed_default)
    _add_tree_args(p)
    p.add_argument("--out-model", required=True, help="model file; combined writes <stem>.cs.json and <stem>.split.json")
    p.add_argument("--log", help="training log (default <out-model>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build", help="build an index and save a snapshot")
    p.add_argument("--data", required=True)
    p.add_argument("--policy", choices=[*NAMED, "rlr"], required=True)
    p.add_argument("--model-cs")
    p.add_argument("--model-split")
    p.add_argument("--k", type=int, default=TrainConfig.k)
    _add_tree_args(p)
    p.add_argument("--out-index", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("bench", help="compare indices on range and KNN workloads")
    p.add_argument("--indices", nargs="+", required=True, metavar="NAME=SNAPSHOT")
    p.add_argument("--queries", nargs="+", metavar="QUERY_CSV")
    p.add_argument("--knn", metavar="KNN_CSV")
    p.add_argument("--baseline", help="index name used as the denominator (default: the first)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report", required=True, help="report path prefix")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rank", help="rank the four split variants per query")
    p.add_argument("--data", required=True)
    p.add_argument("--queries", required=True)
    _add_tree_args(p)
    p.add_argument("--report")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("inspect", help="describe a model file or an index snapshot")
    p.add_argument("--model")
    p.add_argument("--index")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser(_default_seed())
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"rlrtree: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("rlrtree: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rlrtree: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError, SnapshotError) as exc:
        print(f"rlrtree: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ResultMismatch as exc:
        print(f"rlrtree: index disagreement: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, OSError) as exc:
        print(f"rlrtree: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        log.exception("internal error")
        print(f"rlrtree: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
