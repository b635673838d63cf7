"""Command line entry point: ``spdgnn <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 dataset error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import SYNTHETIC, delta_hyperbolicity, load_node_dataset, load_tudataset, write_node_dataset
from .errors import ConfigError, DatasetError, Disconnected, DivergedTraining, SpdGnnError, TooLargeForExact
from .harness import TrainConfig, evaluate, export_embeddings, grid_search, train

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_DIVERGED = 0, 2, 3, 4

# flag name -> TrainConfig field
_OVERRIDES = {
    "dataset_dir": "dataset",
    "task": "task",
    "arch": "arch",
    "geometry": "geometry",
    "dim": "dim",
    "classifier": "classifier",
    "lr": "lr",
    "dropout": "dropout",
    "weight_decay": "weight_decay",
    "nonlinearity": "nonlinearity",
    "C": "C",
    "max_epochs": "max_epochs",
    "patience": "patience",
    "batch_size": "batch_size",
    "out": "out",
    "num_layers": "num_layers",
    "split_seed": "split_seed",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    p.add_argument("--dataset-dir", help="dataset directory, or synth:<kind> for an in-memory graph")
    p.add_argument("--task", choices=("node", "graph"))
    p.add_argument("--arch", choices=("gcn", "gat", "cheb", "sgc", "gin"))
    p.add_argument("--geometry", choices=("euclidean", "hyperbolic", "spd", "product"))
    p.add_argument("--dim", type=int, help="ambient size; n for SPD_n, factor size m for the product")
    p.add_argument("--classifier", choices=("linear-xe", "svm-mm", "nc-mm"))
    p.add_argument("--seed", type=int, help="first seed (default 0)")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds starting at --seed")
    p.add_argument("--out", help="output directory (default: runs)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for grid search")
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--nonlinearity", choices=("reeig", "tgreeig"))
    p.add_argument("--C", type=float, help="margin-head regularization weight")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--num-layers", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--zscore", action="store_true", help="z-score continuous node attributes (TUDataset)")


def config_from_args(args) -> TrainConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for flag, name in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[name] = value
    if args.zscore:
        data["zscore"] = True
    if args.seed is not None or args.seeds is not None:
        first = args.seed if args.seed is not None else 0
        count = args.seeds if args.seeds is not None else 1
        if count < 1:
            raise ConfigError("--seeds must be at least 1")
        data["seeds"] = list(range(first, first + count))
    if "dataset" not in data:
        raise ConfigError("no dataset given: use --dataset-dir or a config file")
    return TrainConfig.from_dict(data)


def _fmt(x: float) -> str:
    return f"{100 * x:.1f}"


def cmd_train(args) -> int:
    config = config_from_args(args)
    for r in train(config):
        print(
            f"seed {r.seed}: epochs {len(r.epochs)} best {r.best_epoch} "
            f"dev acc {_fmt(r.best_val_acc)} test acc {_fmt(r.test_acc)}"
        )
    print(f"records: {config.run_dir() / 'record.jsonl'}")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    config = config_from_args(args)
    best, board = grid_search(config, threads=args.threads)
    for rank, entry in enumerate(board[: args.top], start=1):
        print(f"{rank:3d}  dev {_fmt(entry['dev_acc'])}  test {_fmt(entry['test_acc'])}  {json.dumps(entry['overrides'], sort_keys=True)}")
    if best is not None:
        best_path = Path(config.out) / "best_config.json"
        best_path.write_text(json.dumps(best.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        print(f"best config: {best_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = config_from_args(args)
    result = evaluate(config, checkpoint=args.checkpoint)
    print(f"{_fmt(result['mean'])} +- {_fmt(result['std'])} over {len(result['accuracies'])} seeds")
    print(f"summary: {Path(config.out) / 'summary.csv'}")
    return EXIT_OK


def cmd_export(args) -> int:
    config = config_from_args(args)
    seed = config.seeds[0]
    checkpoint = Path(args.checkpoint) if args.checkpoint else config.run_dir() / f"seed_{seed}.npz"
    if checkpoint.is_dir():
        checkpoint = checkpoint / f"seed_{seed}.npz"
    if not checkpoint.is_file():
        raise ConfigError(f"checkpoint not found: {checkpoint} (run 'train' first)")
    out = Path(args.output) if args.output else Path(config.out) / f"embeddings_{config.hash()}_seed{seed}.csv"
    print(export_embeddings(config, checkpoint, out))
    return EXIT_OK


def cmd_hyperbolicity(args) -> int:
    target = args.dataset_dir
    if target is None:
        raise ConfigError("--dataset-dir is required")
    if target.startswith("synth:"):
        kind = target[len("synth:") :]
        if kind not in SYNTHETIC:
            raise DatasetError(f"unknown synthetic graph {kind!r}")
        graphs = [SYNTHETIC[kind]()]
    elif args.task == "graph":
        graphs, _ = load_tudataset(target)
    else:
        graphs = [load_node_dataset(target)]
    seed = args.seed if args.seed is not None else 0
    values = [delta_hyperbolicity(g, args.mode, args.samples, seed) for g in graphs]
    if len(values) == 1:
        print(f"delta = {values[0]:g} ({args.mode})")
    else:
        print(f"delta over {len(values)} graphs: max {max(values):g} mean {np.mean(values):g} ({args.mode})")
    return EXIT_OK


def cmd_synth(args) -> int:
    kind = args.kind
    seed = args.seed if args.seed is not None else 0
    if kind == "tree":
        g = SYNTHETIC[kind](args.branching, args.depth, args.feature_dim, seed)
    elif kind == "grid":
        g = SYNTHETIC[kind](args.width, args.height, args.feature_dim, seed)
    else:
        g = SYNTHETIC[kind](args.branching, args.depth, args.width, args.height, args.feature_dim, seed)
    out = Path(args.out) if args.out else Path(g.name)
    write_node_dataset(g, out)
    print(f"{g.num_nodes} nodes, {g.num_edges} edges -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdgnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every seed and write run records")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="search the hyperparameter grid, resuming finished points")
    _common(p)
    p.add_argument("--top", type=int, default=10, help="leaderboard rows to print")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("evaluate", help="mean and std of test accuracy over seeds; writes summary.csv")
    _common(p)
    p.add_argument("--checkpoint", help="run directory with seed_<s>.npz files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="write log-mapped embeddings as CSV")
    _common(p)
    p.add_argument("--checkpoint", help="seed_<s>.npz file or its run directory")
    p.add_argument("--output", help="CSV path (default: <out>/embeddings_<hash>_seed<s>.csv)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("hyperbolicity", help="Gromov delta of a dataset's hop metric")
    _common(p)
    p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    p.add_argument("--samples", type=int, default=10**6, help="quadruples for sampled mode")
    p.set_defaults(func=cmd_hyperbolicity)

    p = sub.add_parser("synth", help="write a synthetic node dataset to disk")
    p.add_argument("--kind", choices=sorted(SYNTHETIC), default="tree-of-grids")
    p.add_argument("--branching", type=int, default=2)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--height", type=int, default=3)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="target directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TooLargeForExact) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, Disconnected, IndexError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except DivergedTraining as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SpdGnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
