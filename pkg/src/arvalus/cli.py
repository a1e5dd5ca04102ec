"""Command-line entry point: simulate, train, evaluate, run, graph dump."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline
from .dataset import load_fold_manifest, logo_folds, save_fold_manifest, window_dataset
from .graph import build_edges, save_edge_list
from .model import MODES, topology_hash
from .simulator import (
    TopologyError,
    build_topology,
    export_dataset,
    load_config,
    load_dataset,
    reference_config,
    simulate,
)
from .training import ExperimentData, FoldResult, TrainConfig, run_experiment, save_fold_outputs
from .autodiff import load_checkpoint


def _load_cli_config(args) -> dict:
    if args.config is None:
        return reference_config()
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


class UsageError(Exception):
    pass


def _parse_modes(value: str) -> tuple[str, ...]:
    if value == "both":
        return MODES
    if value in MODES:
        return (value,)
    raise UsageError(f"--mode must be one of {MODES + ('both',)}, got {value!r}")


def _guard_overwrite(out_dir: Path, force: bool, sentinel: str) -> None:
    if (out_dir / sentinel).exists() and not force:
        raise RuntimeError(f"{out_dir / sentinel} exists; pass --force to overwrite")


def cmd_simulate(args) -> int:
    config = _load_cli_config(args)
    out_dir = Path(args.out)
    _guard_overwrite(out_dir, args.force, "manifest.json")
    topology = build_topology(config)
    edge_list = build_edges(topology)
    dataset = simulate(topology, edge_list, args.seed, repetitions=args.repetitions)
    out_dir.mkdir(parents=True, exist_ok=True)

    files = [p.name for p in export_dataset(dataset, out_dir)]
    with open(out_dir / "topology.json", "w", encoding="utf-8") as fh:
        json.dump(topology.canonical_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_edge_list(edge_list, out_dir / "edges.csv", out_dir / "tag_catalog.txt")
    windowed = window_dataset(dataset)
    plan = logo_folds(windowed.n_windows, dataset.schedule)
    save_fold_manifest(plan, windowed.starts, out_dir / "windows.csv")
    files += ["topology.json", "edges.csv", "tag_catalog.txt", "windows.csv"]
    pipeline.write_manifest(out_dir, {
        "command": "simulate",
        "seed": args.seed,
        "repetitions": args.repetitions,
        "config_hash": pipeline.config_hash(config),
        "topology_hash": topology_hash(topology),
        "files": sorted(files),
    })
    print(f"wrote {len(files)} dataset files to {out_dir}")
    return 0


def _load_data_dir(data_dir: Path) -> ExperimentData:
    if not (data_dir / "topology.json").exists():
        raise FileNotFoundError(f"{data_dir} is not a dataset directory (no topology.json)")
    topology = build_topology(load_config(data_dir / "topology.json"))
    edge_list = build_edges(topology)
    dataset = load_dataset(data_dir, topology.n_nodes)
    windowed = window_dataset(dataset)
    fold_file = data_dir / "windows.csv"
    if not fold_file.exists():
        raise FileNotFoundError(f"missing fold file {fold_file}")
    plan = load_fold_manifest(fold_file)
    return ExperimentData(topology, edge_list, windowed, plan, dataset.schedule)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        gamma=args.gamma,
        seed=args.seed,
    )


def cmd_train(args) -> int:
    data = _load_data_dir(Path(args.data))
    modes = _parse_modes(args.mode)
    folds = tuple(args.fold) if args.fold else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = run_experiment(data, _train_config(args), modes=modes, folds=folds,
                             parallel=args.parallel_folds)
    topo_hash = topology_hash(data.topology)
    for result in results:
        path = save_fold_outputs(out_dir, result, topo_hash)
        print(f"{result.mode} fold {result.fold}: best macro F1 "
              f"{result.best_macro_f1:.4f} at epoch {result.selected_epoch} -> {path.name}")
    return 0


def cmd_evaluate(args) -> int:
    data = _load_data_dir(Path(args.data))
    ckpt_dir = Path(args.checkpoints)
    expected_hash = topology_hash(data.topology)
    out_dir = Path(args.out)
    _guard_overwrite(out_dir, args.force, "report.json")

    outcome = pipeline.ExperimentOutcome(seeds=[])
    found = sorted(ckpt_dir.glob("*_fold*_best"))
    if not found:
        raise FileNotFoundError(f"no checkpoints found in {ckpt_dir}")
    for path in found:
        tensors, meta = load_checkpoint(path)
        if meta.get("topology_hash") != expected_hash:
            raise RuntimeError(
                f"checkpoint {path.name} was trained on topology {meta.get('topology_hash')} "
                f"but the dataset has {expected_hash}; regenerate or retrain"
            )
        lo = tensors.pop("normalizer.lo")
        hi = tensors.pop("normalizer.hi")
        result = FoldResult(
            mode=meta["mode"], fold=int(meta["fold"]), best_values=tensors,
            normalizer_lo=lo, normalizer_hi=hi, history=[],
            selected_epoch=int(meta.get("selected_epoch", 0)),
        )
        report = pipeline.fold_report(data, result)
        outcome.fold_reports.setdefault(result.mode, []).append(report)
    report = outcome.report_dict(data.topology.canonical_dict(), _train_config(args))
    path = pipeline.write_report(report, out_dir)
    pipeline.write_manifest(out_dir, {
        "command": "evaluate",
        "topology_hash": expected_hash,
        "checkpoints": [p.name for p in found],
        "files": ["report.json", "metrics_summary.csv", "pr_at_k.csv"],
    })
    print(f"wrote {path}")
    _print_summary(report)
    return 0


def _print_summary(report: dict) -> None:
    for mode, section in sorted(report.get("modes", {}).items()):
        agg = section["aggregate"]
        ident = agg.get("identification/macro_f1", {})
        det = agg.get("detection/macro_f1", {})
        loc = agg.get("localization/map", {})
        print(
            f"  {mode}: identification F1 {ident.get('mean', float('nan')):.3f} "
            f"± {ident.get('std', float('nan')):.3f}, detection F1 "
            f"{det.get('mean', float('nan')):.3f}, MAP {loc.get('mean', float('nan')):.3f}"
        )


def cmd_run(args) -> int:
    config = _load_cli_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    if args.out:
        out_dir = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out_dir = Path("runs") / f"{stamp}-seed{'-'.join(str(s) for s in seeds)}"
    _guard_overwrite(out_dir, args.force, "report.json")
    out_dir.mkdir(parents=True, exist_ok=True)

    train_config = _train_config(args)
    modes = _parse_modes(args.mode)
    outcome = pipeline.run_seeds(config, seeds, train_config, modes=modes,
                                 parallel=args.parallel_folds, keep_results=True)
    topology = build_topology(config)
    topo_hash = topology_hash(topology)
    files = ["report.json", "metrics_summary.csv", "pr_at_k.csv"]
    ckpt_dir = out_dir / "checkpoints"
    for seed, result in outcome.results:
        seed_dir = ckpt_dir / f"seed{seed}"
        save_fold_outputs(seed_dir, result, topo_hash)
        files.append(f"checkpoints/seed{seed}/{result.mode}_fold{result.fold}_best")
    report = outcome.report_dict(config, train_config)
    pipeline.write_report(report, out_dir)
    pipeline.write_manifest(out_dir, {
        "command": "run",
        "seeds": seeds,
        "config_hash": pipeline.config_hash(config),
        "topology_hash": topo_hash,
        "train": report["train"],
        "files": sorted(files),
    })
    print(f"report written to {out_dir / 'report.json'}")
    _print_summary(report)
    return 0


def cmd_graph_dump(args) -> int:
    config = _load_cli_config(args)
    topology = build_topology(config)
    edge_list = build_edges(topology)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_edge_list(edge_list, out_dir / "edges.csv", out_dir / "tag_catalog.txt")
    print(f"{edge_list.n_edges} edges, {edge_list.z} tags -> {out_dir}")
    return 0


def _add_train_flags(p: argparse.ArgumentParser, epochs_default: int = 100) -> None:
    p.add_argument("--epochs", type=int, default=epochs_default)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--parallel-folds", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arvalus",
        description="Simulate KPI streams of a distributed deployment, train the "
                    "two anomaly classifiers, and evaluate identification and "
                    "localization metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a labeled KPI dataset")
    p.add_argument("--config", help="topology config JSON (default: shipped reference)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train classifiers on a simulated dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="both", help="arvalus, d_arvalus, or both")
    p.add_argument("--fold", type=int, action="append", help="train only this fold (repeatable)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate checkpoints against a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--force", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline: simulate, train, evaluate, report")
    p.add_argument("--config", help="topology config JSON (default: shipped reference)")
    p.add_argument("--seeds", default="42", help="comma-separated master seeds")
    p.add_argument("--seed", type=int, default=42, help="unused alias kept for symmetry")
    p.add_argument("--mode", default="both")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("graph", help="graph utilities")
    gsub = p.add_subparsers(dest="graph_command", required=True)
    g = gsub.add_parser("dump", help="export the edge list and tag catalog")
    g.add_argument("--config", help="topology config JSON (default: shipped reference)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_graph_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TopologyError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
