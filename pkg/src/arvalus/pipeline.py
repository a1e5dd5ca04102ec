"""End-to-end experiment orchestration with seeded reproducibility.

One master seed fans out to fixed sub-streams for simulation, parameter
initialization, batch shuffling and dropout, so a full run is a pure
function of (config, seed, training settings).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation
from .dataset import WINDOW_SIZE
from .graph import build_edges
from .model import MODES, ModelParams, init_params, predict_proba, topology_hash
from .dataset import Normalizer
from .simulator import (
    DeploymentTopology,
    KpiDataset,
    build_topology,
    reference_config,
    simulate,
)
from .training import ExperimentData, FoldResult, TrainConfig, run_experiment

VERSION = "0.1.0"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def prepare_experiment(config: dict | None, seed: int) -> tuple[DeploymentTopology, KpiDataset, ExperimentData]:
    """Simulate a dataset for one master seed and wrap it for training."""
    config = config or reference_config()
    topology = build_topology(config)
    edge_list = build_edges(topology)
    dataset = simulate(topology, edge_list, seed)
    data = ExperimentData.from_dataset(topology, dataset, edge_list)
    return topology, dataset, data


def rebuild_params(data: ExperimentData, mode: str, values: dict) -> ModelParams:
    params = init_params(data.topology, data.edge_list, mode, np.random.default_rng(0))
    params.load_values(values)
    return params


def fold_report(data: ExperimentData, result: FoldResult) -> dict:
    """Evaluate one trained fold on its held-out windows and events."""
    params = rebuild_params(data, result.mode, result.best_values)
    normalizer = Normalizer(lo=result.normalizer_lo, hi=result.normalizer_hi)
    val_idx = data.folds.validation_indices(result.fold)
    probs = predict_proba(normalizer.apply(data.windowed.windows[val_idx]), params)
    events = [e for e in data.schedule.events if e.repetition == result.fold]
    report = evaluation.evaluate_fold_predictions(
        probs, val_idx, data.windowed.labels, events, WINDOW_SIZE, data.windowed.n_windows
    )
    report["mode"] = result.mode
    report["fold"] = result.fold
    report["selected_epoch"] = result.selected_epoch
    return report


@dataclass
class ExperimentOutcome:
    """Reports for every (seed, mode, fold) plus per-mode aggregates."""

    seeds: list[int]
    fold_reports: dict[str, list[dict]] = field(default_factory=dict)  # mode -> reports
    results: list[tuple[int, FoldResult]] = field(default_factory=list)  # (seed, result)

    def aggregate(self, mode: str) -> dict:
        return evaluation.aggregate_reports(self.fold_reports.get(mode, []))

    def report_dict(self, config: dict, train_config: TrainConfig) -> dict:
        modes = {}
        for mode in sorted(self.fold_reports):
            modes[mode] = {
                "folds": self.fold_reports[mode],
                "aggregate": self.aggregate(mode),
            }
        report = {
            "version": VERSION,
            "seeds": self.seeds,
            "config_hash": config_hash(config),
            "train": {
                "epochs": train_config.epochs,
                "batch_size": train_config.batch_size,
                "lr": train_config.lr,
                "weight_decay": train_config.weight_decay,
                "gamma": train_config.gamma,
            },
            "modes": modes,
        }
        if set(self.fold_reports) >= set(MODES):
            report["comparison"] = compare_modes(
                self.aggregate("arvalus"), self.aggregate("d_arvalus")
            )
        return report


def compare_modes(agg_a: dict, agg_d: dict) -> dict:
    """Headline D-Arvalus vs Arvalus gaps used by the experiment report."""
    def mean(agg, key):
        return agg.get(key, {}).get("mean", float("nan"))

    map_a = mean(agg_a, "localization/map")
    map_d = mean(agg_d, "localization/map")
    out = {
        "identification_macro_f1": {
            "arvalus": mean(agg_a, "identification/macro_f1"),
            "d_arvalus": mean(agg_d, "identification/macro_f1"),
        },
        "detection_macro_f1": {
            "arvalus": mean(agg_a, "detection/macro_f1"),
            "d_arvalus": mean(agg_d, "detection/macro_f1"),
        },
        "map": {"arvalus": map_a, "d_arvalus": map_d},
        "map_relative_gain": (map_d - map_a) / map_a if map_a else float("nan"),
        "neighborhood_accuracy": {
            "arvalus": mean(agg_a, "scenario_accuracy/neighborhood"),
            "d_arvalus": mean(agg_d, "scenario_accuracy/neighborhood"),
        },
    }
    return out


def run_seeds(
    config: dict | None,
    seeds: list[int],
    train_config: TrainConfig,
    modes: tuple[str, ...] = MODES,
    folds: tuple[int, ...] | None = None,
    parallel: int = 1,
    keep_results: bool = False,
) -> ExperimentOutcome:
    """Run the whole pipeline for each master seed and collect reports."""
    outcome = ExperimentOutcome(seeds=list(seeds))
    for seed in seeds:
        _topology, _dataset, data = prepare_experiment(config, seed)
        seed_cfg = TrainConfig(
            epochs=train_config.epochs,
            batch_size=train_config.batch_size,
            lr=train_config.lr,
            betas=train_config.betas,
            weight_decay=train_config.weight_decay,
            gamma=train_config.gamma,
            seed=seed,
        )
        results = run_experiment(data, seed_cfg, modes=modes, folds=folds, parallel=parallel)
        for result in results:
            report = fold_report(data, result)
            report["seed"] = seed
            outcome.fold_reports.setdefault(result.mode, []).append(report)
            if keep_results:
                outcome.results.append((seed, result))
    return outcome


def write_report(report: dict, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_plot_csvs(report, out_dir)
    return path


def _write_plot_csvs(report: dict, out_dir: Path) -> None:
    """Plot-ready CSVs: metric bars and the PR@k curves."""
    bar_rows = []
    curve_rows = []
    for mode, section in report.get("modes", {}).items():
        agg = section.get("aggregate", {})
        for task in ("detection", "identification"):
            for metric in ("accuracy", "macro_precision", "macro_recall", "macro_f1"):
                cell = agg.get(f"{task}/{metric}")
                if cell:
                    bar_rows.append((mode, task, metric, cell["mean"], cell["std"]))
        for key in ("localization/map", "localization/typed_map"):
            cell = agg.get(key)
            if cell:
                bar_rows.append((mode, "localization", key.split("/")[1], cell["mean"], cell["std"]))
        for scenario in ("local", "neighborhood", "adversary"):
            cell = agg.get(f"scenario_accuracy/{scenario}")
            if cell:
                bar_rows.append((mode, "scenario", scenario, cell["mean"], cell["std"]))
        for variant in ("pr_at_k", "typed_pr_at_k"):
            curve = agg.get(f"localization/{variant}")
            if curve:
                for k, (m, s) in enumerate(zip(curve["mean"], curve["std"]), start=1):
                    curve_rows.append((mode, variant, k, m, s))
    with open(out_dir / "metrics_summary.csv", "w", encoding="utf-8") as fh:
        fh.write("mode,task,metric,mean,std\n")
        for mode, task, metric, m, s in bar_rows:
            fh.write(f"{mode},{task},{metric},{m:.6f},{s:.6f}\n")
    with open(out_dir / "pr_at_k.csv", "w", encoding="utf-8") as fh:
        fh.write("mode,variant,k,mean,std\n")
        for mode, variant, k, m, s in curve_rows:
            fh.write(f"{mode},{variant},{k},{m:.6f},{s:.6f}\n")


def write_manifest(out_dir: str | Path, entries: dict) -> Path:
    """Run manifest: hashes, seeds and relative artifact paths, no timestamps."""
    out_dir = Path(out_dir)
    manifest = dict(entries)
    manifest["version"] = VERSION
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
