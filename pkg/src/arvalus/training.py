"""Focal-loss training with LOGO fold orchestration and best-F1 selection."""
from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation
from .autodiff import AdamState, Tape, Tensor, adam_step, save_checkpoint
from .dataset import FoldPlan, Normalizer, WindowedDataset, fit_normalizer, logo_folds, window_dataset
from .graph import EdgeList, build_edges
from .model import (
    MODES,
    ModelParams,
    forward,
    init_params,
    predict_proba,
    topology_hash,
)
from .seeding import sub_rng
from .simulator import DeploymentTopology, InjectionSchedule, KpiDataset


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-5
    gamma: float = 2.0
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    macro_f1: float
    class_f1: tuple[float, ...]


@dataclass
class FoldResult:
    mode: str
    fold: int
    best_values: dict
    normalizer_lo: np.ndarray
    normalizer_hi: np.ndarray
    history: list[EpochMetrics]
    selected_epoch: int

    @property
    def best_macro_f1(self) -> float:
        return self.history[self.selected_epoch - 1].macro_f1


@dataclass
class ExperimentData:
    """Everything a fold needs: topology, edges, windows, labels, folds."""

    topology: DeploymentTopology
    edge_list: EdgeList
    windowed: WindowedDataset
    folds: FoldPlan
    schedule: InjectionSchedule

    @classmethod
    def from_dataset(cls, topology: DeploymentTopology, dataset: KpiDataset,
                     edge_list: EdgeList | None = None) -> "ExperimentData":
        edge_list = edge_list or build_edges(topology)
        windowed = window_dataset(dataset)
        folds = logo_folds(windowed.n_windows, dataset.schedule)
        return cls(topology, edge_list, windowed, folds, dataset.schedule)


def focal_loss(tape: Tape, probs: Tensor, labels: np.ndarray, gamma: float = 2.0) -> Tensor:
    """Mean over nodes of -(1 - p_true)^gamma * log(p_true)."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = probs.shape[-1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError("label index outside class range")
    p = tape.clip_min(tape.take_per_row(probs, labels), 1e-12)
    weight = tape.power(tape.sub(1.0, p), gamma)
    return tape.mean(tape.mul(weight, tape.neg(tape.log(p))))


def _validate(params: ModelParams, val_x: np.ndarray,
              val_labels: np.ndarray) -> tuple[float, tuple[float, ...]]:
    probs = predict_proba(val_x, params, chunk=256)
    preds = probs.argmax(axis=-1).reshape(-1)
    per_class = evaluation.per_class_f1(preds, val_labels.reshape(-1), params.n_classes)
    return float(np.mean(per_class)), tuple(per_class)


def train_fold(data: ExperimentData, fold: int, mode: str, config: TrainConfig) -> FoldResult:
    """Train one mode on one LOGO fold, keeping the best-validation epoch."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    train_idx = data.folds.train_indices(fold)
    val_idx = data.folds.validation_indices(fold)
    if len(train_idx) == 0:
        raise ValueError(f"fold {fold} has an empty training set")
    windows = data.windowed.windows
    labels = data.windowed.labels

    normalizer = fit_normalizer(windows, train_idx, data.topology)
    val_x = normalizer.apply(windows[val_idx])
    val_labels = labels[val_idx]
    params = init_params(data.topology, data.edge_list, mode,
                         sub_rng(config.seed, "init", mode, fold))
    state = AdamState.for_params(params.tensors)
    stream = sub_rng(config.seed, "train", mode, fold)

    history: list[EpochMetrics] = []
    best_f1 = -1.0
    best_values = params.clone_values()
    selected = 1
    n_classes = params.n_classes
    for epoch in range(1, config.epochs + 1):
        order = stream.permutation(train_idx)
        losses = []
        for i in range(0, len(order), config.batch_size):
            batch = order[i : i + config.batch_size]
            x = normalizer.apply(windows[batch])
            y = labels[batch].reshape(-1)
            tape = Tape()
            probs = forward(tape, x, params, mode, training=True, rng=stream)
            loss = focal_loss(tape, tape.reshape(probs, (-1, n_classes)), y, config.gamma)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at fold {fold} epoch {epoch}")
            losses.append(value)
            tape.backward(loss)
            grads = {k: t.grad for k, t in params.tensors.items() if t.grad is not None}
            adam_step(params.tensors, grads, state, lr=config.lr,
                      beta1=config.betas[0], beta2=config.betas[1],
                      weight_decay=config.weight_decay)
            for t in params.tensors.values():
                t.grad = None
        macro, per_class = _validate(params, val_x, val_labels)
        history.append(EpochMetrics(epoch, float(np.mean(losses)), macro, per_class))
        if macro > best_f1:
            best_f1 = macro
            best_values = params.clone_values()
            selected = epoch
    return FoldResult(
        mode=mode,
        fold=fold,
        best_values=best_values,
        normalizer_lo=normalizer.lo,
        normalizer_hi=normalizer.hi,
        history=history,
        selected_epoch=selected,
    )


# Module-level slot letting forked workers read the experiment data without
# pickling the (large) window arrays per task.
_WORKER_DATA: ExperimentData | None = None
_WORKER_CONFIG: TrainConfig | None = None


def _run_job(job: tuple[str, int]) -> FoldResult:
    mode, fold = job
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            return train_fold(_WORKER_DATA, fold, mode, _WORKER_CONFIG)
    except ImportError:
        return train_fold(_WORKER_DATA, fold, mode, _WORKER_CONFIG)


def run_experiment(
    data: ExperimentData,
    config: TrainConfig,
    modes: tuple[str, ...] = MODES,
    folds: tuple[int, ...] | None = None,
    parallel: int = 1,
) -> list[FoldResult]:
    """Train every requested (mode, fold) pair; results sorted by (mode, fold).

    With parallel > 1 the folds fan out to forked worker processes; each
    job derives its own random streams, so results do not depend on the
    degree of parallelism.
    """
    global _WORKER_DATA, _WORKER_CONFIG
    folds = tuple(folds) if folds else tuple(range(1, data.folds.n_folds + 1))
    jobs = [(mode, fold) for mode in modes for fold in folds]
    if parallel > 1 and len(jobs) > 1 and hasattr(mp, "get_context"):
        _WORKER_DATA, _WORKER_CONFIG = data, config
        try:
            ctx = mp.get_context("fork")
            with ctx.Pool(processes=min(parallel, len(jobs))) as pool:
                results = pool.map(_run_job, jobs)
        finally:
            _WORKER_DATA = _WORKER_CONFIG = None
    else:
        results = [train_fold(data, fold, mode, config) for mode, fold in jobs]
    return sorted(results, key=lambda r: (r.mode, r.fold))


def checkpoint_name(mode: str, fold: int) -> str:
    return f"{mode}_fold{fold}_best"


def save_fold_outputs(out_dir: str | Path, result: FoldResult, topo_hash: str) -> Path:
    """Write the best checkpoint and the per-epoch metric log for one fold."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensors = dict(result.best_values)
    tensors["normalizer.lo"] = result.normalizer_lo
    tensors["normalizer.hi"] = result.normalizer_hi
    meta = {
        "mode": result.mode,
        "fold": result.fold,
        "selected_epoch": result.selected_epoch,
        "topology_hash": topo_hash,
    }
    ckpt = out_dir / checkpoint_name(result.mode, result.fold)
    save_checkpoint(ckpt, tensors, meta)
    log = out_dir / f"{result.mode}_fold{result.fold}_log.csv"
    with open(log, "w", encoding="utf-8") as fh:
        n_classes = len(result.history[0].class_f1) if result.history else 0
        cols = ",".join(f"f1_class{c}" for c in range(n_classes))
        fh.write(f"epoch,loss,macro_f1,{cols}\n")
        for em in result.history:
            per = ",".join(f"{v:.6f}" for v in em.class_f1)
            fh.write(f"{em.epoch},{em.loss:.8f},{em.macro_f1:.6f},{per}\n")
    return ckpt
