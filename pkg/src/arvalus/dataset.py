"""Windowing, labeling, per-group min-max normalization, and LOGO folds.

The simulated series is cut into aligned windows of 20 samples (stride
20). A node's window gets an anomaly label only when all of its samples
carry that anomaly state; otherwise it is labeled normal. Normalization
bounds are fitted on training windows only, per (group, KPI).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulator import (
    DeploymentTopology,
    InjectionSchedule,
    KpiDataset,
    SystemState,
)

WINDOW_SIZE = 20
WINDOW_STRIDE = 20
N_FOLDS = 5


@dataclass
class GraphSample:
    """One time-aligned window across all nodes."""

    window_index: int
    start: int
    end: int
    features: np.ndarray  # (n_nodes, kpi_count, WINDOW_SIZE)
    labels: np.ndarray | None = None  # (n_nodes,) SystemState values


@dataclass
class WindowedDataset:
    """All windows of a simulated run, stored as one dense array."""

    windows: np.ndarray  # (n_windows, n_nodes, kpi_count, WINDOW_SIZE)
    labels: np.ndarray  # (n_windows, n_nodes)
    starts: np.ndarray  # (n_windows,)

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    def sample(self, w: int) -> GraphSample:
        return GraphSample(
            window_index=w,
            start=int(self.starts[w]),
            end=int(self.starts[w]) + WINDOW_SIZE,
            features=self.windows[w],
            labels=self.labels[w],
        )


def slice_windows(dataset: KpiDataset) -> list[GraphSample]:
    """Cut the series into floor(T/20) aligned windows (unlabeled)."""
    windowed = _window_array(dataset.series)
    return [
        GraphSample(window_index=w, start=w * WINDOW_STRIDE, end=w * WINDOW_STRIDE + WINDOW_SIZE,
                    features=windowed[w])
        for w in range(windowed.shape[0])
    ]


def _window_array(series: np.ndarray) -> np.ndarray:
    n, d, T = series.shape
    n_windows = T // WINDOW_SIZE
    trimmed = series[:, :, : n_windows * WINDOW_SIZE]
    # (n, d, W, 20) -> (W, n, d, 20) without copying until transpose is used
    return trimmed.reshape(n, d, n_windows, WINDOW_SIZE).transpose(2, 0, 1, 3)


def label_window(node: int, start: int, end: int, ground_truth: np.ndarray) -> SystemState:
    """Anomaly class only when every sample of the node carries it."""
    if start < 0 or end > ground_truth.shape[1]:
        raise ValueError(f"window [{start}, {end}) outside ground truth")
    states = ground_truth[node, start:end]
    first = states[0]
    if first != SystemState.NORMAL and np.all(states == first):
        return SystemState(int(first))
    return SystemState.NORMAL


def label_all_windows(ground_truth: np.ndarray, n_windows: int) -> np.ndarray:
    """Vectorized window labels, (n_windows, n_nodes)."""
    n, _T = ground_truth.shape
    gt = ground_truth[:, : n_windows * WINDOW_SIZE].reshape(n, n_windows, WINDOW_SIZE)
    first = gt[:, :, 0]
    uniform = np.all(gt == first[:, :, None], axis=2)
    labels = np.where(uniform, first, SystemState.NORMAL)
    return labels.T.astype(np.int8)


def window_dataset(dataset: KpiDataset) -> WindowedDataset:
    windows = _window_array(dataset.series)
    labels = label_all_windows(dataset.ground_truth, windows.shape[0])
    starts = np.arange(windows.shape[0]) * WINDOW_STRIDE
    return WindowedDataset(windows=windows, labels=labels, starts=starts)


@dataclass
class Normalizer:
    """Per (group, KPI) min-max bounds fitted on training windows only."""

    lo: np.ndarray  # (n_nodes, kpi_count), bounds broadcast to member nodes
    hi: np.ndarray

    def apply(self, windows: np.ndarray) -> np.ndarray:
        """Rescale to [0, 1]; out-of-range validation values are clipped."""
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        scaled = (windows - self.lo[..., None]) / safe[..., None]
        scaled = np.where((span > 0)[..., None], scaled, 0.0)
        return np.clip(scaled, 0.0, 1.0)


def fit_normalizer(
    windows: np.ndarray,
    train_indices: np.ndarray,
    topology: DeploymentTopology,
) -> Normalizer:
    """Fit per-(group, KPI) bounds over all member nodes' training windows."""
    if len(train_indices) == 0:
        raise ValueError("empty training partition")
    n_nodes, kpi_count = windows.shape[1], windows.shape[2]
    lo = np.zeros((n_nodes, kpi_count))
    hi = np.zeros((n_nodes, kpi_count))
    train = windows[np.asarray(train_indices)]
    for group in topology.groups:
        members = list(group.members)
        block = train[:, members]  # (W_train, m, d, 20)
        lo_g = block.min(axis=(0, 1, 3))
        hi_g = block.max(axis=(0, 1, 3))
        lo[members] = lo_g
        hi[members] = hi_g
    return Normalizer(lo=lo, hi=hi)


@dataclass
class FoldPlan:
    """Five leave-one-group-out folds keyed by injection repetition id."""

    folds: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    window_fold: np.ndarray | None = None  # validation fold id per window, 1-based

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def train_indices(self, fold: int) -> np.ndarray:
        return self.folds[fold - 1][0]

    def validation_indices(self, fold: int) -> np.ndarray:
        return self.folds[fold - 1][1]


def logo_folds(n_windows: int, schedule: InjectionSchedule, n_folds: int = N_FOLDS) -> FoldPlan:
    """Assign each window to exactly one validation fold.

    Windows overlapping an event follow that event's repetition id (the
    first such event if a window straddles several); pure-normal windows
    rotate deterministically via window_index mod n_folds.
    """
    reps = {e.repetition for e in schedule.events}
    if schedule.events and reps != set(range(1, n_folds + 1)):
        missing = set(range(1, n_folds + 1)) - reps
        raise ValueError(f"schedule missing repetition ids {sorted(missing)}")
    fold_of = np.zeros(n_windows, dtype=np.int64)
    for ev in sorted(schedule.events, key=lambda e: e.start):
        first_w = ev.start // WINDOW_STRIDE
        last_w = (ev.end - 1) // WINDOW_STRIDE
        for w in range(first_w, min(last_w + 1, n_windows)):
            if fold_of[w] == 0:
                fold_of[w] = ev.repetition
    for w in range(n_windows):
        if fold_of[w] == 0:
            fold_of[w] = (w % n_folds) + 1
    all_idx = np.arange(n_windows)
    folds = []
    for r in range(1, n_folds + 1):
        val = all_idx[fold_of == r]
        train = all_idx[fold_of != r]
        folds.append((train, val))
    return FoldPlan(folds=folds, window_fold=fold_of)


def save_fold_manifest(plan: FoldPlan, starts: np.ndarray, path) -> None:
    """Windows index file: window_index, start, end, validation fold."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("window_index,start,end,fold\n")
        for w, fold in enumerate(plan.window_fold):
            s = int(starts[w])
            fh.write(f"{w},{s},{s + WINDOW_SIZE},{int(fold)}\n")


def load_fold_manifest(path) -> FoldPlan:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    fold_of = raw[:, 3]
    n_windows = raw.shape[0]
    all_idx = np.arange(n_windows)
    folds = []
    for r in range(1, int(fold_of.max()) + 1):
        folds.append((all_idx[fold_of != r], all_idx[fold_of == r]))
    return FoldPlan(folds=folds, window_fold=fold_of)
