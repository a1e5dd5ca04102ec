"""Classification scoring and anomaly localization metrics.

Localization ranks all nodes of an event by predicted anomaly probability
(1 - P(normal), maximum over the event's windows, ties broken by node
id). PR@k is the fraction of events whose true node ranks within the top
k; MAP averages PR@j over j = 1..N components. The typed variants
additionally require the predicted class at the true node to match.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulator import InjectionEvent, Scenario, SystemState


def _confusion_counts(predictions: np.ndarray, labels: np.ndarray, cls) -> tuple[int, int, int]:
    tp = int(np.sum((predictions == cls) & (labels == cls)))
    fp = int(np.sum((predictions == cls) & (labels != cls)))
    fn = int(np.sum((predictions != cls) & (labels == cls)))
    return tp, fp, fn


def per_class_f1(predictions: np.ndarray, labels: np.ndarray, n_classes: int) -> list[float]:
    scores = []
    for cls in range(n_classes):
        tp, fp, fn = _confusion_counts(predictions, labels, cls)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * p * r / (p + r) if p + r else 0.0)
    return scores


def classification_report(predictions, labels) -> dict:
    """Accuracy plus per-class and macro precision/recall/F1.

    Macro scores average over the classes present in the labels; classes
    that only ever appear in predictions get a per-class row but do not
    enter the macro mean.
    """
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    observed = sorted(set(predictions.tolist()) | set(labels.tolist()))
    label_classes = set(labels.tolist())
    per_class = {}
    macro_p, macro_r, macro_f = [], [], []
    for cls in observed:
        tp, fp, fn = _confusion_counts(predictions, labels, cls)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        per_class[str(cls)] = {"precision": p, "recall": r, "f1": f1, "support": tp + fn}
        if cls in label_classes:
            macro_p.append(p)
            macro_r.append(r)
            macro_f.append(f1)
    return {
        "accuracy": float(np.mean(predictions == labels)),
        "macro_precision": float(np.mean(macro_p)),
        "macro_recall": float(np.mean(macro_r)),
        "macro_f1": float(np.mean(macro_f)),
        "per_class": per_class,
    }


def binarize(values: np.ndarray) -> np.ndarray:
    """Collapse anomaly classes for the detection task: normal vs anomaly."""
    return (np.asarray(values) != int(SystemState.NORMAL)).astype(np.int64)


@dataclass(frozen=True)
class LocalizationRecord:
    scenario: Scenario
    rank: int
    type_match: bool


def rank_locations(window_probs: np.ndarray) -> np.ndarray:
    """Node ids sorted by anomaly evidence for one event.

    window_probs: (n_windows, n_nodes, n_classes) probabilities over the
    event's covered windows. Evidence per node is the max over windows of
    1 - P(normal); ties resolve by ascending node id.
    """
    if window_probs.ndim != 3 or window_probs.shape[0] == 0:
        raise ValueError("event has no covered window")
    evidence = (1.0 - window_probs[:, :, int(SystemState.NORMAL)]).max(axis=0)
    n = evidence.shape[0]
    return np.lexsort((np.arange(n), -evidence))


def localize_event(window_probs: np.ndarray, event: InjectionEvent) -> LocalizationRecord:
    """Rank of the event's target node plus the class predicted there."""
    ranked = rank_locations(window_probs)
    rank = int(np.nonzero(ranked == event.target_node)[0][0]) + 1
    target_evidence = 1.0 - window_probs[:, event.target_node, int(SystemState.NORMAL)]
    best_window = int(np.argmax(target_evidence))
    predicted = int(np.argmax(window_probs[best_window, event.target_node]))
    return LocalizationRecord(
        scenario=event.scenario,
        rank=rank,
        type_match=predicted == int(event.anomaly),
    )


def pr_at_k(records: list[LocalizationRecord], k: int, typed: bool = False) -> float:
    """Fraction of events whose true node ranks within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not records:
        raise ValueError("empty event set")
    hits = sum(1 for r in records if r.rank <= k and (not typed or r.type_match))
    return hits / len(records)


def map_score(records: list[LocalizationRecord], n_components: int, typed: bool = False) -> float:
    """Mean of PR@j over j = 1..n_components."""
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    return float(np.mean([pr_at_k(records, j, typed) for j in range(1, n_components + 1)]))


def scenario_accuracy(records: list[LocalizationRecord]) -> dict[str, float]:
    """Per-scenario fraction of events with the target at rank 1.

    Scenarios without any event are omitted from the result.
    """
    out: dict[str, float] = {}
    for scenario in Scenario:
        hits = [r for r in records if r.scenario is scenario]
        if hits:
            out[scenario.value] = sum(1 for r in hits if r.rank == 1) / len(hits)
    return out


def covered_windows(event: InjectionEvent, window_size: int, n_windows: int) -> list[int]:
    """Windows lying fully inside the event interval."""
    first = -(-event.start // window_size)  # ceil division
    last = event.end // window_size  # exclusive
    return [w for w in range(first, min(last, n_windows))]


def evaluate_fold_predictions(
    probs: np.ndarray,
    val_indices: np.ndarray,
    labels: np.ndarray,
    events: list[InjectionEvent],
    window_size: int,
    n_windows: int,
) -> dict:
    """Full metric report for one fold's validation predictions.

    probs: (len(val_indices), n_nodes, n_classes); labels: (n_windows,
    n_nodes) window labels; events: the fold's held-out injection events.
    """
    val_indices = np.asarray(val_indices)
    position = {int(w): i for i, w in enumerate(val_indices)}
    preds = probs.argmax(axis=-1)
    truth = labels[val_indices]
    identification = classification_report(preds.ravel(), truth.ravel())
    detection = classification_report(binarize(preds.ravel()), binarize(truth.ravel()))

    records = []
    for event in events:
        wins = covered_windows(event, window_size, n_windows)
        rows = [position[w] for w in wins if w in position]
        if not rows:
            raise ValueError(f"event at [{event.start}, {event.end}) has no validation window")
        records.append(localize_event(probs[rows], event))

    n_components = probs.shape[1]
    report = {
        "identification": identification,
        "detection": detection,
        "localization": {
            "n_events": len(records),
            "pr_at_k": [pr_at_k(records, k) for k in range(1, n_components + 1)],
            "map": map_score(records, n_components),
            "typed_pr_at_k": [pr_at_k(records, k, typed=True) for k in range(1, n_components + 1)],
            "typed_map": map_score(records, n_components, typed=True),
        },
        "scenario_accuracy": scenario_accuracy(records),
    }
    return report


def _collect(reports: list[dict], path: tuple[str, ...]) -> list[float]:
    vals = []
    for rep in reports:
        node = rep
        ok = True
        for key in path:
            if key not in node:
                ok = False
                break
            node = node[key]
        if ok:
            vals.append(node)
    return vals


def aggregate_reports(reports: list[dict]) -> dict:
    """Mean and standard deviation of every headline metric across reports."""
    scalar_paths = [
        ("identification", "accuracy"),
        ("identification", "macro_f1"),
        ("identification", "macro_precision"),
        ("identification", "macro_recall"),
        ("detection", "accuracy"),
        ("detection", "macro_f1"),
        ("localization", "map"),
        ("localization", "typed_map"),
    ]
    out: dict = {"n_reports": len(reports)}
    for path in scalar_paths:
        vals = _collect(reports, path)
        if vals:
            out["/".join(path)] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    for scenario in Scenario:
        vals = _collect(reports, ("scenario_accuracy", scenario.value))
        if vals:
            out[f"scenario_accuracy/{scenario.value}"] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals)),
                "n": len(vals),
            }
    curves = _collect(reports, ("localization", "pr_at_k"))
    if curves:
        arr = np.asarray(curves)
        out["localization/pr_at_k"] = {
            "mean": arr.mean(axis=0).tolist(),
            "std": arr.std(axis=0).tolist(),
        }
    typed = _collect(reports, ("localization", "typed_pr_at_k"))
    if typed:
        arr = np.asarray(typed)
        out["localization/typed_pr_at_k"] = {
            "mean": arr.mean(axis=0).tolist(),
            "std": arr.std(axis=0).tolist(),
        }
    return out
