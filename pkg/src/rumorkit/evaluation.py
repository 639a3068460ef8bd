"""Classification metrics, whole-corpus evaluation, and early-detection curves.

Zero-division convention: a precision, recall, or F1 whose denominator is
zero scores 0. Macro-F1 is the unweighted mean over both classes, so a
degenerate predictor that answers one class everywhere caps at 0.5 on a
balanced corpus.

Early detection replays the whole pipeline on timeline prefixes: posts are
filtered to a checkpoint (post count or elapsed seconds), survivors are
re-parented to their nearest kept ancestor, and ranking plus encoding run
from scratch on the reduced thread.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .losses import CLASSES, class_scores
from .trees import Event, Strategy, filter_by_checkpoint


@dataclass(frozen=True)
class ConfusionCounts:
    """counts[i][j]: events of true class i predicted as class j."""

    counts: tuple[tuple[int, ...], ...]

    @classmethod
    def from_pairs(cls, true_idx: Sequence[int], pred_idx: Sequence[int]) -> "ConfusionCounts":
        n = len(CLASSES)
        grid = [[0] * n for _ in range(n)]
        for t, p in zip(true_idx, pred_idx):
            grid[t][p] += 1
        return cls(tuple(tuple(row) for row in grid))

    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    macro_f1: float
    per_class: tuple[ClassMetrics, ...]
    confusion: ConfusionCounts
    n_events: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {
                CLASSES[i]: asdict(m) for i, m in enumerate(self.per_class)
            },
            "confusion": [list(row) for row in self.confusion.counts],
            "n_events": self.n_events,
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def report_from_confusion(confusion: ConfusionCounts) -> MetricReport:
    grid = np.asarray(confusion.counts, dtype=np.int64)
    n = confusion.total()
    per_class = []
    for c in range(len(CLASSES)):
        tp = int(grid[c, c])
        fp = int(grid[:, c].sum() - tp)
        fn = int(grid[c, :].sum() - tp)
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        per_class.append(ClassMetrics(precision, recall, f1))
    accuracy = _safe_div(float(np.trace(grid)), n)
    macro = float(np.mean([m.f1 for m in per_class]))
    return MetricReport(accuracy, macro, tuple(per_class), confusion, n)


def macro_f1(true_idx: Sequence[int], pred_idx: Sequence[int]) -> float:
    return report_from_confusion(ConfusionCounts.from_pairs(true_idx, pred_idx)).macro_f1


def label_index(label: str) -> int:
    return CLASSES.index(label)


def predict_events(model, prototype_vectors: np.ndarray, events: Sequence[Event],
                   strategy: Strategy = Strategy.CHRONOLOGICAL,
                   include_responses: bool = True, use_depth_embeddings: bool = True,
                   use_relation_bias: bool = True) -> list[tuple[str, int, int]]:
    """(event id, true class, predicted class) for each event."""
    prototype_vectors = getattr(prototype_vectors, "data", prototype_vectors)
    out = []
    for event in events:
        hidden = model.encode(event, strategy, include_responses,
                              use_depth_embeddings, use_relation_bias)
        pred = int(np.argmax(class_scores(hidden, prototype_vectors)))
        out.append((event.id, label_index(event.label), pred))
    return out


def evaluate(model, prototype_vectors: np.ndarray, events: Sequence[Event],
             strategy: Strategy = Strategy.CHRONOLOGICAL, include_responses: bool = True,
             use_depth_embeddings: bool = True, use_relation_bias: bool = True) -> MetricReport:
    """Rank, encode, and score every event; aggregate into one report."""
    triples = predict_events(model, prototype_vectors, events, strategy,
                             include_responses, use_depth_embeddings, use_relation_bias)
    confusion = ConfusionCounts.from_pairs([t for _, t, _ in triples], [p for _, _, p in triples])
    return report_from_confusion(confusion)


@dataclass(frozen=True)
class CheckpointPoint:
    value: float
    report: MetricReport


@dataclass(frozen=True)
class CheckpointSeries:
    kind: str  # "post-count" or "elapsed-seconds"
    points: tuple[CheckpointPoint, ...]


def early_detection_curve(model, prototype_vectors: np.ndarray, events: Sequence[Event],
                          kind: str, values: Sequence[float],
                          strategy: Strategy = Strategy.CHRONOLOGICAL,
                          include_responses: bool = True, use_depth_embeddings: bool = True,
                          use_relation_bias: bool = True) -> CheckpointSeries:
    """Evaluate on growing timeline prefixes; each point reruns the pipeline."""
    points = []
    for value in values:
        filtered = [filter_by_checkpoint(event, kind, value) for event in events]
        report = evaluate(model, prototype_vectors, filtered, strategy,
                          include_responses, use_depth_embeddings, use_relation_bias)
        points.append(CheckpointPoint(float(value), report))
    return CheckpointSeries(kind, tuple(points))


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def write_report_json(path, report: MetricReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def write_report_csv(path, report: MetricReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["accuracy", f"{report.accuracy:.6f}"])
        writer.writerow(["macro_f1", f"{report.macro_f1:.6f}"])
        for i, m in enumerate(report.per_class):
            writer.writerow([f"precision_{CLASSES[i]}", f"{m.precision:.6f}"])
            writer.writerow([f"recall_{CLASSES[i]}", f"{m.recall:.6f}"])
            writer.writerow([f"f1_{CLASSES[i]}", f"{m.f1:.6f}"])
        writer.writerow(["n_events", report.n_events])


def write_curve_csv(path, series: CheckpointSeries) -> None:
    """Two columns: checkpoint value, accuracy at that prefix."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([series.kind, "accuracy"])
        for point in series.points:
            writer.writerow([point.value, f"{point.report.accuracy:.6f}"])


def write_curve_json(path, series: CheckpointSeries) -> None:
    payload = {
        "kind": series.kind,
        "points": [{"value": p.value, **p.report.to_dict()} for p in series.points],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
