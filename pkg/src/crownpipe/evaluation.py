"""Confusion matrices and derived accuracies, including tree-type rollups.

The matrix rows are ground truth, columns are predictions. Tree classes can
be collapsed into coarser tree types: the broad-leaved/coniferous deciduous
and evergreen groups, with the three evergreen-conifer species counted as
one type. The catch-all "others" class is excluded from type-level rows but
predictions falling into it still count against the scored rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EvaluationError(Exception):
    pass


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray  # (k, k) int64; counts[i][j]: true class i predicted as j

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if self.counts.shape != (k, k):
            raise EvaluationError(
                f"counts shape {self.counts.shape} does not match {k} classes")
        if (self.counts < 0).any():
            raise EvaluationError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def confusion(truth, predictions, classes) -> ConfusionMatrix:
    """Tally (truth, prediction) pairs into a square count matrix."""
    truth = list(truth)
    predictions = list(predictions)
    if len(truth) != len(predictions):
        raise EvaluationError(
            f"{len(truth)} truth labels vs {len(predictions)} predictions")
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, predictions):
        if t not in index:
            raise EvaluationError(f"unknown truth label {t!r}")
        if p not in index:
            raise EvaluationError(f"unknown predicted label {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes=classes, counts=counts)


def per_class_accuracy(m: ConfusionMatrix) -> list[float | None]:
    """Diagonal over row total per class; None for classes with no samples."""
    out = []
    for i in range(len(m.classes)):
        row = m.counts[i].sum()
        out.append(float(m.counts[i, i] / row) if row else None)
    return out


def overall_accuracy(m: ConfusionMatrix) -> float:
    if m.total == 0:
        raise EvaluationError("empty confusion matrix has no accuracy")
    return float(np.trace(m.counts) / m.total)


# ---------------------------------------------------------------------------
# Tree-type aggregation

TYPE_NAMES = {
    1: "deciduous broad-leaved",
    2: "deciduous coniferous",
    3: "evergreen broad-leaved",
    4: "evergreen coniferous",
}

EXCLUDED_LABEL = "excluded"


@dataclass(frozen=True)
class TypeMapping:
    """Tree class id -> tree type id; unmapped classes are excluded from scoring."""

    groups: dict = field(default_factory=lambda: {1: 1, 2: 2, 3: 3, 4: 4, 5: 4, 6: 4})

    def type_ids(self) -> list[int]:
        return sorted(set(self.groups.values()))


def aggregate_types(m: ConfusionMatrix, mapping: TypeMapping | None = None) -> ConfusionMatrix:
    """Collapse a class-level matrix to tree types.

    Rows of excluded classes are dropped; predictions into excluded classes
    are kept as a residual error column (with an all-zero matching row, so
    the result stays square and its overall accuracy is within-type correct
    over scored samples).
    """
    mapping = mapping or TypeMapping()
    type_ids = mapping.type_ids()
    out_classes = type_ids + [EXCLUDED_LABEL]
    t_index = {t: i for i, t in enumerate(out_classes)}
    counts = np.zeros((len(out_classes), len(out_classes)), dtype=np.int64)
    for i, true_cls in enumerate(m.classes):
        if true_cls not in mapping.groups:
            continue
        ti = t_index[mapping.groups[true_cls]]
        for j, pred_cls in enumerate(m.classes):
            tj = t_index.get(mapping.groups.get(pred_cls, EXCLUDED_LABEL))
            counts[ti, tj] += m.counts[i, j]
    return ConfusionMatrix(classes=out_classes, counts=counts)


# ---------------------------------------------------------------------------
# Reports

def report_dict(m: ConfusionMatrix, mapping: TypeMapping | None = None) -> dict:
    """Machine-readable report: counts and full-precision accuracies."""
    out = {
        "classes": list(m.classes),
        "counts": m.counts.tolist(),
        "per_class_accuracy": per_class_accuracy(m),
        "overall_accuracy": overall_accuracy(m),
    }
    mapping = mapping or TypeMapping()
    if all(c in mapping.groups or c == 7 for c in m.classes):
        t = aggregate_types(m, mapping)
        out["type_level"] = {
            "classes": [TYPE_NAMES.get(c, str(c)) for c in t.classes],
            "counts": t.counts.tolist(),
            "overall_accuracy": overall_accuracy(t) if t.total else None,
        }
    return out


def format_report(m: ConfusionMatrix, mapping: TypeMapping | None = None) -> str:
    """Plain-text table: truth rows, prediction columns, accuracy column."""
    width = max(6, *(len(str(c)) for c in m.classes))
    head = " " * width + "".join(f"{str(c):>{width}}" for c in m.classes)
    lines = [head + f"{'acc':>10}"]
    accs = per_class_accuracy(m)
    for i, cls in enumerate(m.classes):
        row = f"{str(cls):>{width}}" + "".join(f"{v:>{width}}" for v in m.counts[i])
        acc = f"{accs[i] * 100:.2f}%" if accs[i] is not None else "-"
        lines.append(row + f"{acc:>10}")
    lines.append(f"overall: {overall_accuracy(m) * 100:.1f}%")
    mapping = mapping or TypeMapping()
    if all(c in mapping.groups or c == 7 for c in m.classes):
        t = aggregate_types(m, mapping)
        if t.total:
            lines.append(f"tree-type level: {overall_accuracy(t) * 100:.1f}% "
                         f"({int(np.trace(t.counts))}/{t.total})")
    return "\n".join(lines)
