"""Per-class and binary precision/recall/F1 over (image, cell) pairs.

The counting unit is a (cell, class) pair: TP when both ground truth and the
decoded prediction carry the class, FP when only the prediction does, FN
when only the ground truth does. The background bit never enters the
per-class table; it drives the binary risk/road block instead. The "All" row
is the unweighted macro mean of the per-class columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decode import RISK, ROAD, CellPrediction, to_binary, labels_to_predictions
from .labelkit import CellLabelVector

__all__ = [
    "ClassCounts",
    "ClassMetrics",
    "MetricsReport",
    "MetricCounts",
    "precision_recall_f1",
    "accumulate",
    "finalize",
    "binary_metrics",
]


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass(frozen=True)
class ClassMetrics:
    name: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Zero-denominator cases report 0 rather than NaN."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class MetricCounts:
    """Running (cell, class) tallies; a commutative monoid over images."""

    class_names: tuple[str, ...]
    per_class: list[ClassCounts] = field(default_factory=list)
    binary: dict[str, ClassCounts] = field(default_factory=dict)
    n_images: int = 0

    def __post_init__(self):
        if not self.per_class:
            self.per_class = [ClassCounts() for _ in self.class_names]
        if not self.binary:
            self.binary = {RISK: ClassCounts(), ROAD: ClassCounts()}

    def merge(self, other: "MetricCounts") -> "MetricCounts":
        if other.class_names != self.class_names:
            raise ValueError("cannot merge counts for different class lists")
        for mine, theirs in zip(self.per_class, other.per_class):
            mine.tp += theirs.tp
            mine.fp += theirs.fp
            mine.fn += theirs.fn
        for key in (RISK, ROAD):
            self.binary[key].tp += other.binary[key].tp
            self.binary[key].fp += other.binary[key].fp
            self.binary[key].fn += other.binary[key].fn
        self.n_images += other.n_images
        return self


def accumulate(counts: MetricCounts, gt: CellLabelVector,
               preds: list[CellPrediction]) -> MetricCounts:
    """Add one image's (cell, class) tallies into the running counts."""
    m = len(counts.class_names)
    if gt.n_classes != m:
        raise ValueError(f"ground truth has M={gt.n_classes}, counts expect M={m}")
    if len(preds) != gt.n_cells:
        raise ValueError(f"{len(preds)} predictions for {gt.n_cells} cells")
    for i, pred in enumerate(preds):
        gt_bits = gt.bits[i, :m]
        decided = set(pred.decided_classes)
        for k in range(m):
            has_gt = bool(gt_bits[k])
            has_pred = k in decided
            if has_gt and has_pred:
                counts.per_class[k].tp += 1
            elif has_pred:
                counts.per_class[k].fp += 1
            elif has_gt:
                counts.per_class[k].fn += 1
    gt_flags = to_binary(labels_to_predictions(gt))
    pred_flags = to_binary(preds)
    for key in (RISK, ROAD):
        c = counts.binary[key]
        for g, p in zip(gt_flags, pred_flags):
            if g == key and p == key:
                c.tp += 1
            elif p == key:
                c.fp += 1
            elif g == key:
                c.fn += 1
    counts.n_images += 1
    return counts


@dataclass(frozen=True)
class MetricsReport:
    per_class: tuple[ClassMetrics, ...]
    all_row: ClassMetrics
    binary: tuple[ClassMetrics, ...]
    binary_all: ClassMetrics
    n_images: int

    def to_text(self) -> str:
        """Aligned plain-text table with per-class counts for audit."""
        rows = [*self.per_class, self.all_row, "", *self.binary, self.binary_all]
        width = max(len(r.name) for r in rows if r) + 2
        head = f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}{'tp':>9}{'fp':>9}{'fn':>9}"
        lines = [head, "-" * len(head)]
        for r in rows:
            if r == "":
                lines.append("-" * len(head))
                continue
            lines.append(
                f"{r.name:<{width}}{r.precision:>10.4f}{r.recall:>10.4f}{r.f1:>10.4f}"
                f"{r.tp:>9}{r.fp:>9}{r.fn:>9}"
            )
        lines.append(f"images: {self.n_images}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        def row(r: ClassMetrics) -> dict:
            return {
                "name": r.name,
                "precision": r.precision,
                "recall": r.recall,
                "f1": r.f1,
                "tp": r.tp,
                "fp": r.fp,
                "fn": r.fn,
            }

        return {
            "per_class": [row(r) for r in self.per_class],
            "all": row(self.all_row),
            "binary": [row(r) for r in self.binary],
            "binary_all": row(self.binary_all),
            "n_images": self.n_images,
        }

    def to_csv(self) -> str:
        lines = ["scope,class,precision,recall,f1,tp,fp,fn"]
        for r in self.per_class:
            lines.append(f"class,{r.name},{r.precision:.6f},{r.recall:.6f},{r.f1:.6f},{r.tp},{r.fp},{r.fn}")
        r = self.all_row
        lines.append(f"class,All,{r.precision:.6f},{r.recall:.6f},{r.f1:.6f},{r.tp},{r.fp},{r.fn}")
        for r in self.binary:
            lines.append(f"binary,{r.name},{r.precision:.6f},{r.recall:.6f},{r.f1:.6f},{r.tp},{r.fp},{r.fn}")
        r = self.binary_all
        lines.append(f"binary,All,{r.precision:.6f},{r.recall:.6f},{r.f1:.6f},{r.tp},{r.fp},{r.fn}")
        return "\n".join(lines) + "\n"


def _macro(name: str, rows: list[ClassMetrics]) -> ClassMetrics:
    """Unweighted mean of each column; counts summed for reference."""
    n = len(rows)
    return ClassMetrics(
        name=name,
        tp=sum(r.tp for r in rows),
        fp=sum(r.fp for r in rows),
        fn=sum(r.fn for r in rows),
        precision=sum(r.precision for r in rows) / n,
        recall=sum(r.recall for r in rows) / n,
        f1=sum(r.f1 for r in rows) / n,
    )


def finalize(counts: MetricCounts) -> MetricsReport:
    """Per-class P/R/F1 plus the macro "All" rows for both views."""
    per_class = []
    for name, c in zip(counts.class_names, counts.per_class):
        p, r, f = precision_recall_f1(c.tp, c.fp, c.fn)
        per_class.append(ClassMetrics(name, c.tp, c.fp, c.fn, p, r, f))
    binary = []
    for key, label in ((RISK, "Risk"), (ROAD, "Road")):
        c = counts.binary[key]
        p, r, f = precision_recall_f1(c.tp, c.fp, c.fn)
        binary.append(ClassMetrics(label, c.tp, c.fp, c.fn, p, r, f))
    return MetricsReport(
        per_class=tuple(per_class),
        all_row=_macro("All", per_class),
        binary=tuple(binary),
        binary_all=_macro("All", binary),
        n_images=counts.n_images,
    )


def binary_metrics(gt_list: list[CellLabelVector],
                   preds_list: list[list[CellPrediction]],
                   class_names) -> tuple[ClassMetrics, ClassMetrics]:
    """Risk/Road P/R/F1 over a whole evaluation set."""
    counts = MetricCounts(class_names=tuple(class_names))
    for gt, preds in zip(gt_list, preds_list):
        accumulate(counts, gt, preds)
    report = finalize(counts)
    return report.binary[0], report.binary[1]
