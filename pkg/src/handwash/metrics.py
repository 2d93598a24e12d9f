"""Confusion matrix and precision/recall/F1 classification report.

Every metric is an exact rational in integer counts, rounded to float
once, so results do not depend on summation order.
Undefined ratios (0/0) are reported as 0.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from math import prod
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import ClassLabel, LabelRegistry
from .errors import EvalError

REPORT_VERSION = 1
METRICS = ("precision", "recall", "f1", "support")
AGGREGATES = (("micro_avg", "Micro avg"), ("macro_avg", "Macro avg"), ("weighted_avg", "Weighted avg"))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes, in registry order."""

    counts: np.ndarray
    registry: LabelRegistry

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        k = len(self.registry)
        if counts.shape != (k, k):
            raise EvalError(f"confusion matrix must be {k}x{k}, got {counts.shape}")
        if counts.min() < 0:
            raise EvalError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def __eq__(self, other):
        return (
            isinstance(other, ConfusionMatrix)
            and self.registry == other.registry
            and np.array_equal(self.counts, other.counts)
        )


def _label_id(label, registry: LabelRegistry) -> int:
    if isinstance(label, ClassLabel):
        if label not in registry:
            raise EvalError(f"label {label.name!r} not in registry")
        return label.id
    if isinstance(label, str):
        if label not in registry:
            raise EvalError(f"label {label!r} not in registry")
        return registry.by_name(label).id
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool) and 0 <= label < len(registry):
        return int(label)
    raise EvalError(f"label {label!r} not in registry")


def confusion(y_true: Sequence, y_pred: Sequence, registry: LabelRegistry | None = None) -> ConfusionMatrix:
    """Count (true, predicted) pairs. Labels may be ids, names or ClassLabels."""
    registry = registry or LabelRegistry()
    if len(y_true) != len(y_pred):
        raise EvalError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted labels")
    if len(y_true) == 0:
        raise EvalError("nothing to evaluate")
    k = len(registry)
    counts = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        counts[_label_id(t, registry), _label_id(p, registry)] += 1
    return ConfusionMatrix(counts, registry)


class MetricRow(NamedTuple):
    precision: float
    recall: float
    f1: float
    support: int

    def as_tuple(self):
        return (self.precision, self.recall, self.f1, self.support)


@dataclass(frozen=True)
class ClassReport:
    labels: tuple[str, ...]
    per_class: tuple[MetricRow, ...]
    micro_avg: MetricRow
    macro_avg: MetricRow
    weighted_avg: MetricRow

    def row(self, name: str) -> MetricRow:
        if name in self.labels:
            return self.per_class[self.labels.index(name)]
        for key, title in AGGREGATES:
            if name in (key, title):
                return getattr(self, key)
        raise KeyError(name)

    def rows(self) -> list[tuple[str, MetricRow]]:
        return list(zip(self.labels, self.per_class)) + [(title, getattr(self, key)) for key, title in AGGREGATES]

    def to_dict(self) -> dict:
        def d(r):
            return {"precision": r.precision, "recall": r.recall, "f1": r.f1, "support": r.support}

        return {
            "version": REPORT_VERSION,
            "labels": list(self.labels),
            "per_class": {name: d(r) for name, r in zip(self.labels, self.per_class)},
            **{key: d(getattr(self, key)) for key, _ in AGGREGATES},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ClassReport":
        if d.get("version") != REPORT_VERSION:
            raise EvalError(f"unsupported report version {d.get('version')!r}")

        def r(x):
            return MetricRow(float(x["precision"]), float(x["recall"]), float(x["f1"]), int(x["support"]))

        labels = tuple(d["labels"])
        return cls(
            labels,
            tuple(r(d["per_class"][n]) for n in labels),
            *(r(d[key]) for key, _ in AGGREGATES),
        )


def _averages(nums, dens, support, total: int) -> tuple[float, float]:
    """Exact macro and support-weighted means of ``n / d`` (0/0 taken as 0).

    Terms share one integer denominator and are divided once; int / int is
    correctly rounded, so each result is the float nearest the rational.
    """
    dens = [d or 1 for d in dens]
    common = prod(dens)
    terms = [n * (common // d) for n, d in zip(nums, dens)]
    weighted = sum([t * s for t, s in zip(terms, support)])
    return sum(terms) / (common * len(terms)), weighted / (common * total)


def report(cm: ConfusionMatrix) -> ClassReport:
    counts = cm.counts.tolist()
    support = [sum(row) for row in counts]
    total = sum(support)
    if total < 1:
        raise EvalError("confusion matrix is empty")
    tp = [row[c] for c, row in enumerate(counts)]
    predicted = [sum(col) for col in zip(*counts)]
    # 2PR/(P+R) reduces to 2TP/(2TP+FP+FN); zero when TP is zero
    f1_num = [2 * t for t in tp]
    f1_den = [p + s for p, s in zip(predicted, support)]

    per_class = tuple(
        MetricRow(t / p if p else 0.0, t / s if s else 0.0, 2 * t / d if d else 0.0, s)
        for t, p, s, d in zip(tp, predicted, support, f1_den)
    )
    # single-label: pooled FP and pooled FN both equal total - trace
    micro = sum(tp) / total
    (mp, wp), (mr, wr), (mf, wf) = (
        _averages(n, d, support, total) for n, d in ((tp, predicted), (tp, support), (f1_num, f1_den))
    )
    return ClassReport(
        cm.registry.names,
        per_class,
        MetricRow(micro, micro, micro, total),
        MetricRow(mp, mr, mf, total),
        MetricRow(wp, wr, wf, total),
    )


def classification_report(y_true, y_pred, registry: LabelRegistry | None = None) -> ClassReport:
    return report(confusion(y_true, y_pred, registry))


def round2(x: float) -> Decimal:
    """Half-up rounding of the shortest decimal form of ``x``."""
    return Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def render_text(rep: ClassReport) -> str:
    """Fixed-width table: per-class rows, then micro/macro/weighted averages."""
    names = [name for name, _ in rep.rows()]
    width = max(len(n) for n in names + ["Weighted avg"])
    header = f"{'':<{width}}  {'Precision':>9}  {'Recall':>9}  {'F1 score':>9}  {'Support':>9}"
    lines = [header]
    for i, (name, row) in enumerate(rep.rows()):
        if i == len(rep.labels):
            lines.append("")
        lines.append(
            f"{name:<{width}}  {round2(row.precision)!s:>9}  {round2(row.recall)!s:>9}  "
            f"{round2(row.f1)!s:>9}  {row.support:>9d}"
        )
    return "\n".join(lines) + "\n"


_ROW = re.compile(r"^(?P<name>\S.*?)\s+(?P<p>\d+\.\d{2})\s+(?P<r>\d+\.\d{2})\s+(?P<f>\d+\.\d{2})\s+(?P<s>\d+)\s*$")


def parse_text(text: str) -> dict[str, tuple[Decimal, Decimal, Decimal, int]]:
    """Read back the numeric cells of :func:`render_text` output, keyed by row name."""
    out = {}
    for line in text.splitlines()[1:]:
        m = _ROW.match(line)
        if m:
            out[m["name"]] = (Decimal(m["p"]), Decimal(m["r"]), Decimal(m["f"]), int(m["s"]))
    return out
