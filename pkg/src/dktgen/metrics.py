"""Classification metrics for next-answer predictions and cross-seed aggregation.

All metric values are percentages. Predicted-correct means ``probability >= threshold``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

METRICS = ("accuracy", "auc", "precision", "recall")
HEADERS = {"accuracy": "Accuracy (%)", "auc": "AUC (%)", "precision": "Precision (%)", "recall": "Recall (%)"}


class EvaluationError(ValueError):
    pass


class UndefinedMetricWarning(UserWarning):
    """A ratio metric had a zero denominator and was reported as 0."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(labels, probs, threshold: float = 0.5) -> ConfusionCounts:
    labels = np.asarray(labels).astype(bool)
    probs = np.asarray(probs, dtype=np.float64)
    if labels.size == 0:
        raise EvaluationError("no prediction records")
    if not 0.0 < threshold < 1.0:
        raise EvaluationError(f"threshold must lie in (0, 1), got {threshold}")
    pred = probs >= threshold
    return ConfusionCounts(
        tp=int(np.sum(pred & labels)),
        fp=int(np.sum(pred & ~labels)),
        fn=int(np.sum(~pred & labels)),
        tn=int(np.sum(~pred & ~labels)),
    )


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise EvaluationError("accuracy of an empty confusion table")
    return 100.0 * (c.tp + c.tn) / c.total


def _ratio(num: int, den: int, name: str) -> float:
    if den == 0:
        warnings.warn(f"{name} is undefined (zero denominator); reporting 0", UndefinedMetricWarning)
        return 0.0
    return 100.0 * num / den


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp, "precision")


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn, "recall")


def auc(labels, scores) -> float:
    """Mann-Whitney AUC with average ranks for tied scores, in percent."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0:
        raise EvaluationError("AUC needs at least one positive (correct) label")
    if n_neg == 0:
        raise EvaluationError("AUC needs at least one negative (incorrect) label")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return 100.0 * u / (n_pos * n_neg)


@dataclass
class RunMetrics:
    """The four metrics of one evaluation, plus names of metrics defined as 0."""

    accuracy: float
    auc: float
    precision: float
    recall: float
    undefined: list[str] = field(default_factory=list)

    def values(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def evaluate(labels, probs, threshold: float = 0.5) -> RunMetrics:
    c = confusion(labels, probs, threshold)
    undefined = []
    if c.tp + c.fp == 0:
        undefined.append("precision")
    if c.tp + c.fn == 0:
        undefined.append("recall")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        return RunMetrics(
            accuracy=accuracy(c),
            auc=auc(labels, probs),
            precision=precision(c),
            recall=recall(c),
            undefined=undefined,
        )


@dataclass
class MetricSummary:
    mean: float
    std: float
    values: list[float]

    def cell(self) -> str:
        return format_cell(self.mean, self.std)


@dataclass
class MetricsReport:
    accuracy: MetricSummary
    auc: MetricSummary
    precision: MetricSummary
    recall: MetricSummary
    threshold: float = 0.5

    def summaries(self) -> dict[str, MetricSummary]:
        return {m: getattr(self, m) for m in METRICS}

    def to_dict(self) -> dict:
        out = {
            m: {"mean": s.mean, "std": s.std, "values": list(s.values)}
            for m, s in self.summaries().items()
        }
        out["threshold"] = self.threshold
        out["num_runs"] = len(self.accuracy.values)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            **{m: MetricSummary(d[m]["mean"], d[m]["std"], list(d[m]["values"])) for m in METRICS},
            threshold=d.get("threshold", 0.5),
        )


def aggregate_runs(runs: Sequence[RunMetrics] | dict[str, Sequence[float]], threshold: float = 0.5) -> MetricsReport:
    """Mean and sample (n-1) standard deviation per metric.

    Accepts a list of per-run metric sets or a mapping from metric name to per-run
    values. A single run gets ``std = nan``.
    """
    if isinstance(runs, dict):
        per_metric = {m: [float(v) for v in runs[m]] for m in METRICS}
    else:
        per_metric = {m: [float(getattr(r, m)) for r in runs] for m in METRICS}
    counts = {len(v) for v in per_metric.values()}
    if len(counts) != 1:
        raise EvaluationError(f"metrics have differing run counts: { {m: len(v) for m, v in per_metric.items()} }")
    n = counts.pop()
    if n == 0:
        raise EvaluationError("nothing to aggregate")
    summaries = {}
    for m, vals in per_metric.items():
        arr = np.asarray(vals)
        std = float(arr.std(ddof=1)) if n > 1 else math.nan
        summaries[m] = MetricSummary(float(arr.mean()), std, vals)
    return MetricsReport(**summaries, threshold=threshold)


def format_cell(mean: float, std: float) -> str:
    if math.isnan(std):
        return f"{mean:.2f}±n/a"
    return f"{mean:.2f}±{std:.2f}"


def render_table(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    """Aligned text table with one row per model."""
    header = ["Model"] + [HEADERS[m] for m in METRICS]
    body = [[name] + [rep.summaries()[m].cell() for m in METRICS] for name, rep in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
