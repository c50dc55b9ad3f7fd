"""Precision-recall curves, multi-run summaries and comparison tables.

The area is the step-wise (average precision) sum over distinct score
thresholds, never a trapezoid: linear interpolation between PR points
overstates the area.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

AUC_METHOD = "step-wise average precision over distinct thresholds"


@dataclass
class PrCurve:
    thresholds: np.ndarray   # distinct scores, descending
    precision: np.ndarray
    recall: np.ndarray
    auc: float
    prevalence: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "precision", "recall"])
            for row in zip(self.thresholds, self.precision, self.recall):
                w.writerow([repr(float(v)) for v in row])


def pr_curve(scores, labels) -> PrCurve:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be non-empty and of equal length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("no positive labels: precision-recall is undefined")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    tp_cum = np.cumsum(labels[order])
    # last index of every run of tied scores
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = tp_cum[last]
    n_pred = last + 1
    precision = tp / n_pred
    recall = tp / n_pos
    d_tp = np.diff(np.r_[0, tp])
    # steps at precision exactly 1 are summed as integers so that a perfect
    # ranking gives exactly 1.0; the rest contribute (dTP / P) * precision
    exact = precision == 1.0
    auc = int(d_tp[exact].sum()) / n_pos + math.fsum((d_tp[~exact] / n_pos) * precision[~exact])
    return PrCurve(s[last], precision, recall, float(min(auc, 1.0)), n_pos / labels.size)


def pr_auc(labels, scores) -> float:
    return pr_curve(scores, labels).auc


@dataclass
class RunSummary:
    name: str
    mean_auc: float
    std_auc: float
    n_runs: int
    values: tuple = ()

    def fmt(self, digits: int = 3) -> str:
        return f"{self.mean_auc:.{digits}f} ± {self.std_auc:.{digits}f}"


def summarize(name: str, values: Sequence[float]) -> RunSummary:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("at least one run is required")
    # population standard deviation (ddof=0)
    return RunSummary(name, float(v.mean()), float(v.std()), int(v.size), tuple(v.tolist()))


def multi_run(name: str, experiment: Callable[[int], float], seeds: Iterable[int]) -> RunSummary:
    """Run ``experiment(seed)`` for each seed (in seed order) and summarise."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    return summarize(name, [experiment(s) for s in seeds])


def relative_increase(without: float, with_: float) -> float:
    return (with_ - without) / without


def fmt_increase(without: float, with_: float) -> str:
    return f"{100.0 * relative_increase(without, with_):+.1f}%"


@dataclass
class ComparisonRow:
    feature_set: str
    without: RunSummary
    with_hmm: RunSummary

    @property
    def increase(self) -> str:
        return fmt_increase(self.without.mean_auc, self.with_hmm.mean_auc)


def comparison_table(results: dict[str, RunSummary], hmm_suffix: str = "+HMM") -> list[ComparisonRow]:
    """Pair every feature set with its ``+HMM`` counterpart, in input order."""
    rows = []
    for name, summary in results.items():
        if name.endswith(hmm_suffix):
            continue
        other = results.get(name + hmm_suffix)
        if other is not None:
            rows.append(ComparisonRow(name, summary, other))
    return rows


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature_set", "auc_without_hmm", "std_without_hmm", "auc_with_hmm", "std_with_hmm",
                "increase", "n_runs"])
    for r in rows:
        w.writerow([r.feature_set, f"{r.without.mean_auc:.6f}", f"{r.without.std_auc:.6f}",
                    f"{r.with_hmm.mean_auc:.6f}", f"{r.with_hmm.std_auc:.6f}", r.increase, r.with_hmm.n_runs])
    return buf.getvalue()


def comparison_text(rows: Sequence[ComparisonRow], digits: int = 3) -> str:
    header = ("Feature set", "no HMM-features", "HMM-features", "increase through HMMs")
    body = [(r.feature_set, r.without.fmt(digits), r.with_hmm.fmt(digits), r.increase) for r in rows]
    return aligned([header] + body)


def aligned(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
