"""Score threshold selection and the model-performance metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, UndefinedMetricError
from .stats import RngSpec, bootstrap_values, percentile_ci


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    target_sensitivity: float
    achieved_validation_sensitivity: float

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "target_sensitivity": self.target_sensitivity,
            "achieved_validation_sensitivity": self.achieved_validation_sensitivity,
        }


def choose_threshold(positive_validation_scores, target: float = 0.95) -> ThresholdResult:
    """Largest candidate t such that at least ``target`` of the positives score > t.

    Candidates are 0 and the observed positive scores, so a valid threshold
    always exists.
    """
    s = np.sort(np.asarray(positive_validation_scores, dtype=float))
    if s.size == 0:
        raise InputError("choose_threshold() needs at least one positive score")
    if not 0.0 < target <= 1.0:
        raise InputError("target sensitivity must lie in (0, 1]")
    candidates = np.unique(np.concatenate([[0.0], s]))
    above = s.size - np.searchsorted(s, candidates, side="right")
    # compare counts rather than fractions to avoid rounding at the boundary
    ok = np.nonzero(above >= target * s.size - 1e-9 * s.size)[0]
    if ok.size == 0:
        # only reachable when scores of 0 or below make even t=0 too strict
        raise InputError(f"no candidate threshold reaches sensitivity {target}; "
                         f"{int(np.sum(s <= 0))} positive scores are <= 0")
    best = int(ok.max())
    return ThresholdResult(float(candidates[best]), float(target), float(above[best] / s.size))


def classify(scores, threshold: float) -> np.ndarray:
    return np.asarray(scores, dtype=float) > threshold


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def confusion(flags, labels) -> ConfusionCounts:
    f = np.asarray(flags, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    if f.shape != y.shape:
        raise InputError("flags and labels differ in length")
    return ConfusionCounts(
        tp=int(np.sum(f & y)), fp=int(np.sum(f & ~y)), tn=int(np.sum(~f & ~y)), fn=int(np.sum(~f & y))
    )


def sensitivity(counts: ConfusionCounts) -> float:
    if counts.tp + counts.fn == 0:
        raise UndefinedMetricError("sensitivity undefined without positives")
    return counts.tp / (counts.tp + counts.fn)


def specificity(counts: ConfusionCounts) -> float:
    if counts.tn + counts.fp == 0:
        raise UndefinedMetricError("specificity undefined without negatives")
    return counts.tn / (counts.tn + counts.fp)


def efficiency_gain(total_evaluated: int, flagged_positive: int) -> float:
    """Fraction of evaluated patients spared manual review."""
    if total_evaluated <= 0:
        raise UndefinedMetricError("efficiency gain undefined for an empty population")
    if not 0 <= flagged_positive <= total_evaluated:
        raise InputError("flagged count must lie in [0, total]")
    return (total_evaluated - flagged_positive) / total_evaluated


def _average_ranks(x: np.ndarray) -> np.ndarray:
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    mid = ends - (counts - 1) / 2.0
    return mid[inv]


def roc_auc(scores, labels):
    """Tie-aware AUC (Mann-Whitney) and the ROC staircase.

    Points are emitted after each distinct score, descending, starting at
    (0, 0) and ending at (1, 1).
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise InputError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = _average_ranks(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    auc = float(u / (n_pos * n_neg))

    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    last_of_run = np.append(s_sorted[1:] != s_sorted[:-1], True)
    fpr = np.concatenate([[0.0], fp[last_of_run] / n_neg])
    tpr = np.concatenate([[0.0], tp[last_of_run] / n_pos])
    return auc, list(zip(fpr.tolist(), tpr.tolist()))


def auc_only(scores, labels) -> float:
    return roc_auc(scores, labels)[0]


def metric_ci(metric, test_records, n_boot: int = 1000, seed: int = 0, level: float = 0.95,
              name: str = "metric", workers: int = 1, stream: int = 0):
    """Percentile bootstrap CI of ``metric`` over resamples of the test set.

    ``test_records`` is a 2-D array (one row per record) or a tuple of aligned
    1-D columns; ``metric`` receives the resampled columns as separate
    arguments.
    """
    if isinstance(test_records, tuple):
        cols = [np.asarray(c) for c in test_records]
        if len({c.shape[0] for c in cols}) != 1:
            raise InputError("record columns must have equal length")
        table = np.column_stack([c.astype(float) for c in cols])
        kinds = [c.dtype for c in cols]

        def stat(rows):
            return metric(*(rows[:, j].astype(k) for j, k in enumerate(kinds)))
    else:
        table = np.asarray(test_records)

        def stat(rows):
            return metric(rows)

    if table.shape[0] == 0:
        raise InputError("metric_ci() needs at least one record")
    values = bootstrap_values(stat, table, n_boot, RngSpec(seed, stream), workers=workers)
    return percentile_ci(values, level, name)


@dataclass
class EvalReport:
    auc: float
    auc_ci: tuple
    sensitivity: float
    sensitivity_ci: tuple
    specificity: float
    specificity_ci: tuple
    efficiency_gain: float
    efficiency_gain_ci: tuple
    counts: ConfusionCounts
    threshold: float
    roc_points: list = field(default_factory=list)

    def to_dict(self):
        return {
            "auc": {"value": self.auc, "ci": list(self.auc_ci)},
            "sensitivity": {"value": self.sensitivity, "ci": list(self.sensitivity_ci)},
            "specificity": {"value": self.specificity, "ci": list(self.specificity_ci)},
            "efficiency_gain": {"value": self.efficiency_gain, "ci": list(self.efficiency_gain_ci)},
            "threshold": self.threshold,
            "confusion": {"tp": self.counts.tp, "fp": self.counts.fp, "tn": self.counts.tn, "fn": self.counts.fn},
            "n_evaluated": self.counts.total,
            "n_flagged": self.counts.tp + self.counts.fp,
        }

    def roc_csv(self) -> str:
        return "fpr,tpr\n" + "".join(f"{a:.10g},{b:.10g}\n" for a, b in self.roc_points)


def evaluate(scores, labels, threshold: float, n_boot: int = 1000, seed: int = 0, workers: int = 1) -> EvalReport:
    """Test-set performance at ``threshold`` with bootstrap CIs (joint resampling)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    flags = classify(s, threshold)
    counts = confusion(flags, y)
    auc, points = roc_auc(s, y)
    records = (s, y)

    def sens(sc, lab):
        return sensitivity(confusion(sc > threshold, lab))

    def spec(sc, lab):
        return specificity(confusion(sc > threshold, lab))

    def gain(sc, lab):
        return efficiency_gain(sc.size, int(np.sum(sc > threshold)))

    # one shared stream: every metric sees the same resamples
    kw = dict(n_boot=n_boot, seed=seed, workers=workers)
    return EvalReport(
        auc=auc,
        auc_ci=metric_ci(auc_only, records, name="auc", **kw),
        sensitivity=sensitivity(counts),
        sensitivity_ci=metric_ci(sens, records, name="sensitivity", **kw),
        specificity=specificity(counts),
        specificity_ci=metric_ci(spec, records, name="specificity", **kw),
        efficiency_gain=efficiency_gain(counts.total, counts.tp + counts.fp),
        efficiency_gain_ci=metric_ci(gain, records, name="efficiency_gain", **kw),
        counts=counts,
        threshold=float(threshold),
        roc_points=points,
    )
