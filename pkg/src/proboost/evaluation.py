"""Macro one-vs-all metrics, AUC, ROI and run statistics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata

from .errors import DegenerateDifferences, InvalidParameter

METRIC_NAMES = ("acc", "sen", "spe", "ppv", "npv", "auc")
Z_95 = 1.96


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    acc: float
    sen: float
    spe: float
    ppv: float
    npv: float
    auc: float | None = None
    per_class: dict = field(default_factory=dict)
    undefined: list = field(default_factory=list)  # (metric, class) pairs that were 0/0

    def as_dict(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass(frozen=True)
class RunSummary:
    mu: float
    sigma: float
    min: float
    max: float
    ci_low: float
    ci_high: float
    n: int


def confusion_ova(labels_true, labels_pred, n_classes) -> ConfusionCounts:
    y = np.asarray(labels_true, dtype=np.int64)
    p = np.asarray(labels_pred, dtype=np.int64)
    classes = np.arange(n_classes)[:, None]
    is_true, is_pred = y[None, :] == classes, p[None, :] == classes
    tp = np.sum(is_true & is_pred, axis=1)
    fp = np.sum(~is_true & is_pred, axis=1)
    fn = np.sum(is_true & ~is_pred, axis=1)
    tn = y.size - tp - fp - fn
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num, den, name, undefined):
    out = np.zeros(num.shape, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    undefined.extend((name, int(c)) for c in np.flatnonzero(~ok))
    return out


def macro_metrics(labels_true, labels_pred, n_classes) -> MetricsReport:
    """Per-class OvA Acc/Sen/Spe/PPV/NPV and their unweighted class means.

    A 0/0 ratio counts as 0 and is listed in ``report.undefined``.
    """
    if n_classes < 2:
        raise InvalidParameter("at least two classes are required")
    y = np.asarray(labels_true)
    if y.size == 0 or y.shape != np.shape(labels_pred):
        raise InvalidParameter("label lists must be non-empty and aligned")
    c = confusion_ova(labels_true, labels_pred, n_classes)
    undefined = []
    per = {
        "acc": (c.tp + c.tn) / y.size,
        "sen": _ratio(c.tp, c.tp + c.fn, "sen", undefined),
        "spe": _ratio(c.tn, c.tn + c.fp, "spe", undefined),
        "ppv": _ratio(c.tp, c.tp + c.fp, "ppv", undefined),
        "npv": _ratio(c.tn, c.tn + c.fn, "npv", undefined),
    }
    macro = {k: float(np.mean(v)) for k, v in per.items()}
    return MetricsReport(per_class=per, undefined=undefined, **macro)


def auc_per_class(scores, labels_true):
    """Mann-Whitney AUC of column ``c`` for class ``c`` vs rest (ties count 1/2).

    Classes with no positive or no negative sample get ``nan``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels_true, dtype=np.int64)
    out = np.full(scores.shape[1], np.nan)
    for c in range(scores.shape[1]):
        pos = y == c
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(scores[:, c])
        out[c] = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return out


def auc_ova(scores, labels_true) -> float:
    """Macro average of :func:`auc_per_class`, skipping (and warning on) absent classes."""
    per = auc_per_class(scores, labels_true)
    missing = np.flatnonzero(np.isnan(per))
    if missing.size:
        warnings.warn(f"AUC undefined for classes {missing.tolist()}; skipped", RuntimeWarning, stacklevel=2)
    if missing.size == per.size:
        raise InvalidParameter("AUC is undefined for every class")
    return float(np.nanmean(per))


def evaluate_predictions(labels_true, labels_pred, scores, n_classes) -> MetricsReport:
    report = macro_metrics(labels_true, labels_pred, n_classes)
    report.auc = auc_ova(scores, labels_true)
    return report


def roi(result_a, result_b):
    """Share of the remaining headroom ``1 - result_a`` gained by ``result_b``."""
    if result_a >= 1:
        raise InvalidParameter("ROI is undefined for a baseline result >= 1")
    return (result_b - result_a) / (1.0 - result_a)


def summarize_runs(values) -> RunSummary:
    """Mean, sample std, range and normal-approximation 95% CI."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise InvalidParameter("need at least two runs to summarise")
    mu = float(v.mean())
    sigma = float(v.std(ddof=1))
    half = Z_95 * sigma / math.sqrt(v.size)
    return RunSummary(mu, sigma, float(v.min()), float(v.max()), mu - half, mu + half, int(v.size))


def student_t_sf(t, df):
    """Upper-tail probability P(T > t) of Student's t via the incomplete beta function."""
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return float(tail if t >= 0 else 1.0 - tail)


def paired_t_statistic(baseline, treatment):
    a = np.asarray(baseline, dtype=np.float64)
    b = np.asarray(treatment, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise InvalidParameter("paired samples must be equal-length vectors with at least two entries")
    d = b - a
    sd = d.std(ddof=1)
    if sd == 0:
        raise DegenerateDifferences("all paired differences are equal; the t statistic is undefined")
    return float(d.mean() / (sd / math.sqrt(d.size))), d.size - 1


def paired_t_test_one_tailed(baseline, treatment):
    """p-value for H1: mean(treatment) > mean(baseline), paired by position."""
    t, df = paired_t_statistic(baseline, treatment)
    return student_t_sf(t, df)
