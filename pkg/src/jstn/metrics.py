"""Accuracy, category-weighted precision/recall/F1 and the paired t-test."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # K x K, rows = true class, cols = predicted

    @classmethod
    def from_labels(cls, truth, predictions, n_classes: int) -> "ConfusionMatrix":
        t = np.asarray(truth, dtype=np.int64)
        p = np.asarray(predictions, dtype=np.int64)
        M = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(M, (t, p), 1)
        return cls(M)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path, class_names: list[str] | None = None) -> None:
        K = self.counts.shape[0]
        names = class_names or [str(k) for k in range(K)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred"] + names)
            for k in range(K):
                w.writerow([names[k]] + [int(v) for v in self.counts[k]])


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    support: list[int]
    # classes never predicted; their precision is reported as 0
    zero_division_classes: list[int] = field(default_factory=list)
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(predictions, truth, n_classes: int | None = None) -> MetricsReport:
    p = np.asarray(predictions, dtype=np.int64).reshape(-1)
    t = np.asarray(truth, dtype=np.int64).reshape(-1)
    if p.size != t.size:
        raise ValueError(f"{p.size} predictions but {t.size} truth labels")
    if p.size == 0:
        raise ValueError("nothing to evaluate")
    K = n_classes if n_classes is not None else int(max(p.max(), t.max())) + 1
    cm = ConfusionMatrix.from_labels(t, p, K).counts
    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    support = cm.sum(axis=1)
    actual = support.astype(float)
    prec = np.divide(tp, predicted, out=np.zeros(K), where=predicted > 0)
    rec = np.divide(tp, actual, out=np.zeros(K), where=actual > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(K), where=denom > 0)
    w = actual / actual.sum()

    def weighted(x):
        # correctly rounded, so the result does not depend on summation order
        return math.fsum((w * x).tolist())

    return MetricsReport(
        accuracy=float(tp.sum() / p.size),
        precision=weighted(prec),
        recall=weighted(rec),
        f1=weighted(f1),
        per_class_precision=prec.tolist(),
        per_class_recall=rec.tolist(),
        per_class_f1=f1.tolist(),
        support=support.tolist(),
        zero_division_classes=np.flatnonzero(predicted == 0).tolist(),
        n=int(p.size),
    )


# ---------------------------------------------------------------------------
# Student t distribution


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return betainc_reg(df / 2.0, 0.5, x)


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    mean_diff: float


def paired_t_test(scores_a, scores_b) -> TTestResult:
    """Two-sided paired t-test of a - b.

    Zero-variance differences give t = +-inf and p = 0 when the mean
    difference is non-zero, t = 0 and p = 1 when it is zero.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0 or sd < 1e-15 * max(abs(mean), 1.0):
        if mean == 0.0:
            return TTestResult(0.0, 1.0, df, 0.0)
        return TTestResult(math.copysign(math.inf, mean), 0.0, df, mean)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, t_sf_two_sided(t, df), df, mean)
