"""Calibration metrics: NLL, Brier, binned calibration errors, reliability points.

ECE1 and ECE2 use 10 equal-width bins over predicted confidence, half open
on the left like the histogram calibrator, so confidence 0 falls in the
first bin:

    ECE1 = sum_b (n_b / n) |acc_b - conf_b|
    ECE2 = sqrt(sum_b (n_b / n) (acc_b - conf_b)^2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import LabeledDataset, TopLabelView
from .errors import CalibrationError
from .histogram import bin_index
from .losses import brier_terms, nll_terms

ECE_BINS = 10
WEIGHTINGS = ("sample", "category")
METRICS = ("nll", "brier", "ece1", "ece2")
BASELINE = "uncalibrated"


@dataclass(frozen=True)
class ReliabilityPoint:
    center: float
    confidence: float
    accuracy: float
    count: int


@dataclass(frozen=True)
class CategoryReport:
    category: str
    n: int
    n_tp: int
    nll: float
    brier: float
    ece1: float
    ece2: float
    reliability: tuple[ReliabilityPoint, ...] = ()

    def metric(self, name: str) -> float:
        if name not in METRICS:
            raise ValueError(f"unknown metric {name!r}")
        return getattr(self, name)


def confidence_bins(confidence, n_bins: int = ECE_BINS) -> np.ndarray:
    return bin_index(np.linspace(0.0, 1.0, n_bins + 1), np.asarray(confidence, dtype=np.float64))


def binned_gaps(confidence, target, groups=None, n_bins: int = ECE_BINS):
    """Per-group (count, mean confidence, mean target); empty groups dropped.

    ``target`` is either the 0/1 outcome or a true probability.  ``groups``
    overrides the default equal-width confidence bins.
    """
    c = np.asarray(confidence, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    g = confidence_bins(c, n_bins) if groups is None else np.asarray(groups)
    size = n_bins if groups is None else int(g.max()) + 1 if g.size else 0
    counts = np.bincount(g, minlength=size)
    keep = counts > 0
    conf = np.bincount(g, weights=c, minlength=size)[keep] / counts[keep]
    acc = np.bincount(g, weights=t, minlength=size)[keep] / counts[keep]
    return counts[keep], conf, acc, np.flatnonzero(keep)


def calibration_errors(confidence, target, groups=None, n_bins: int = ECE_BINS) -> tuple[float, float]:
    """(ECE1, ECE2) of ``confidence`` against ``target``."""
    counts, conf, acc, _ = binned_gaps(confidence, target, groups, n_bins)
    if counts.sum() == 0:
        raise CalibrationError("calibration error of an empty sample")
    w = counts / counts.sum()
    gap = acc - conf
    return float(np.sum(w * np.abs(gap))), float(math.sqrt(np.sum(w * gap * gap)))


def ece_against_truth(calibrator, curve, population_scores, groups=None) -> float:
    """ECE1 of a score calibrator measured against a known confidence curve.

    Each group of the population (by default, each distinct calibrator
    output, i.e. each histogram bin) compares its calibrated value with the
    mean of the true curve over the group, weighted by population mass.
    """
    s = np.asarray(population_scores, dtype=np.float64)
    conf = np.asarray(calibrator(s), dtype=np.float64)
    if groups is None:
        _, groups = np.unique(conf, return_inverse=True)
    return calibration_errors(conf, curve(s), groups=groups)[0]


def evaluate_confidences(category: str, confidence, is_tp, n_bins: int = ECE_BINS) -> CategoryReport:
    c = np.asarray(confidence, dtype=np.float64)
    y = np.asarray(is_tp, dtype=bool)
    if c.size == 0:
        raise CalibrationError(f"category {category!r}: nothing to evaluate")
    counts, conf, acc, idx = binned_gaps(c, y, n_bins=n_bins)
    w = counts / counts.sum()
    gap = acc - conf
    points = tuple(ReliabilityPoint((i + 0.5) / n_bins, float(m), float(a), int(n))
                   for i, m, a, n in zip(idx, conf, acc, counts))
    return CategoryReport(category, int(c.size), int(y.sum()),
                          float(np.mean(nll_terms(c, y))), float(np.mean(brier_terms(c, y))),
                          float(np.sum(w * np.abs(gap))), float(math.sqrt(np.sum(w * gap * gap))),
                          points)


def evaluate(calibrator, view: TopLabelView, category: str | None = None,
             n_bins: int = ECE_BINS) -> CategoryReport:
    """Report for a score calibrator (any callable on top scores) on one category."""
    scores, is_tp = view.labeled_scores()
    if scores.size == 0:
        raise CalibrationError(f"category {view.category}: empty view")
    return evaluate_confidences(category or str(view.category), calibrator(scores), is_tp, n_bins)


@dataclass(frozen=True)
class EvaluationReport:
    method: str
    categories: tuple[CategoryReport, ...]
    skipped: tuple[str, ...] = ()

    def aggregate(self, metric: str, weighting: str = "sample") -> float:
        if weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        values = np.array([r.metric(metric) for r in self.categories])
        w = np.array([r.n if weighting == "sample" else 1 for r in self.categories], dtype=np.float64)
        return float(np.sum(w * values) / w.sum())

    def aggregate_report(self, weighting: str = "sample") -> CategoryReport:
        n = sum(r.n for r in self.categories)
        n_tp = sum(r.n_tp for r in self.categories)
        vals = {m: self.aggregate(m, weighting) for m in METRICS}
        return CategoryReport("aggregate", n, n_tp, **vals)

    def rows(self, weighting: str = "sample") -> list[CategoryReport]:
        return [*self.categories, self.aggregate_report(weighting)]

    def to_csv(self, weighting: str = "sample") -> str:
        lines = ["category,n,n_tp," + ",".join(METRICS)]
        for r in self.rows(weighting):
            lines.append(",".join([r.category, str(r.n), str(r.n_tp),
                                   *(repr(r.metric(m)) for m in METRICS)]))
        return "\n".join(lines) + "\n"

    def reliability_csv(self) -> str:
        lines = ["category,bin_center,mean_confidence,accuracy,count"]
        for r in self.categories:
            for p in r.reliability:
                lines.append(f"{r.category},{p.center!r},{p.confidence!r},{p.accuracy!r},{p.count}")
        return "\n".join(lines) + "\n"

    def to_text(self, weighting: str = "sample") -> str:
        width = max(9, *(len(r.category) for r in self.categories))
        head = f"{'category':<{width}} {'n':>7} {'n_tp':>7}" + "".join(f" {m:>10}" for m in METRICS)
        out = [f"method: {self.method}", head]
        for r in self.rows(weighting):
            out.append(f"{r.category:<{width}} {r.n:>7d} {r.n_tp:>7d}"
                       + "".join(f" {r.metric(m):>10.6f}" for m in METRICS))
        if self.skipped:
            out.append("no positives: " + ", ".join(self.skipped))
        out.append(f"aggregate weighting: {weighting}")
        return "\n".join(out) + "\n"


def evaluate_dataset(confidence, dataset: LabeledDataset, method: str,
                     n_bins: int = ECE_BINS) -> EvaluationReport:
    """Per-category report for one confidence per sample of ``dataset``."""
    conf = np.asarray(confidence, dtype=np.float64)
    if conf.shape != (len(dataset),):
        raise CalibrationError("need one confidence per sample")
    correct = dataset.correct
    reports, skipped = [], []
    for k, name in enumerate(dataset.category_names):
        mask = dataset.predicted == k
        if not mask.any():
            skipped.append(name)
            continue
        reports.append(evaluate_confidences(name, conf[mask], correct[mask], n_bins))
    if not reports:
        raise CalibrationError("empty dataset")
    return EvaluationReport(method, tuple(reports), tuple(skipped))


def evaluate_archive(archive, dataset: LabeledDataset, n_bins: int = ECE_BINS) -> EvaluationReport:
    """Evaluate a fitted ModelArchive (or None for raw top scores) on ``dataset``."""
    if archive is None:
        return evaluate_dataset(dataset.top_scores, dataset, BASELINE, n_bins)
    return evaluate_dataset(archive.confidences(dataset), dataset, archive.method, n_bins)


@dataclass(frozen=True)
class ComparisonTable:
    """Rows are categories plus the aggregate, columns are methods."""

    metric: str
    weighting: str
    rows: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def cell(self, row: str, column: str) -> float:
        return float(self.values[self.rows.index(row), self.columns.index(column)])

    def to_csv(self) -> str:
        lines = ["category," + ",".join(self.columns)]
        for i, r in enumerate(self.rows):
            lines.append(",".join([r, *(repr(float(v)) for v in self.values[i])]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(9, *(len(r) for r in self.rows))
        cw = max(12, *(len(c) for c in self.columns))
        out = [f"mean {self.metric} per sample ({self.weighting}-weighted aggregate)",
               f"{'category':<{width}}" + "".join(f" {c:>{cw}}" for c in self.columns)]
        for i, r in enumerate(self.rows):
            out.append(f"{r:<{width}}" + "".join(f" {v:>{cw}.6f}" for v in self.values[i]))
        return "\n".join(out) + "\n"


def compare(models: Mapping[str, object], dataset: LabeledDataset, metric: str = "nll",
            weighting: str = "sample", baseline: bool = True,
            n_bins: int = ECE_BINS) -> ComparisonTable:
    """Table of ``metric`` for each named model, plus the raw-score baseline.

    Columns are sorted by name with the baseline last, so the table does not
    depend on insertion order.  Categories nobody predicts are left out.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    names = sorted(models)
    if BASELINE in names:
        raise ValueError(f"{BASELINE!r} is reserved for the baseline column")
    reports = [evaluate_archive(models[n], dataset, n_bins) for n in names]
    if baseline:
        names.append(BASELINE)
        reports.append(evaluate_archive(None, dataset, n_bins))
    if not reports:
        raise ValueError("nothing to compare")
    rows = tuple(r.category for r in reports[0].categories) + ("aggregate",)
    values = np.array([[*(c.metric(metric) for c in rep.categories), rep.aggregate(metric, weighting)]
                       for rep in reports]).T
    return ComparisonTable(metric, weighting, rows, tuple(names), values)


def mean_loss_with_error(terms: Sequence[float]) -> tuple[float, float]:
    """Mean of per-sample losses and its standard error."""
    t = np.asarray(terms, dtype=np.float64)
    if t.size < 2:
        raise CalibrationError("need at least two samples for a standard error")
    return float(t.mean()), float(t.std(ddof=1) / math.sqrt(t.size))
