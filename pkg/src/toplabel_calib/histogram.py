"""Binned and cumulative top-label calibrators.

Both work only with the positives of one category (samples predicted as
that category), split into true and false positives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .data import TopLabelView, _frozen
from .errors import CalibrationError, UncalibratableError
from .losses import EPS

DEFAULT_BINS = 10


def bin_index(edges: np.ndarray, s) -> np.ndarray:
    """Index of the half-open bin (b_i, b_{i+1}] holding each score.

    The lowest edge itself belongs to the first bin; scores outside the
    edges are clamped to the first/last bin.
    """
    idx = np.searchsorted(edges, np.asarray(s, dtype=np.float64), side="left") - 1
    return np.clip(idx, 0, len(edges) - 2)


@dataclass(frozen=True, eq=False)
class HistogramCalibrator:
    kind: ClassVar[str] = "histogram"

    category: int
    edges: np.ndarray
    values: np.ndarray
    tp_counts: np.ndarray
    fp_counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        if len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise CalibrationError("bin edges must be strictly increasing")
        for name in ("edges", "values", "tp_counts", "fp_counts"):
            dtype = np.int64 if name.endswith("counts") else np.float64
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=dtype)))

    @property
    def n_bins(self) -> int:
        return len(self.values)

    @property
    def empty(self) -> np.ndarray:
        """Bins that held no positive; their value is inherited."""
        return (self.tp_counts + self.fp_counts) == 0

    def __call__(self, s) -> np.ndarray:
        return self.values[bin_index(self.edges, s)]

    def flags(self, s) -> np.ndarray:
        """True where ``s`` was clamped into range or falls in an empty bin."""
        s = np.asarray(s, dtype=np.float64)
        outside = (s < self.edges[0]) | (s > self.edges[-1])
        return outside | self.empty[bin_index(self.edges, s)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "category": self.category, "edges": self.edges.tolist(),
                "values": self.values.tolist(), "tp_counts": self.tp_counts.tolist(),
                "fp_counts": self.fp_counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> HistogramCalibrator:
        return cls(int(d["category"]), d["edges"], d["values"], d["tp_counts"], d["fp_counts"])


def fit_histogram(view: TopLabelView, n_bins: int = DEFAULT_BINS) -> HistogramCalibrator:
    """Equal-width bins over the score range; value = TP fraction in the bin.

    Empty bins take the value of the nearest lower nonempty bin (leading
    empty bins take the first nonempty value).
    """
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    if view.n_positive == 0:
        raise UncalibratableError(f"category {view.category} has no positives")
    lo, hi = view.score_range
    edges = np.linspace(lo, hi, n_bins + 1)
    tp = np.bincount(bin_index(edges, view.tp_scores), minlength=n_bins)
    fp = np.bincount(bin_index(edges, view.fp_scores), minlength=n_bins)
    total = tp + fp
    filled = np.flatnonzero(total)
    values = np.empty(n_bins)
    values[filled] = tp[filled] / total[filled]
    # forward-fill from the nearest lower nonempty bin
    src = np.maximum.accumulate(np.where(total > 0, np.arange(n_bins), -1))
    src[src < 0] = filled[0]
    values = values[src]
    return HistogramCalibrator(view.category, edges, values, tp, fp)


def eval_histogram(cal: HistogramCalibrator, s):
    """Calibrated confidence at ``s`` and a flag for clamped/unsupported scores."""
    return cal(s), cal.flags(s)


CUMULATIVE_VARIANTS = ("plain", "median", "optimal")


@dataclass(frozen=True, eq=False)
class CumulativeCalibrator:
    """Tail-fraction confidence (#TP >= S) / (#positives >= S).

    The cutoff variants replace everything below ``cutoff`` with a single
    bin: the TP fraction among positives scoring strictly below the cutoff.
    """

    kind: ClassVar[str] = "cumulative"

    category: int
    scores: np.ndarray
    is_tp: np.ndarray
    variant: str = "plain"
    cutoff: float | None = None
    below_value: float | None = None

    def __post_init__(self):
        if self.variant not in CUMULATIVE_VARIANTS:
            raise CalibrationError(f"unknown cumulative variant {self.variant!r}")
        scores = np.asarray(self.scores, dtype=np.float64)
        is_tp = np.asarray(self.is_tp, dtype=bool)
        if len(scores) == 0 or len(scores) != len(is_tp) or np.any(np.diff(scores) < 0):
            raise CalibrationError("cumulative calibrator needs sorted, nonempty, flagged scores")
        if (self.variant == "plain") != (self.cutoff is None):
            raise CalibrationError("cutoff is required exactly for the cutoff variants")
        object.__setattr__(self, "scores", _frozen(scores))
        object.__setattr__(self, "is_tp", _frozen(is_tp))
        tail_tp = np.concatenate([np.cumsum(is_tp[::-1])[::-1], [0]])
        object.__setattr__(self, "_tail_tp", tail_tp)
        if self.cutoff is not None and self.below_value is None:
            object.__setattr__(self, "below_value", _below_value(scores, is_tp, self.cutoff, tail_tp))

    def tail(self, s) -> np.ndarray:
        """Plain cumulative confidence; scores above the top sample use the top sample's tail."""
        s = np.minimum(np.asarray(s, dtype=np.float64), self.scores[-1])
        idx = np.searchsorted(self.scores, s, side="left")
        return self._tail_tp[idx] / (len(self.scores) - idx)

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        out = self.tail(s)
        if self.cutoff is not None:
            out = np.where(s < self.cutoff, self.below_value, out)
        return out

    def flags(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return (s < self.scores[0]) | (s > self.scores[-1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "category": self.category, "variant": self.variant,
                "scores": self.scores.tolist(), "is_tp": self.is_tp.astype(int).tolist(),
                "cutoff": self.cutoff, "below_value": self.below_value}

    @classmethod
    def from_dict(cls, d: dict) -> CumulativeCalibrator:
        return cls(int(d["category"]), d["scores"], np.asarray(d["is_tp"], dtype=bool),
                   d["variant"], d["cutoff"], d["below_value"])


def _below_value(scores, is_tp, cutoff, tail_tp) -> float:
    m = int(np.searchsorted(scores, cutoff, side="left"))
    if m == 0:
        # nothing below the cutoff: continue the tail curve downward
        return float(tail_tp[0] / len(scores))
    return float((tail_tp[0] - tail_tp[m]) / m)


def _cutoff_losses(scores, is_tp, candidates, loss: str) -> np.ndarray:
    """Loss of the cutoff calibrator on its own view, for every candidate cutoff.

    Above the cutoff each sample keeps its own tail value, so the loss splits
    into a suffix sum over tail terms plus one pooled term for the bin below.
    """
    n = len(scores)
    tail_tp = np.concatenate([np.cumsum(is_tp[::-1])[::-1], [0]])
    idx = np.searchsorted(scores, scores, side="left")
    tail_p = tail_tp[idx] / (n - idx)
    if loss == "nll":
        p = np.clip(tail_p, EPS, 1 - EPS)
        terms = -np.where(is_tp, np.log(p), np.log1p(-p))
    else:
        terms = np.where(is_tp, (1 - tail_p) ** 2, tail_p ** 2)
    suffix = np.concatenate([np.cumsum(terms[::-1])[::-1], [0.0]])

    m = np.searchsorted(scores, candidates, side="left")
    n_tp_below = tail_tp[0] - tail_tp[m]
    n_fp_below = m - n_tp_below
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(m > 0, n_tp_below / np.maximum(m, 1), 0.0)
    if loss == "nll":
        qc = np.clip(q, EPS, 1 - EPS)
        below = -(n_tp_below * np.log(qc) + n_fp_below * np.log1p(-qc))
    else:
        below = n_tp_below * (1 - q) ** 2 + n_fp_below * q ** 2
    return suffix[m] + np.where(m > 0, below, 0.0)


def cutoff_candidates(view: TopLabelView) -> np.ndarray:
    scores, _ = view.labeled_scores()
    lo, hi = view.score_range
    return np.unique(np.concatenate([[lo], scores, [hi]]))


def fit_cumulative(view: TopLabelView, variant: str = "plain", loss: str = "nll") -> CumulativeCalibrator:
    """Fit the plain, median-cutoff or optimal-cutoff cumulative calibrator.

    The optimal cutoff is the smallest candidate minimizing ``loss`` on the
    view.  The loss is constant between consecutive distinct scores, so
    scanning the distinct scores (plus the range ends) is exact.
    """
    if variant not in CUMULATIVE_VARIANTS:
        raise ValueError(f"unknown cumulative variant {variant!r}")
    if loss not in ("nll", "brier"):
        raise ValueError(f"unknown loss {loss!r}")
    if view.n_positive == 0:
        raise UncalibratableError(f"category {view.category} has no positives")
    scores, is_tp = view.labeled_scores()
    if variant == "plain":
        return CumulativeCalibrator(view.category, scores, is_tp)
    if variant == "median":
        cutoff = float(np.median(scores))
    else:
        candidates = cutoff_candidates(view)
        losses = _cutoff_losses(scores, is_tp, candidates, loss)
        cutoff = float(candidates[int(np.argmin(losses))])
    return CumulativeCalibrator(view.category, scores, is_tp, variant, cutoff)


def eval_cumulative(cal: CumulativeCalibrator, s) -> np.ndarray:
    return cal(s)
