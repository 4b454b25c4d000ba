"""Kernel-density-ratio calibration and bandwidth selection.

Confidence at score S is the share of the true-positive kernel mass in the
total positive kernel mass::

    conf(S) = n_tp K_tp(S) / (n_tp K_tp(S) + n_fp K_fp(S))

with Gaussian kernels of one bandwidth shared by both densities.  The
bandwidth is the smallest value on a geometric schedule for which the
confidence curve's slope changes sign at most N times on a 512-point grid
(N = 0 gives a monotone curve, N = 2 allows one dip).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .data import TopLabelView, _frozen
from .errors import BandwidthSearchError, CalibrationError, UncalibratableError
from .losses import nll_terms

GRID_POINTS = 512
FLAT_TOLERANCE = 1e-12
SCHEDULE_RATIO = 1.05
FLOOR_FRACTION = 1e-3
CEILING_FACTOR = 4.0

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK = 1 << 22  # max matrix entries per block


def _kernel_sums(points: np.ndarray, s: np.ndarray, b: float) -> np.ndarray:
    """sum_i exp(-(s - p_i)^2 / 2b^2) for every query s.

    The sum runs over the point axis sequentially (a reduction along the
    non-contiguous axis), so inserting a point can never lower a sum.  Pairwise
    summation would regroup terms and could lose an ulp.
    """
    out = np.empty(len(s))
    if len(points) == 0:
        out[:] = 0.0
        return out
    scale = -0.5 / (b * b)
    step = max(1, _CHUNK // len(points))
    for start in range(0, len(s), step):
        block = points[:, None] - s[None, start:start + step]
        out[start:start + step] = np.exp(block * block * scale).sum(axis=0)
    return out


@dataclass(frozen=True, eq=False)
class KernelDensity:
    points: np.ndarray
    bandwidth: float

    def __post_init__(self):
        pts = np.sort(np.asarray(self.points, dtype=np.float64).reshape(-1))
        if len(pts) == 0:
            raise CalibrationError("a kernel density needs at least one point")
        if not self.bandwidth > 0:
            raise CalibrationError("bandwidth must be positive")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        b = self.bandwidth
        return _kernel_sums(self.points, s, b) * (_INV_SQRT_2PI / (b * len(self.points)))


def kde_eval(d: KernelDensity, s) -> np.ndarray:
    return d(s)


def evaluation_grid(lo: float, hi: float, n: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(lo, hi, n)


def bandwidth_schedule(score_range=(0.0, 1.0)) -> np.ndarray:
    """Geometric schedule from range/1000 up to 4 x range, ratio 1.05."""
    width = float(score_range[1] - score_range[0])
    floor, ceiling = FLOOR_FRACTION * width, CEILING_FACTOR * width
    n = int(math.floor(math.log(ceiling / floor) / math.log(SCHEDULE_RATIO) + 1e-9)) + 1
    return floor * SCHEDULE_RATIO ** np.arange(n)


def _rule_tag(max_sign_changes: int) -> str:
    return "mon" if max_sign_changes == 0 else f"mon{max_sign_changes}"


@dataclass(frozen=True, eq=False)
class KdeCalibrator:
    kind: ClassVar[str] = "kde"

    category: int
    tp_points: np.ndarray
    fp_points: np.ndarray
    bandwidth: float
    rule: str = "manual"
    grid_lo: float = 0.0
    grid_hi: float = 1.0
    grid_n: int = GRID_POINTS
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        tp = np.sort(np.asarray(self.tp_points, dtype=np.float64).reshape(-1))
        fp = np.sort(np.asarray(self.fp_points, dtype=np.float64).reshape(-1))
        if len(tp) == 0:
            raise UncalibratableError(f"category {self.category} has no true positives")
        if not self.bandwidth > 0:
            raise CalibrationError("bandwidth must be positive")
        object.__setattr__(self, "tp_points", _frozen(tp))
        object.__setattr__(self, "fp_points", _frozen(fp))
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def n_tp(self) -> int:
        return len(self.tp_points)

    @property
    def n_fp(self) -> int:
        return len(self.fp_points)

    @property
    def tp_density(self) -> KernelDensity:
        return KernelDensity(self.tp_points, self.bandwidth)

    @property
    def fp_density(self) -> KernelDensity | None:
        return KernelDensity(self.fp_points, self.bandwidth) if self.n_fp else None

    def grid(self) -> np.ndarray:
        return evaluation_grid(self.grid_lo, self.grid_hi, self.grid_n)

    def _masses(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        return (_kernel_sums(self.tp_points, s, self.bandwidth),
                _kernel_sums(self.fp_points, s, self.bandwidth))

    def __call__(self, s) -> np.ndarray:
        return _ratio(*self._masses(s), self.n_tp, self.n_fp)

    def flags(self, s) -> np.ndarray:
        """True where the score is outside the kernels' numerical support."""
        tp, fp = self._masses(s)
        return (tp + fp) == 0

    def pooled_density(self, s) -> np.ndarray:
        """Density of all positives: (n_tp K_tp + n_fp K_fp) / (n_tp + n_fp)."""
        tp, fp = self._masses(s)
        return (tp + fp) * (_INV_SQRT_2PI / (self.bandwidth * (self.n_tp + self.n_fp)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "category": self.category, "bandwidth": self.bandwidth,
                "rule": self.rule, "tp_points": self.tp_points.tolist(),
                "fp_points": self.fp_points.tolist(), "n_tp": self.n_tp, "n_fp": self.n_fp,
                "grid": [self.grid_lo, self.grid_hi, self.grid_n], "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, d: dict) -> KdeCalibrator:
        lo, hi, n = d["grid"]
        cal = cls(int(d["category"]), d["tp_points"], d["fp_points"], d["bandwidth"], d["rule"],
                  float(lo), float(hi), int(n), tuple(d.get("notes", ())))
        if cal.n_tp != d["n_tp"] or cal.n_fp != d["n_fp"]:
            raise CalibrationError("kde archive counts disagree with stored points")
        return cal


def _ratio(tp_mass, fp_mass, n_tp, n_fp) -> np.ndarray:
    """tp / (tp + fp), evaluated as 1 / (1 + fp / tp).

    Every step of the second form is a correctly rounded monotone operation,
    so more TP mass can never give a lower confidence, even by an ulp.
    """
    if n_fp == 0:
        return np.ones_like(tp_mass)
    fallback = n_tp / (n_tp + n_fp)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return np.where(tp_mass + fp_mass > 0, 1.0 / (1.0 + fp_mass / tp_mass), fallback)


def conf_kde(cal: KdeCalibrator, s) -> np.ndarray:
    return cal(s)


def pooled_density(cal: KdeCalibrator, s) -> np.ndarray:
    return cal.pooled_density(s)


def count_sign_changes(values) -> int:
    """Strict sign alternations in successive differences, ignoring flat steps."""
    d = np.diff(np.asarray(values, dtype=np.float64))
    signs = np.sign(d[np.abs(d) > FLAT_TOLERANCE])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def count_slope_sign_changes(cal: KdeCalibrator, grid=None) -> int:
    grid = cal.grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if len(grid) < 3 or np.any(np.diff(grid) <= 0):
        raise CalibrationError("sign-change grid needs >= 3 strictly increasing points")
    return count_sign_changes(cal(grid))


class _GridKernels:
    """Squared grid-to-point distances, cached across bandwidths."""

    def __init__(self, grid, tp, fp):
        d = tp[:, None] - grid[None, :]
        self.tp_d2 = d * d
        d = fp[:, None] - grid[None, :]
        self.fp_d2 = d * d
        self.n_tp, self.n_fp = len(tp), len(fp)

    def confidence(self, b: float) -> np.ndarray:
        # same arithmetic and summation order as _kernel_sums, so counts agree bitwise
        scale = -0.5 / (b * b)
        tp = np.exp(self.tp_d2 * scale).sum(axis=0)
        fp = np.exp(self.fp_d2 * scale).sum(axis=0)
        return _ratio(tp, fp, self.n_tp, self.n_fp)


def _positive_range(view: TopLabelView) -> tuple[float, float]:
    lo = min(view.tp_scores[:1].tolist() + view.fp_scores[:1].tolist())
    hi = max(view.tp_scores[-1:].tolist() + view.fp_scores[-1:].tolist())
    return float(lo), float(hi)


def bandwidth_search(view: TopLabelView, max_sign_changes: int,
                     schedule=None) -> tuple[float, str | None]:
    """Smallest scheduled bandwidth meeting the sign-change limit, plus a note.

    The note is set when the constraint holds trivially (only TP or only FP
    positives, or all positives at one score) and the schedule floor is
    returned without a search.
    """
    if max_sign_changes < 0:
        raise ValueError("max_sign_changes must be >= 0")
    schedule = bandwidth_schedule(view.score_range) if schedule is None else np.asarray(schedule)
    if view.n_tp == 0 or view.n_fp == 0:
        return float(schedule[0]), "single-class positives: any bandwidth is monotone"
    lo, hi = _positive_range(view)
    if hi <= lo:
        return float(schedule[0]), "all positives share one score: any bandwidth is monotone"
    grid = evaluation_grid(lo, hi)
    kernels = _GridKernels(grid, view.tp_scores, view.fp_scores)
    for b in schedule:
        if count_sign_changes(kernels.confidence(b)) <= max_sign_changes:
            return float(b), None
    raise BandwidthSearchError(
        f"category {view.category}: no scheduled bandwidth up to {schedule[-1]:g} "
        f"gives <= {max_sign_changes} slope sign changes")


def select_bandwidth(view: TopLabelView, max_sign_changes: int, schedule=None) -> float:
    return bandwidth_search(view, max_sign_changes, schedule)[0]


def loo_objective(view: TopLabelView, b: float) -> float:
    """Summed NLL of each positive predicted from kernels that exclude it."""
    tp, fp = view.tp_scores, view.fp_scores
    n_tp, n_fp = len(tp), len(fp)
    scale = -0.5 / (b * b)

    def held_out_sums(queries, own, other):
        own_sums = np.empty(len(queries))
        other_sums = _kernel_sums(other, queries, b)
        step = max(1, _CHUNK // max(1, len(own)))
        for start in range(0, len(queries), step):
            q = queries[start:start + step]
            e = np.exp((q[:, None] - own[None, :]) ** 2 * scale)
            rows = np.arange(len(q))
            e[rows, rows + start] = 0.0
            own_sums[start:start + step] = e.sum(axis=1)
        return own_sums, other_sums

    a_tp, b_tp = held_out_sums(tp, tp, fp)      # TP held out: own = TP kernel
    b_fp, a_fp = held_out_sums(fp, fp, tp)      # FP held out: own = FP kernel
    n = n_tp + n_fp
    with np.errstate(invalid="ignore", divide="ignore"):
        p_tp = np.where(a_tp + b_tp > 0, a_tp / (a_tp + b_tp), (n_tp - 1) / (n - 1))
        p_fp = np.where(a_fp + b_fp > 0, a_fp / (a_fp + b_fp), n_tp / (n - 1))
    return float(np.sum(nll_terms(p_tp, np.ones(n_tp, bool))) +
                 np.sum(nll_terms(p_fp, np.zeros(n_fp, bool))))


def select_bandwidth_loo(view: TopLabelView, schedule=None) -> float:
    """Scheduled bandwidth minimizing leave-one-out NLL (first minimum wins)."""
    if view.n_tp < 2 or view.n_fp < 2:
        raise UncalibratableError(
            f"category {view.category}: leave-one-out needs >= 2 TP and >= 2 FP positives")
    schedule = bandwidth_schedule(view.score_range) if schedule is None else np.asarray(schedule)
    objective = np.array([loo_objective(view, b) for b in schedule])
    return float(schedule[int(np.argmin(objective))])


def fit_kde(view: TopLabelView, rule: str = "mon2", bandwidth: float | None = None,
            max_sign_changes: int | None = None) -> KdeCalibrator:
    """Fit a density-ratio calibrator with bandwidth chosen by ``rule``.

    ``rule`` is one of ``mon`` (monotone), ``mon<N>`` (at most N slope sign
    changes), ``loo`` (leave-one-out NLL) or ``manual`` (``bandwidth`` given).
    """
    if view.n_tp == 0:
        raise UncalibratableError(f"category {view.category} has no true positives")
    notes: list[str] = []
    if rule == "manual":
        if bandwidth is None:
            raise ValueError("manual rule needs an explicit bandwidth")
    elif rule == "loo":
        bandwidth = select_bandwidth_loo(view)
    elif rule.startswith("mon"):
        if max_sign_changes is None:
            max_sign_changes = int(rule[3:] or 0)
        rule = _rule_tag(max_sign_changes)
        bandwidth, note = bandwidth_search(view, max_sign_changes)
        if note:
            notes.append(note)
    else:
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    if view.n_fp == 0:
        notes.append("FP-free category: confidence is 1 everywhere")
    lo, hi = _positive_range(view)
    cal = KdeCalibrator(view.category, view.tp_scores, view.fp_scores, bandwidth, rule,
                        lo, hi, GRID_POINTS, tuple(notes))
    if rule.startswith("mon") and hi > lo:
        changes = count_slope_sign_changes(cal)
        if changes > max_sign_changes:
            raise CalibrationError(
                f"category {view.category}: fitted curve has {changes} sign changes "
                f"(limit {max_sign_changes})")
    return cal
