"""Temperature scaling adapted to top-label calibration.

All four models remap the full output vector Y and read the confidence off
the entry of the originally predicted category k::

    Y_hat = softmax((log Y + A_k e_k) / T)        confidence = Y_hat[k]

STS shares one T and has no award; CSTS uses T_k; TSwA shares T and adds a
per-category award A_k to the winning entry; CSTSwA uses (A_k, T_k).  Each
model is fitted by minimizing a top-label loss over the positives it
governs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy import optimize, special

from .data import LabeledDataset, _frozen
from .errors import CalibrationError, UncalibratableError
from .losses import LOSS_TERMS

KINDS = ("sts", "csts", "tswa", "cstswa")
LOG_T_MAX = 4 * math.log(10)
LOG_FLOOR = 1e-300
_SCAN = np.linspace(-LOG_T_MAX, LOG_T_MAX, 161)
_RESTART_TEMPERATURES = (0.5, 1.0, 2.0)
# separable data has no finite optimum; awards are boxed like log T
AWARD_MAX = 50.0


def _log_scores(Y) -> np.ndarray:
    return np.log(np.maximum(np.asarray(Y, dtype=np.float64), LOG_FLOOR))


def _top_gaps(logy: np.ndarray, k: np.ndarray) -> np.ndarray:
    """log y_j - log y_k for every entry, with the k-th entry set to -inf."""
    rows = np.arange(len(k))
    d = logy - logy[rows, k][:, None]
    d[rows, k] = -np.inf
    return d


def _top_probability(gaps: np.ndarray, T: np.ndarray, A: np.ndarray) -> np.ndarray:
    """softmax((log y + A e_k) / T)[k] written as a logistic of the losing entries."""
    if gaps.shape[1] == 1:
        return np.ones(len(gaps))
    z = gaps / T[:, None]
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    return special.expit(A / T - lse)


@dataclass(frozen=True, eq=False)
class TempFamilyModel:
    kind_tag: ClassVar[str] = "temperature"

    kind: str
    temperatures: np.ndarray
    awards: np.ndarray | None = None
    loss: str = "nll"
    final_loss: float | None = None
    uncalibratable: tuple[bool, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CalibrationError(f"unknown temperature model {self.kind!r}")
        T = np.asarray(self.temperatures, dtype=np.float64).reshape(-1)
        if np.any(~(T > 0)):
            raise CalibrationError("temperatures must be positive")
        shared = self.kind in ("sts", "tswa")
        if shared and len(T) != 1:
            raise CalibrationError(f"{self.kind} has exactly one temperature")
        has_awards = self.kind in ("tswa", "cstswa")
        if has_awards != (self.awards is not None):
            raise CalibrationError(f"{self.kind} {'needs' if has_awards else 'takes no'} awards")
        object.__setattr__(self, "temperatures", _frozen(T))
        if self.awards is not None:
            A = np.asarray(self.awards, dtype=np.float64).reshape(-1)
            if not shared and len(A) != len(T):
                raise CalibrationError("cstswa needs one award per temperature")
            object.__setattr__(self, "awards", _frozen(A))
        object.__setattr__(self, "uncalibratable", tuple(bool(u) for u in self.uncalibratable))

    @property
    def n_parameters(self) -> int:
        return len(self.temperatures) + (0 if self.awards is None else len(self.awards))

    def parameters_for(self, k) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample temperature and award for stored top labels ``k``."""
        k = np.asarray(k)
        T = self.temperatures[0 if len(self.temperatures) == 1 else k]
        A = np.zeros(k.shape) if self.awards is None else self.awards[k]
        return np.broadcast_to(T, k.shape).astype(np.float64), np.asarray(A, dtype=np.float64)

    def __call__(self, Y, k) -> np.ndarray:
        return apply_model(self, Y, k)

    def to_dict(self) -> dict:
        return {"kind": self.kind_tag, "model": self.kind,
                "temperatures": self.temperatures.tolist(),
                "awards": None if self.awards is None else self.awards.tolist(),
                "loss": self.loss, "final_loss": self.final_loss,
                "uncalibratable": list(self.uncalibratable)}

    @classmethod
    def from_dict(cls, d: dict) -> TempFamilyModel:
        return cls(d["model"], d["temperatures"], d["awards"], d["loss"], d["final_loss"],
                   tuple(d.get("uncalibratable", ())))


def apply_model(model: TempFamilyModel, Y, k) -> np.ndarray | float:
    """Confidence y_hat_k for score vector(s) ``Y`` with stored top label(s) ``k``.

    ``k`` is always the category predicted by the original scores; a negative
    award may make another entry of Y_hat larger, which does not change k.
    """
    Y = np.asarray(Y, dtype=np.float64)
    scalar = Y.ndim == 1
    Y2 = np.atleast_2d(Y)
    k2 = np.atleast_1d(np.asarray(k, dtype=np.int64))
    T, A = model.parameters_for(k2)
    p = _top_probability(_top_gaps(_log_scores(Y2), k2), T, A)
    return float(p[0]) if scalar else p


def model_loss(model: TempFamilyModel, dataset: LabeledDataset, loss: str | None = None) -> float:
    """Top-label loss of ``model`` summed over every sample of ``dataset``."""
    p = apply_model(model, dataset.scores, dataset.predicted)
    return float(np.sum(LOSS_TERMS[loss or model.loss](p, dataset.correct)))


class _Problem:
    """Precomputed log scores, top labels and outcomes for a set of samples."""

    def __init__(self, dataset: LabeledDataset, mask=None, loss: str = "nll"):
        if loss not in LOSS_TERMS:
            raise ValueError(f"unknown loss {loss!r}")
        idx = np.arange(len(dataset)) if mask is None else np.flatnonzero(mask)
        self.k = dataset.predicted[idx]
        self.gaps = _top_gaps(_log_scores(dataset.scores[idx]), self.k)
        self.is_tp = dataset.correct[idx]
        self.terms = LOSS_TERMS[loss]
        self.n = len(idx)

    def __call__(self, log_t: float, award: float | np.ndarray = 0.0) -> float:
        T = np.full(self.n, math.exp(log_t))
        A = np.broadcast_to(np.asarray(award, dtype=np.float64), (self.n,)).copy()
        return float(np.sum(self.terms(_top_probability(self.gaps, T, A), self.is_tp)))


def _minimize_log_temperature(f, extra=()) -> float:
    """Deterministic scalar minimization of f(log T) on [-4 ln 10, 4 ln 10].

    A coarse scan locates the basin, bounded Brent refines it to 1e-7 in
    log T.  T = 1 and any ``extra`` points are always candidates.
    """
    values = np.array([f(u) for u in _SCAN])
    j = int(np.argmin(values))
    lo, hi = _SCAN[max(j - 1, 0)], _SCAN[min(j + 1, len(_SCAN) - 1)]
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-7, "maxiter": 500})
    candidates = [float(_SCAN[j]), float(res.x), 0.0, *map(float, extra)]
    losses = [f(u) for u in candidates]
    return candidates[int(np.argmin(losses))]


_LOCAL_OPTIONS = {
    "Nelder-Mead": {"xatol": 1e-6, "adaptive": True, "maxiter": 20000, "maxfev": 40000},
    "Powell": {"xtol": 1e-6, "ftol": 1e-12, "maxfev": 200000},
}


def _local_search(f, starts, bounds, method="Nelder-Mead", fatol=1e-8, max_rounds=25) -> np.ndarray:
    """Best end point over several derivative-free runs, clipped to ``bounds``.

    Each run is restarted from its own end point until a full run improves
    the loss by less than ``fatol``; the result is never worse than its start.
    The search itself is unbounded on a clipped objective, which stays flat
    outside the box.
    """
    lo, hi = np.array(bounds, dtype=np.float64).T

    def clipped(x):
        return f(np.clip(x, lo, hi))

    options = dict(_LOCAL_OPTIONS[method])
    if method == "Nelder-Mead":
        options["fatol"] = fatol
    best_x, best_f = None, math.inf
    for x0 in starts:
        x = np.asarray(x0, dtype=np.float64)
        fx = clipped(x)
        for _ in range(max_rounds):
            res = optimize.minimize(clipped, x, method=method, options=options)
            improvement = fx - res.fun
            if res.fun < fx:
                x, fx = np.clip(res.x, lo, hi), float(res.fun)
            if improvement < fatol:
                break
        if fx < best_f:
            best_x, best_f = x, fx
    return best_x


def fit_sts(dataset: LabeledDataset, loss: str = "nll") -> TempFamilyModel:
    """One shared temperature minimizing the top-label loss over all samples."""
    if len(dataset) == 0:
        raise UncalibratableError("cannot fit a temperature on an empty dataset")
    problem = _Problem(dataset, loss=loss)
    u = _minimize_log_temperature(problem)
    model = TempFamilyModel("sts", [math.exp(u)], loss=loss)
    return _with_loss(model, dataset)


def _with_loss(model: TempFamilyModel, dataset: LabeledDataset) -> TempFamilyModel:
    return TempFamilyModel(model.kind, model.temperatures, model.awards, model.loss,
                           model_loss(model, dataset), model.uncalibratable)


def _category_masks(dataset: LabeledDataset):
    for k in range(dataset.n_categories):
        yield k, dataset.predicted == k


def fit_csts(dataset: LabeledDataset, loss: str = "nll",
             shared: TempFamilyModel | None = None) -> TempFamilyModel:
    """K temperatures, each fitted on the positives of its own category.

    The shared STS temperature is offered as a candidate to every category,
    so the summed loss never exceeds the STS loss.
    """
    if len(dataset) == 0:
        raise UncalibratableError("cannot fit temperatures on an empty dataset")
    shared = shared or fit_sts(dataset, loss)
    u_shared = math.log(shared.temperatures[0])
    T = np.ones(dataset.n_categories)
    flags = []
    for k, mask in _category_masks(dataset):
        flags.append(not mask.any())
        if mask.any():
            T[k] = math.exp(_minimize_log_temperature(_Problem(dataset, mask, loss), [u_shared]))
    return _with_loss(TempFamilyModel("csts", T, loss=loss, uncalibratable=tuple(flags)), dataset)


def fit_tswa(dataset: LabeledDataset, loss: str = "nll",
             shared: TempFamilyModel | None = None) -> TempFamilyModel:
    """Shared temperature plus one award per category, fitted jointly.

    Powell direction-set search from the STS solution (awards zero) and from
    T in {0.5, 1, 2}; the best end point wins.  Categories nobody predicts keep
    a zero award and are flagged.
    """
    if len(dataset) == 0:
        raise UncalibratableError("cannot fit temperatures on an empty dataset")
    shared = shared or fit_sts(dataset, loss)
    problem = _Problem(dataset, loss=loss)
    present = np.array([m.any() for _, m in _category_masks(dataset)])
    free = np.flatnonzero(present)

    def f(x):
        awards = np.zeros(dataset.n_categories)
        awards[free] = x[:-1]
        return problem(x[-1], awards[problem.k])

    u_shared = math.log(shared.temperatures[0])
    starts = [np.append(np.zeros(len(free)), u)
              for u in (u_shared, *map(math.log, _RESTART_TEMPERATURES))]
    bounds = [(-AWARD_MAX, AWARD_MAX)] * len(free) + [(-LOG_T_MAX, LOG_T_MAX)]
    x = _local_search(f, starts, bounds, method="Powell")
    awards = np.zeros(dataset.n_categories)
    awards[free] = x[:-1]
    model = TempFamilyModel("tswa", [math.exp(x[-1])], awards, loss,
                            uncalibratable=tuple(~present))
    return _with_loss(model, dataset)


def fit_cstswa(dataset: LabeledDataset, loss: str = "nll",
               categorical: TempFamilyModel | None = None) -> TempFamilyModel:
    """Per-category (award, temperature) pairs: K independent 2-D fits.

    Each category starts from its CSTS temperature with zero award, so the
    result never loses to CSTS.
    """
    if len(dataset) == 0:
        raise UncalibratableError("cannot fit temperatures on an empty dataset")
    categorical = categorical or fit_csts(dataset, loss)
    T = np.ones(dataset.n_categories)
    A = np.zeros(dataset.n_categories)
    flags = []
    for k, mask in _category_masks(dataset):
        flags.append(not mask.any())
        if not mask.any():
            continue
        problem = _Problem(dataset, mask, loss)
        u_k = math.log(categorical.temperatures[k])
        starts = [(0.0, u) for u in (u_k, *map(math.log, _RESTART_TEMPERATURES))]
        a, u = _local_search(lambda x: problem(x[1], x[0]), starts,
                             [(-AWARD_MAX, AWARD_MAX), (-LOG_T_MAX, LOG_T_MAX)])
        A[k], T[k] = a, math.exp(u)
    model = TempFamilyModel("cstswa", T, A, loss, uncalibratable=tuple(flags))
    return _with_loss(model, dataset)


FITTERS = {"sts": fit_sts, "csts": fit_csts, "tswa": fit_tswa, "cstswa": fit_cstswa}
