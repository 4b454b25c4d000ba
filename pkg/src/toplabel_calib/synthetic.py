"""Synthetic classifier outputs with a known confidence curve per category.

For each category k and each of its positives:

1. draw the calibrated top score q from the category's score distribution;
2. mark the sample a true positive with probability C_k(q), otherwise give
   it a uniformly drawn wrong label;
3. spread 1 - q over the other K - 1 entries by a Dirichlet(1, ..., 1)
   draw, giving a calibrated vector Q with argmax k;
4. undo the category's distortion: Y is proportional to Q**T exp(-A e_k),
   so temperature-with-award scaling by (A, T) maps Y back onto Q.

Random numbers come from numpy's PCG64 generator seeded with
``seed ^ k`` for category k, so categories are independent streams and a
fixed seed reproduces the dataset bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .data import LabeledDataset
from .errors import SpecError

_MAX_REDRAWS = 100


@dataclass(frozen=True)
class ScoreDistribution:
    kind: str = "uniform"
    low: float = 0.5
    high: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    values: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("uniform", "beta", "points"):
            raise SpecError(f"unknown score distribution {self.kind!r}")
        if self.kind == "points":
            if not self.values or (self.weights and len(self.weights) != len(self.values)):
                raise SpecError("point-mass mixture needs values and matching weights")
        elif not 0 <= self.low < self.high <= 1:
            raise SpecError("score distribution bounds must satisfy 0 <= low < high <= 1")

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "points":
            return min(self.values), max(self.values)
        return self.low, self.high

    def quantile_grid(self, n: int) -> np.ndarray:
        """Scores at the n mid-quantiles (i + 1/2)/n; a deterministic stand-in for the population."""
        u = (np.arange(n) + 0.5) / n
        if self.kind == "uniform":
            return self.low + (self.high - self.low) * u
        if self.kind == "beta":
            return self.low + (self.high - self.low) * stats.beta.ppf(u, self.alpha, self.beta)
        w = np.asarray(self.weights or [1.0] * len(self.values), dtype=np.float64)
        order = np.argsort(self.values)
        cdf = np.cumsum(w[order]) / w.sum()
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
        return np.asarray(self.values, dtype=np.float64)[order][idx]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, n)
        if self.kind == "beta":
            return self.low + (self.high - self.low) * rng.beta(self.alpha, self.beta, n)
        w = np.asarray(self.weights or [1.0] * len(self.values), dtype=np.float64)
        return np.asarray(self.values, dtype=np.float64)[rng.choice(len(w), n, p=w / w.sum())]

    @classmethod
    def from_dict(cls, d: dict) -> ScoreDistribution:
        d = dict(d)
        for key in ("values", "weights"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Curve:
    """True confidence as a function of the calibrated score."""

    kind: str = "identity"
    slope: float = 1.0
    midpoint: float = 0.5
    knots_x: tuple[float, ...] = ()
    knots_y: tuple[float, ...] = ()
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "logistic", "piecewise", "constant"):
            raise SpecError(f"unknown confidence curve {self.kind!r}")
        if self.kind == "piecewise":
            xs, ys = np.asarray(self.knots_x, float), np.asarray(self.knots_y, float)
            if len(xs) < 2 or len(xs) != len(ys) or np.any(np.diff(xs) <= 0):
                raise SpecError("piecewise curve needs >= 2 increasing knots")
            if np.any((ys < 0) | (ys > 1)):
                raise SpecError("piecewise curve values must lie in [0, 1]")
        if self.kind == "constant" and not 0 <= self.value <= 1:
            raise SpecError("constant curve value must lie in [0, 1]")

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "identity":
            return s.copy()
        if self.kind == "logistic":
            return 1.0 / (1.0 + np.exp(-self.slope * (s - self.midpoint)))
        if self.kind == "piecewise":
            return np.interp(s, self.knots_x, self.knots_y)
        return np.full(s.shape, float(self.value))

    @classmethod
    def from_dict(cls, d: dict) -> Curve:
        d = dict(d)
        for key in ("knots_x", "knots_y"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class CategorySpec:
    name: str
    count: int
    scores: ScoreDistribution = field(default_factory=ScoreDistribution)
    curve: Curve = field(default_factory=Curve)
    temperature: float = 1.0
    award: float = 0.0

    def __post_init__(self):
        if self.count < 0:
            raise SpecError(f"category {self.name!r}: negative count")
        if not self.temperature > 0:
            raise SpecError(f"category {self.name!r}: temperature must be positive")


@dataclass(frozen=True)
class GeneratorSpec:
    categories: tuple[CategorySpec, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        K = len(self.categories)
        if K < 2:
            raise SpecError("need at least two categories")
        names = [c.name for c in self.categories]
        if len(set(names)) != K:
            raise SpecError("category names must be unique")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise SpecError("seed must be a 64-bit unsigned integer")
        for c in self.categories:
            if c.count and c.scores.support[0] <= 1.0 / K:
                raise SpecError(f"category {c.name!r}: scores must exceed 1/K = {1.0 / K:g} "
                                "for the category to be the argmax")

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorSpec:
        default_t = float(d.get("temperature", 1.0))
        awards = d.get("awards")
        cats = []
        for i, c in enumerate(d["categories"]):
            cats.append(CategorySpec(
                name=str(c["name"]), count=int(c["count"]),
                scores=ScoreDistribution.from_dict(c.get("scores", {})),
                curve=Curve.from_dict(c.get("curve", {})),
                temperature=float(c.get("temperature", default_t)),
                award=float(c.get("award", awards[i] if awards else 0.0))))
        return cls(tuple(cats), int(d.get("seed", 0)))

    def with_seed(self, seed: int) -> GeneratorSpec:
        return GeneratorSpec(self.categories, seed)


def load_spec(path) -> GeneratorSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return GeneratorSpec.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"{path}: invalid generator spec ({exc})") from exc


def simple_spec(n_categories: int = 3, count: int = 1000, seed: int = 0, low: float = 0.5,
                high: float = 1.0, curve: Curve | None = None, temperatures=None,
                awards=None, score_kind: str = "uniform") -> GeneratorSpec:
    """Identical categories ``c0, c1, ...`` with optional per-category distortions."""
    K = n_categories
    temperatures = [1.0] * K if temperatures is None else list(np.broadcast_to(temperatures, K))
    awards = [0.0] * K if awards is None else list(np.broadcast_to(awards, K))
    cats = [CategorySpec(f"c{k}", count, ScoreDistribution(score_kind, low, high),
                         curve or Curve(), float(temperatures[k]), float(awards[k]))
            for k in range(K)]
    return GeneratorSpec(tuple(cats), seed)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Exact confidence curves and per-sample true confidences."""

    curves: tuple[Curve, ...]
    calibrated_scores: np.ndarray
    true_confidence: np.ndarray
    spec: GeneratorSpec

    def curve(self, k: int, s) -> np.ndarray:
        return self.curves[k](s)

    def population_scores(self, k: int, n: int = 20000) -> np.ndarray:
        """Deterministic quantile grid of category k's calibrated score distribution."""
        return self.spec.categories[k].scores.quantile_grid(n)

    def deviation(self, calibrator, k: int, grid) -> tuple[float, float]:
        """Max-abs and mean-abs gap between a score calibrator and C_k on ``grid``."""
        gap = np.abs(np.asarray(calibrator(grid)) - self.curve(k, grid))
        return float(gap.max()), float(gap.mean())


def _other_mass(rng, q, K, k, temperature, award):
    """Dirichlet split of 1 - q over the K - 1 losing entries, redrawn until k wins."""
    n = len(q)
    others = rng.dirichlet(np.ones(K - 1), size=n) if n else np.zeros((0, K - 1))

    def violations(o):
        Q = o * (1.0 - q)[:, None]
        # after distortion the winning entry is q**T e^-A against the others' q_j**T
        top = temperature * np.log(q) - award
        rest = temperature * np.log(np.maximum(Q.max(axis=1), 1e-300))
        return (Q.max(axis=1) >= q) | (rest >= top)

    bad = violations(others)
    for _ in range(_MAX_REDRAWS):
        if not bad.any():
            break
        others[bad] = rng.dirichlet(np.ones(K - 1), size=int(bad.sum()))
        bad = violations(others)
    if bad.any():
        others[bad] = 1.0 / (K - 1)
        if violations(others).any():
            raise SpecError(f"category {k}: cannot make the category the argmax for some "
                            "scores; raise the score lower bound or reduce the award")
    return others


def generate(spec: GeneratorSpec) -> tuple[LabeledDataset, GroundTruth]:
    K = spec.n_categories
    ids, labels, rows, qs, truth = [], [], [], [], []
    for k, cat in enumerate(spec.categories):
        rng = np.random.Generator(np.random.PCG64(int(spec.seed) ^ k))
        n = cat.count
        q = cat.scores.sample(rng, n)
        c = np.clip(cat.curve(q), 0.0, 1.0)
        tp = rng.random(n) < c
        wrong = rng.integers(0, K - 1, n)
        wrong = wrong + (wrong >= k)
        others = _other_mass(rng, q, K, k, cat.temperature, cat.award)
        Q = np.insert(others * (1.0 - q)[:, None], k, q, axis=1)
        logY = cat.temperature * np.log(np.maximum(Q, 1e-300))
        logY[:, k] -= cat.award
        logY -= logY.max(axis=1, keepdims=True)
        Y = np.exp(logY)
        Y /= Y.sum(axis=1, keepdims=True)
        if n and np.any(np.argmax(Y, axis=1) != k):
            raise SpecError(f"category {cat.name!r}: distortion moved the argmax")
        ids.extend(f"{cat.name}-{i:06d}" for i in range(n))
        labels.append(np.where(tp, k, wrong))
        rows.append(Y)
        qs.append(q)
        truth.append(c)
    names = tuple(c.name for c in spec.categories)
    dataset = LabeledDataset(names, tuple(ids), np.concatenate(labels),
                             np.concatenate(rows).reshape(-1, K))
    gt = GroundTruth(tuple(c.curve for c in spec.categories), np.concatenate(qs),
                     np.concatenate(truth), spec)
    return dataset, gt
