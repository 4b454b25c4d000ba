"""Core types: labeled prediction sets, top-label views and confusion tables.

Scores are always stored on the [0, 1] scale.  Files on another scale
(for instance an ensemble of ten softmax outputs summed to 0..10) are divided
by their declared maximum at ingestion and the original scale is kept in
``LabeledDataset.scale_max`` for display only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import CalibrationError, EmptyCategoryWarning

SUM_TOLERANCE = 1e-9


def predicted_category(scores) -> np.ndarray | int:
    """Argmax of a score vector (or of each row of a matrix).

    Ties go to the lowest index, which is what ``np.argmax`` does.
    """
    scores = np.asarray(scores)
    k = np.argmax(scores, axis=-1)
    if k.ndim == 0:
        return int(k)
    return k


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class Sample(NamedTuple):
    id: str
    true_label: int
    scores: np.ndarray


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A test set: one row of K probabilities per sample plus its true label.

    ``scores`` has shape (n, K) and every row is a probability vector.
    """

    category_names: tuple[str, ...]
    ids: tuple[str, ...]
    labels: np.ndarray
    scores: np.ndarray
    scale_max: float = 1.0
    predicted: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.category_names)
        if len(set(names)) != len(names):
            raise CalibrationError("category names must be unique")
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            scores = scores.reshape(-1, len(names))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        ids = tuple(str(i) for i in self.ids)
        K = len(names)
        if scores.shape[1] != K:
            raise CalibrationError(f"expected {K} score columns, got {scores.shape[1]}")
        if not (len(ids) == len(labels) == scores.shape[0]):
            raise CalibrationError("ids, labels and scores disagree on sample count")
        if len(labels) and (labels.min() < 0 or labels.max() >= K):
            raise CalibrationError("true label outside [0, K)")
        if np.any(scores < 0) or not np.all(np.isfinite(scores)):
            raise CalibrationError("scores must be finite and nonnegative")
        if len(scores):
            drift = np.abs(scores.sum(axis=1) - 1.0)
            if drift.max() > SUM_TOLERANCE:
                bad = int(np.argmax(drift))
                raise CalibrationError(f"sample {ids[bad]!r}: scores do not sum to 1")
        if not self.scale_max > 0:
            raise CalibrationError("scale_max must be positive")
        object.__setattr__(self, "category_names", names)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "scores", _frozen(scores))
        object.__setattr__(self, "scale_max", float(self.scale_max))
        object.__setattr__(self, "predicted", _frozen(np.argmax(scores, axis=1)) if len(scores)
                           else _frozen(np.zeros(0, dtype=np.int64)))

    @classmethod
    def from_samples(cls, category_names: Sequence[str], samples: Sequence[Sample],
                     scale_max: float = 1.0) -> LabeledDataset:
        K = len(category_names)
        scores = np.array([s.scores for s in samples], dtype=np.float64).reshape(-1, K)
        return cls(tuple(category_names), tuple(s.id for s in samples),
                   np.array([s.true_label for s in samples], dtype=np.int64), scores, scale_max)

    @property
    def n_categories(self) -> int:
        return len(self.category_names)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield Sample(self.ids[i], int(self.labels[i]), self.scores[i])

    @property
    def top_scores(self) -> np.ndarray:
        """S(X) = y_{k(X)}(X) for every sample."""
        return self.scores[np.arange(len(self)), self.predicted]

    @property
    def correct(self) -> np.ndarray:
        return self.labels == self.predicted

    def subset(self, index) -> LabeledDataset:
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return LabeledDataset(self.category_names, tuple(self.ids[i] for i in index),
                              self.labels[index], self.scores[index], self.scale_max)


@dataclass(frozen=True, eq=False)
class TopLabelView:
    """Samples predicted as one category, split into true and false positives."""

    category: int
    tp_scores: np.ndarray
    fp_scores: np.ndarray
    score_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        lo, hi = self.score_range
        tp = np.sort(np.asarray(self.tp_scores, dtype=np.float64).reshape(-1))
        fp = np.sort(np.asarray(self.fp_scores, dtype=np.float64).reshape(-1))
        for s in (tp, fp):
            if len(s) and (s[0] < lo or s[-1] > hi):
                raise CalibrationError(f"score outside admissible range [{lo}, {hi}]")
        object.__setattr__(self, "tp_scores", _frozen(tp))
        object.__setattr__(self, "fp_scores", _frozen(fp))
        object.__setattr__(self, "score_range", (float(lo), float(hi)))

    @property
    def n_tp(self) -> int:
        return len(self.tp_scores)

    @property
    def n_fp(self) -> int:
        return len(self.fp_scores)

    @property
    def n_positive(self) -> int:
        return self.n_tp + self.n_fp

    @property
    def precision(self) -> float | None:
        if self.n_positive == 0:
            return None
        return self.n_tp / self.n_positive

    def labeled_scores(self) -> tuple[np.ndarray, np.ndarray]:
        """All positive scores, sorted, and the matching TP flags.

        Ties are ordered FP before TP so the result is deterministic.
        """
        scores = np.concatenate([self.fp_scores, self.tp_scores])
        is_tp = np.concatenate([np.zeros(self.n_fp, bool), np.ones(self.n_tp, bool)])
        order = np.lexsort((is_tp, scores))
        return scores[order], is_tp[order]

    def with_extra_tp(self, scores) -> TopLabelView:
        return TopLabelView(self.category, np.concatenate([self.tp_scores, np.asarray(scores, float)]),
                            self.fp_scores, self.score_range)


def top_label_view(dataset: LabeledDataset, k: int) -> TopLabelView:
    """Positives of category ``k``: samples whose argmax is ``k``."""
    if not 0 <= k < dataset.n_categories:
        raise CalibrationError(f"category index {k} outside [0, {dataset.n_categories})")
    mask = dataset.predicted == k
    s = dataset.scores[mask, k]
    tp = dataset.labels[mask] == k
    if not mask.any():
        warnings.warn(f"no sample predicts category {dataset.category_names[k]!r}",
                      EmptyCategoryWarning, stacklevel=2)
    return TopLabelView(k, s[tp], s[~tp])


@dataclass(frozen=True, eq=False)
class ConfusionTables:
    """Joint counts (rows = true, columns = predicted) and both normalizations.

    Rows/columns without counts are NaN in the normalized tables and are
    listed as undefined by ``row_defined`` / ``col_defined``.
    """

    joint: np.ndarray
    row_normalized: np.ndarray
    col_normalized: np.ndarray
    category_names: tuple[str, ...] = ()

    @property
    def row_defined(self) -> np.ndarray:
        return self.joint.sum(axis=1) > 0

    @property
    def col_defined(self) -> np.ndarray:
        return self.joint.sum(axis=0) > 0

    def format(self, which: str = "joint") -> str:
        table = getattr(self, which)
        names = self.category_names or tuple(str(i) for i in range(len(table)))
        width = max(10, max(len(n) for n in names) + 1)
        lines = [" " * width + "".join(n.rjust(width) for n in names)]
        for i, name in enumerate(names):
            cells = []
            for j in range(len(names)):
                v = table[i, j]
                if which == "joint":
                    cells.append(str(int(v)).rjust(width))
                elif np.isnan(v):
                    cells.append("undefined".rjust(width))
                else:
                    cells.append(f"{v:.3f}".rjust(width))
            lines.append(name.rjust(width) + "".join(cells))
        return "\n".join(lines)


def confusion_tables(dataset: LabeledDataset) -> ConfusionTables:
    if len(dataset) == 0:
        raise CalibrationError("confusion tables need a nonempty dataset")
    K = dataset.n_categories
    joint = np.zeros((K, K), dtype=np.int64)
    np.add.at(joint, (dataset.labels, dataset.predicted), 1)
    rows = joint.sum(axis=1, keepdims=True)
    cols = joint.sum(axis=0, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        row_norm = np.where(rows > 0, joint / rows, np.nan)
        col_norm = np.where(cols > 0, joint / cols, np.nan)
    return ConfusionTables(_frozen(joint), _frozen(row_norm), _frozen(col_norm),
                           dataset.category_names)


def conf1(dataset: LabeledDataset) -> list[float | None]:
    """Per-category precision |TP_k| / (|TP_k| + |FP_k|); None if k is never predicted."""
    if len(dataset) == 0:
        raise CalibrationError("conf1 needs a nonempty dataset")
    out: list[float | None] = []
    for k in range(dataset.n_categories):
        mask = dataset.predicted == k
        n = int(mask.sum())
        out.append(None if n == 0 else int((dataset.labels[mask] == k).sum()) / n)
    return out
