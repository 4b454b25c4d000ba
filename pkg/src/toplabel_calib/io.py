"""Prediction files, ensemble combination and model archives.

Prediction files are UTF-8 CSV with header ``id,true,<name_1>,...,<name_K>``
and one sample per line.  Model archives are JSON documents; floats are
written with ``repr`` precision so a save/load cycle is bit exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import LabeledDataset
from .errors import CalibrationError, CategoryMismatchError, ParseError, SchemaVersionError
from .histogram import CumulativeCalibrator, HistogramCalibrator
from .kde import KdeCalibrator
from .temperature import TempFamilyModel

SCHEMA_VERSION = 1
SUM_DRIFT = 0.01
# rows already summing to 1 within rounding are kept as written
RENORM_SLACK = 1e-12
LOG_FLOOR = 1e-300

SCORE_CALIBRATORS = {cls.kind: cls for cls in (HistogramCalibrator, CumulativeCalibrator, KdeCalibrator)}


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_predictions(path, scale_max: float = 1.0) -> LabeledDataset:
    """Read a prediction CSV, rescale rows to [0, 1] and renormalize them.

    Rows whose probabilities sum more than 1% away from ``scale_max`` are
    rejected, as are negative entries, unknown labels and ragged rows.
    """
    if not scale_max > 0:
        raise ValueError("scale_max must be positive")
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text") from exc
    if not rows:
        raise ParseError("empty prediction file", row=1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 4 or header[0] != "id" or header[1] != "true":
        raise ParseError("header must be 'id,true,<name1>,...,<nameK>' with K >= 2", row=1)
    names = header[2:]
    if len(set(names)) != len(names):
        raise ParseError("duplicate category name in header", row=1)
    lookup = {n: i for i, n in enumerate(names)}
    K = len(names)
    ids, labels, scores = [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != K + 2:
            raise ParseError(f"expected {K + 2} columns, found {len(row)}", row=line)
        label = row[1].strip()
        if label not in lookup:
            raise ParseError(f"unknown true label {label!r}", row=line)
        try:
            values = np.array([float(c) for c in row[2:]])
        except ValueError:
            raise ParseError("probability columns must be numbers", row=line) from None
        if not np.all(np.isfinite(values)):
            raise ParseError("probabilities must be finite", row=line)
        if np.any(values < 0):
            raise ParseError("negative probability", row=line)
        total = values.sum()
        if abs(total - scale_max) > SUM_DRIFT * scale_max:
            raise ParseError(f"probabilities sum to {total:g}, expected {scale_max:g}", row=line)
        if scale_max != 1.0:
            values = values / scale_max
        total = values.sum()
        if abs(total - 1.0) > RENORM_SLACK:
            values = values / total
        ids.append(row[0].strip())
        labels.append(lookup[label])
        scores.append(values)
    return LabeledDataset(tuple(names), tuple(ids), np.array(labels, dtype=np.int64),
                          np.array(scores, dtype=np.float64).reshape(-1, K), scale_max)


def format_predictions(dataset: LabeledDataset, scale_max: float = 1.0) -> str:
    """CSV text for ``dataset`` with rows summing to ``scale_max``."""
    lines = [",".join(["id", "true", *dataset.category_names])]
    for sample in dataset:
        lines.append(",".join([sample.id, dataset.category_names[sample.true_label],
                               *(repr(float(v)) for v in sample.scores * scale_max)]))
    return "\n".join(lines) + "\n"


def write_predictions(dataset: LabeledDataset, path, scale_max: float = 1.0) -> None:
    atomic_write_text(path, format_predictions(dataset, scale_max))


def combine_ensemble(member_outputs) -> np.ndarray:
    """softmax of the summed log outputs of M ensemble members.

    ``member_outputs`` has shape (M, K) or (M, n, K).  Zero entries are
    floored at 1e-300 before the log.  Logs are summed in sorted order so
    the result does not depend on member order.
    """
    Y = np.asarray(member_outputs, dtype=np.float64)
    if Y.ndim not in (2, 3) or Y.shape[0] < 1:
        raise CalibrationError("expected member outputs of shape (M, K) or (M, n, K)")
    if Y.shape[0] == 1:
        # softmax(log y) == y for a probability vector
        return Y[0].copy()
    logs = np.sort(np.log(np.maximum(Y, LOG_FLOOR)), axis=0)
    z = logs.sum(axis=0)
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def combine_datasets(members: Sequence[LabeledDataset]) -> LabeledDataset:
    """Combine per-member prediction sets for the same samples into one."""
    if not members:
        raise CalibrationError("need at least one ensemble member")
    first = members[0]
    for m in members[1:]:
        if m.category_names != first.category_names:
            raise CategoryMismatchError("ensemble members disagree on categories")
        if m.ids != first.ids or not np.array_equal(m.labels, first.labels):
            raise CalibrationError("ensemble members disagree on samples or labels")
    scores = combine_ensemble(np.stack([m.scores for m in members]))
    return LabeledDataset(first.category_names, first.ids, first.labels, scores, first.scale_max)


def fingerprint(dataset: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update("\x1f".join(dataset.category_names).encode())
    h.update(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(dataset.scores, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ModelArchive:
    """A fitted calibration model for every category of one dataset.

    Score-based methods keep one calibrator per category (``None`` where the
    category could not be calibrated); temperature methods keep one model in
    ``temperature``.
    """

    method: str
    category_names: tuple[str, ...]
    calibrators: tuple = ()
    temperature: TempFamilyModel | None = None
    score_scale: float = 1.0
    loss: str | None = None
    final_loss: float | None = None
    fingerprint: str = ""
    options: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "category_names", tuple(self.category_names))
        object.__setattr__(self, "calibrators", tuple(self.calibrators))
        if self.temperature is None and len(self.calibrators) != len(self.category_names):
            raise CalibrationError("need one calibrator slot per category")

    def __eq__(self, other):
        if not isinstance(other, ModelArchive):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def uncalibratable(self) -> list[bool]:
        if self.temperature is not None:
            flags = list(self.temperature.uncalibratable)
            return flags or [False] * len(self.category_names)
        return [c is None for c in self.calibrators]

    def check_categories(self, dataset: LabeledDataset) -> None:
        if tuple(dataset.category_names) != self.category_names:
            raise CategoryMismatchError(
                f"model categories {list(self.category_names)} do not match "
                f"dataset categories {list(dataset.category_names)}")

    def confidences(self, dataset: LabeledDataset) -> np.ndarray:
        """Calibrated confidence of every sample's predicted category.

        Samples of uncalibratable categories keep their raw top score.
        """
        self.check_categories(dataset)
        if self.temperature is not None:
            return self.temperature(dataset.scores, dataset.predicted)
        out = dataset.top_scores.copy()
        for k, cal in enumerate(self.calibrators):
            mask = dataset.predicted == k
            if cal is not None and mask.any():
                out[mask] = cal(out[mask])
        return out

    def flags(self, dataset: LabeledDataset, support_threshold: float = 0.15) -> list[str]:
        """Per-sample comma-free flag string ('' when nothing to report)."""
        self.check_categories(dataset)
        s = dataset.top_scores
        k = dataset.predicted
        bad = np.array(self.uncalibratable(), dtype=bool)
        extrapolated = np.zeros(len(dataset), dtype=bool)
        if self.temperature is None:
            for j, cal in enumerate(self.calibrators):
                mask = k == j
                if cal is not None and mask.any():
                    extrapolated[mask] = cal.flags(s[mask])
        out = []
        for i in range(len(dataset)):
            f = []
            if s[i] < support_threshold:
                f.append("below_support")
            if extrapolated[i]:
                f.append("unsupported_score")
            if bad[k[i]]:
                f.append("uncalibratable")
            out.append(";".join(f))
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "method": self.method,
            "category_names": list(self.category_names),
            "score_scale": self.score_scale,
            "loss": self.loss,
            "final_loss": self.final_loss,
            "fingerprint": self.fingerprint,
            "options": dict(self.options),
            "calibrators": [None if c is None else c.to_dict() for c in self.calibrators],
            "temperature": None if self.temperature is None else self.temperature.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelArchive:
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"model archive schema version {version!r} is not supported "
                f"(this build reads version {SCHEMA_VERSION})")
        cals = []
        for c in d["calibrators"]:
            if c is None:
                cals.append(None)
            elif c.get("kind") in SCORE_CALIBRATORS:
                cals.append(SCORE_CALIBRATORS[c["kind"]].from_dict(c))
            else:
                raise CalibrationError(f"unknown calibrator kind {c.get('kind')!r}")
        temp = d.get("temperature")
        if temp is not None and temp.get("kind") != TempFamilyModel.kind_tag:
            raise CalibrationError(f"unknown model kind {temp.get('kind')!r}")
        return cls(d["method"], tuple(d["category_names"]), tuple(cals),
                   None if temp is None else TempFamilyModel.from_dict(temp),
                   float(d["score_scale"]), d["loss"], d["final_loss"], d["fingerprint"],
                   dict(d.get("options", {})), version)


def dumps_model(archive: ModelArchive) -> str:
    return json.dumps(archive.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_model(archive: ModelArchive, path) -> None:
    atomic_write_text(path, dumps_model(archive))


def load_model(path) -> ModelArchive:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt model archive ({exc})") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: corrupt model archive (not an object)")
    try:
        return ModelArchive.from_dict(data)
    except SchemaVersionError:
        raise
    except (CalibrationError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: corrupt model archive ({exc!r})") from exc
