"""Fit any supported method on a dataset and package it as a ModelArchive."""

from __future__ import annotations

import re
import warnings

import numpy as np

from .data import LabeledDataset, top_label_view
from .errors import CalibrationError, EmptyCategoryWarning, UncalibratableError
from .histogram import DEFAULT_BINS, fit_cumulative, fit_histogram
from .io import ModelArchive, fingerprint
from .kde import fit_kde
from .losses import LOSS_TERMS
from .temperature import fit_csts, fit_cstswa, fit_sts, fit_tswa

METHODS = ("hist", "cum", "cum+", "cum*", "kde:mon", "kde:mon2", "kde:monN", "kde:loo",
           "sts", "csts", "tswa", "cstswa")
TEMPERATURE_METHODS = ("sts", "csts", "tswa", "cstswa")
_CUMULATIVE = {"cum": "plain", "cum+": "median", "cum*": "optimal"}
_KDE_MON = re.compile(r"^kde:mon(\d*|N)$")


def parse_method(method: str, max_sign_changes: int | None = None) -> tuple[str, dict]:
    """Normalize a method name; returns (canonical name, fit options)."""
    if method in ("hist",) or method in _CUMULATIVE or method in TEMPERATURE_METHODS:
        return method, {}
    if method == "kde:loo":
        return method, {"rule": "loo"}
    m = _KDE_MON.match(method)
    if m:
        n = m.group(1)
        if n == "N":
            if max_sign_changes is None:
                raise ValueError("kde:monN needs --max-sign-changes")
            n = max_sign_changes
        n = int(n or 0)
        return ("kde:mon" if n == 0 else f"kde:mon{n}"), {"max_sign_changes": n}
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def fit_model(dataset: LabeledDataset, method: str, loss: str = "nll", n_bins: int = DEFAULT_BINS,
              max_sign_changes: int | None = None) -> ModelArchive:
    if len(dataset) == 0:
        raise CalibrationError("cannot fit on an empty dataset")
    if loss not in LOSS_TERMS:
        raise ValueError(f"unknown loss {loss!r}")
    name, opts = parse_method(method, max_sign_changes)
    common = dict(category_names=dataset.category_names, score_scale=dataset.scale_max,
                  loss=loss, fingerprint=fingerprint(dataset))

    if name in TEMPERATURE_METHODS:
        sts = fit_sts(dataset, loss)
        if name == "sts":
            model = sts
        elif name == "tswa":
            model = fit_tswa(dataset, loss, shared=sts)
        else:
            csts = fit_csts(dataset, loss, shared=sts)
            model = csts if name == "csts" else fit_cstswa(dataset, loss, categorical=csts)
        return ModelArchive(name, temperature=model, final_loss=model.final_loss,
                            options={}, **common)

    calibrators = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyCategoryWarning)
        views = [top_label_view(dataset, k) for k in range(dataset.n_categories)]
    for view, cat_name in zip(views, dataset.category_names):
        try:
            if name == "hist":
                cal = fit_histogram(view, n_bins)
            elif name in _CUMULATIVE:
                cal = fit_cumulative(view, _CUMULATIVE[name], loss)
            elif name == "kde:loo":
                cal = fit_kde(view, "loo")
            else:
                cal = fit_kde(view, "mon", max_sign_changes=opts["max_sign_changes"])
        except UncalibratableError:
            cal = None
        except CalibrationError as exc:
            raise type(exc)(f"category {cat_name!r}: {exc}") from exc
        calibrators.append(cal)
    options = {"n_bins": n_bins} if name == "hist" else dict(opts)
    archive = ModelArchive(name, calibrators=tuple(calibrators), options=options, **common)
    final = float(np.sum(LOSS_TERMS[loss](archive.confidences(dataset), dataset.correct)))
    return ModelArchive(name, calibrators=tuple(calibrators), options=options,
                        final_loss=final, **common)


def describe(archive: ModelArchive) -> list[str]:
    """One human-readable line per category with the fitted parameters."""
    lines = []
    names = archive.category_names
    bad = archive.uncalibratable()
    for k, name in enumerate(names):
        if bad[k]:
            lines.append(f"{name}: uncalibratable")
            continue
        if archive.temperature is not None:
            m = archive.temperature
            T = m.temperatures[0 if len(m.temperatures) == 1 else k]
            text = f"T={T:.6g}"
            if m.awards is not None:
                text += f" A={m.awards[k]:.6g}"
        else:
            cal = archive.calibrators[k]
            if cal.kind == "histogram":
                flagged = int(cal.empty.sum())
                text = f"bins={cal.n_bins} values=[{', '.join(f'{v:.3f}' for v in cal.values)}]"
                if flagged:
                    text += f" empty_bins={flagged}"
            elif cal.kind == "cumulative":
                text = f"variant={cal.variant}"
                if cal.cutoff is not None:
                    text += f" theta={cal.cutoff:.6g} below={cal.below_value:.6g}"
            else:
                text = f"b={cal.bandwidth:.6g} rule={cal.rule} n_tp={cal.n_tp} n_fp={cal.n_fp}"
                if cal.notes:
                    text += " [" + "; ".join(cal.notes) + "]"
        lines.append(f"{name}: {text}")
    lines.append(f"training loss ({archive.loss}): {archive.final_loss!r}")
    return lines
