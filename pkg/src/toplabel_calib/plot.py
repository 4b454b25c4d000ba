"""Per-category calibration plots as plain SVG, each with a CSV twin.

The CSV holds every number drawn in the SVG on the internal [0, 1] score
scale, one row per point: ``kind,series,x,y,count``.  Kinds are ``curve``
(score calibrators on the 512-point grid), ``cloud`` (temperature models,
one point per sample), ``hist`` (10-bin empirical TP fraction at the bin's
left edge), ``density`` (count-scaled kernel densities) and ``support``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping
from xml.sax.saxutils import escape

import numpy as np

from .data import LabeledDataset, top_label_view
from .errors import EmptyCategoryWarning
from .histogram import DEFAULT_BINS, bin_index
from .io import ModelArchive, atomic_write_text
from .kde import GRID_POINTS, evaluation_grid

DEFAULT_SUPPORT = 0.15
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP = 60, 20, 30
MAIN_H, GAP, DENSITY_H = 300, 40, 110


@dataclass(frozen=True)
class PlotBundle:
    category: str
    grid: np.ndarray
    curves: dict          # method -> confidence on grid
    clouds: dict          # method -> (scores, confidences)
    hist_edges: np.ndarray
    hist_values: np.ndarray  # NaN where the bin is empty
    hist_counts: np.ndarray
    densities: dict | None   # {"tp": ..., "fp": ...} scaled by counts
    support_threshold: float
    scale_max: float


def plot_bundle(models: Mapping[str, ModelArchive], dataset: LabeledDataset, k: int,
                support_threshold: float = DEFAULT_SUPPORT, density: bool = True,
                n_bins: int = DEFAULT_BINS) -> PlotBundle:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyCategoryWarning)
        view = top_label_view(dataset, k)
    grid = evaluation_grid(0.0, 1.0, GRID_POINTS)
    curves, clouds = {}, {}
    mask = dataset.predicted == k
    for name in sorted(models):
        archive = models[name]
        archive.check_categories(dataset)
        if archive.temperature is not None:
            if mask.any():
                clouds[name] = (dataset.top_scores[mask],
                                archive.temperature(dataset.scores[mask], dataset.predicted[mask]))
        elif archive.calibrators[k] is not None:
            curves[name] = np.asarray(archive.calibrators[k](grid), dtype=np.float64)

    edges = np.linspace(0.0, 1.0, n_bins + 1)
    scores, is_tp = view.labeled_scores()
    idx = bin_index(edges, scores)
    counts = np.bincount(idx, minlength=n_bins)
    tp = np.bincount(idx, weights=is_tp.astype(np.float64), minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, tp / np.maximum(counts, 1), np.nan)

    dens = None
    if density:
        for name in sorted(models):
            cal = None if models[name].temperature is not None else models[name].calibrators[k]
            if cal is not None and cal.kind == "kde":
                fp = cal.fp_density
                dens = {"tp": cal.n_tp * cal.tp_density(grid),
                        "fp": np.zeros_like(grid) if fp is None else cal.n_fp * fp(grid)}
                break
    return PlotBundle(dataset.category_names[k], grid, curves, clouds, edges, values, counts,
                      dens, float(support_threshold), float(dataset.scale_max))


def bundle_csv(b: PlotBundle) -> str:
    rows = ["kind,series,x,y,count"]
    for name, y in b.curves.items():
        rows.extend(f"curve,{name},{x!r},{v!r}," for x, v in zip(b.grid.tolist(), y.tolist()))
    for name, (s, c) in b.clouds.items():
        order = np.lexsort((c, s))
        rows.extend(f"cloud,{name},{x!r},{v!r}," for x, v in zip(s[order].tolist(), c[order].tolist()))
    for lo, v, n in zip(b.hist_edges[:-1].tolist(), b.hist_values.tolist(), b.hist_counts.tolist()):
        rows.append(f"hist,empirical,{lo!r},{'' if v != v else repr(v)},{n}")
    if b.densities:
        for name in ("tp", "fp"):
            rows.extend(f"density,{name},{x!r},{v!r}," for x, v in zip(b.grid.tolist(), b.densities[name].tolist()))
    rows.append(f"support,threshold,{b.support_threshold!r},,")
    return "\n".join(rows) + "\n"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def bundle_svg(b: PlotBundle) -> str:
    pw = WIDTH - LEFT - RIGHT
    height = TOP + MAIN_H + (GAP + DENSITY_H if b.densities else 0) + 45

    def px(x):
        return LEFT + pw * np.asarray(x, dtype=np.float64)

    def py(y, top=TOP, h=MAIN_H):
        return top + h * (1.0 - np.asarray(y, dtype=np.float64))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">',
           f'<metadata>category={escape(b.category)};support_threshold={b.support_threshold!r};'
           f'scale_max={b.scale_max!r};methods={escape(",".join([*b.curves, *b.clouds]))}</metadata>',
           f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(b.category)}</text>']

    # below-support region
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{_fmt(pw * b.support_threshold)}" height="{MAIN_H}" '
               'fill="#eeeeee" stroke="#888888" stroke-dasharray="4 3" class="support"/>')
    # histogram bars; bars reaching below the support threshold are dashed
    width = b.hist_edges[1] - b.hist_edges[0]
    for lo, v in zip(b.hist_edges[:-1], b.hist_values):
        if v != v:
            continue
        dash = ' stroke-dasharray="4 3"' if lo < b.support_threshold else ""
        out.append(f'<rect x="{_fmt(px(lo))}" y="{_fmt(py(v))}" width="{_fmt(pw * width)}" '
                   f'height="{_fmt(MAIN_H * v)}" fill="none" stroke="#444444"{dash}/>')
    # axes and ticks on the display scale
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{MAIN_H}" fill="none" stroke="black"/>')
    for t in np.linspace(0.0, 1.0, 6):
        out.append(f'<text x="{_fmt(px(t))}" y="{TOP + MAIN_H + 14}" text-anchor="middle">'
                   f'{t * b.scale_max:g}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{TOP + MAIN_H + 30}" text-anchor="middle">score</text>')
    out.append(f'<text x="14" y="{TOP + MAIN_H / 2}" transform="rotate(-90 14 {TOP + MAIN_H / 2})" '
               'text-anchor="middle">confidence</text>')

    series = [*b.curves, *b.clouds]
    colors = {name: PALETTE[i % len(PALETTE)] for i, name in enumerate(series)}
    for name, y in b.curves.items():
        pts = " ".join(f"{_fmt(x)},{_fmt(v)}" for x, v in zip(px(b.grid), py(y)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colors[name]}" stroke-width="1.5"/>')
    for name, (s, c) in b.clouds.items():
        order = np.lexsort((c, s))
        for x, v in zip(px(s[order]), py(c[order])):
            out.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(v)}" r="1.2" fill="{colors[name]}" fill-opacity="0.5"/>')
    for i, name in enumerate(series):
        y = TOP + 14 + 14 * i
        out.append(f'<line x1="{LEFT + 10}" y1="{y - 4}" x2="{LEFT + 30}" y2="{y - 4}" '
                   f'stroke="{colors[name]}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + 34}" y="{y}">{escape(name)}</text>')

    if b.densities:
        top = TOP + MAIN_H + GAP + 5
        peak = max(float(b.densities["tp"].max()), float(b.densities["fp"].max())) or 1.0
        out.append(f'<rect x="{LEFT}" y="{top}" width="{pw}" height="{DENSITY_H}" fill="none" stroke="black"/>')
        for name, color in (("tp", "#2ca02c"), ("fp", "#d62728")):
            pts = " ".join(f"{_fmt(x)},{_fmt(v)}" for x, v in
                           zip(px(b.grid), py(b.densities[name] / peak, top, DENSITY_H)))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>')
            out.append(f'<text x="{WIDTH - RIGHT - 4}" y="{top + (14 if name == "tp" else 28)}" '
                       f'text-anchor="end" fill="{color}">{name.upper()} density x count</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _file_stem(name: str, k: int) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)
    return f"{k:02d}_{safe}"


def write_plots(models: Mapping[str, ModelArchive], dataset: LabeledDataset, out_dir,
                support_threshold: float = DEFAULT_SUPPORT, density: bool = True) -> list[Path]:
    """Write ``<k>_<name>.svg`` and ``.csv`` for every category; returns the paths."""
    out_dir = Path(out_dir)
    paths = []
    for k, name in enumerate(dataset.category_names):
        b = plot_bundle(models, dataset, k, support_threshold, density)
        stem = out_dir / _file_stem(name, k)
        atomic_write_text(stem.with_suffix(".svg"), bundle_svg(b))
        atomic_write_text(stem.with_suffix(".csv"), bundle_csv(b))
        paths += [stem.with_suffix(".svg"), stem.with_suffix(".csv")]
    return paths
