"""Command-line front end: ``toplabel-calib <command> ...``.

Exit status: 0 success, 2 usage error, 3 unreadable input (prediction CSV,
model archive, generator spec), 4 fitting or evaluation failure,
5 model/data category mismatch, 1 other I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import sys

from . import __version__
from .errors import (CalibrationError, CategoryMismatchError, ParseError, SchemaVersionError,
                     SpecError)
from .histogram import DEFAULT_BINS
from .io import atomic_write_text, load_model, load_predictions, save_model, write_predictions
from .methods import METHODS, describe, fit_model
from .metrics import METRICS, WEIGHTINGS, compare, evaluate_archive
from .plot import DEFAULT_SUPPORT, write_plots
from .synthetic import generate, load_spec

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_PARSE, EXIT_FIT, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5


def _out(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_fit(args) -> int:
    dataset = load_predictions(args.predictions, args.scale_max)
    archive = fit_model(dataset, args.method, loss=args.loss, n_bins=args.bins,
                        max_sign_changes=args.max_sign_changes)
    save_model(archive, args.out)
    _out("\n".join([f"method: {archive.method}", *describe(archive)]))
    return EXIT_OK


def _data_rows(path):
    """Original CSV rows in the order load_predictions keeps them."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [r for r in rows[1:] if r and any(c.strip() for c in r)]


def cmd_apply(args) -> int:
    archive = load_model(args.model)
    scale = args.scale_max if args.scale_max is not None else archive.score_scale
    dataset = load_predictions(args.predictions, scale)
    conf = archive.confidences(dataset)
    flags = archive.flags(dataset, args.support_threshold)
    header, rows = _data_rows(args.predictions)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*header, "predicted", "confidence", "flag"])
    for row, k, c, f in zip(rows, dataset.predicted, conf, flags):
        writer.writerow([*row, dataset.category_names[k], repr(float(c)), f])
    atomic_write_text(args.out, buf.getvalue())
    n_flagged = sum(1 for f in flags if f)
    _out(f"wrote {len(rows)} rows to {args.out} ({n_flagged} flagged)")
    return EXIT_OK


def _named_models(specs):
    """Parse ``[name=]path`` model arguments; names default to the fitted method."""
    models = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            path, name = spec, None
        archive = load_model(path)
        name = name or archive.method
        if name in models:
            raise ValueError(f"two models named {name!r}; use name=path to tell them apart")
        models[name] = archive
    return models


def _write_report(prefix, suffix_texts) -> None:
    for suffix, text in suffix_texts:
        atomic_write_text(f"{prefix}{suffix}", text)


def cmd_evaluate(args) -> int:
    archive = load_model(args.model)
    scale = args.scale_max if args.scale_max is not None else archive.score_scale
    dataset = load_predictions(args.predictions, scale)
    report = evaluate_archive(archive, dataset, args.bins)
    text = report.to_text(args.weighting)
    if args.out:
        _write_report(args.out, [(".csv", report.to_csv(args.weighting)), (".txt", text),
                                 (".reliability.csv", report.reliability_csv())])
    _out(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    models = _named_models(args.models)
    scale = args.scale_max
    if scale is None:
        scale = next(iter(models.values())).score_scale if models else 1.0
    dataset = load_predictions(args.predictions, scale)
    table = compare(models, dataset, args.metric, args.weighting, n_bins=args.bins)
    text = table.to_text()
    if args.out:
        _write_report(args.out, [(".csv", table.to_csv()), (".txt", text)])
    _out(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    models = _named_models(args.models)
    scale = args.scale_max
    if scale is None:
        scale = next(iter(models.values())).score_scale if models else 1.0
    dataset = load_predictions(args.predictions, scale)
    paths = write_plots(models, dataset, args.out, args.support_threshold, not args.no_density)
    _out(f"wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    dataset, _ = generate(spec)
    write_predictions(dataset, args.out, args.scale_max if args.scale_max is not None else 1.0)
    _out(f"wrote {len(dataset)} samples over {dataset.n_categories} categories to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toplabel-calib",
                                description="Top-label confidence calibration for multiclass classifiers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def scale(sp, default=None):
        sp.add_argument("--scale-max", type=float, default=default, metavar="R",
                        help="row sum of the score columns in the CSV (default: 1, or the model's)")

    f = sub.add_parser("fit", help="fit a calibration method and write a model archive")
    f.add_argument("predictions")
    f.add_argument("--method", required=True,
                   help=f"one of {', '.join(METHODS)}, or kde:mon<N>")
    f.add_argument("--loss", choices=("nll", "brier"), default="nll")
    f.add_argument("--bins", type=int, default=DEFAULT_BINS, metavar="N")
    f.add_argument("--max-sign-changes", type=int, default=None, metavar="N",
                   help="sign-change limit for --method kde:monN")
    f.add_argument("--out", required=True, metavar="PATH")
    scale(f, 1.0)
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("apply", help="add predicted category, confidence and flag columns")
    a.add_argument("model")
    a.add_argument("predictions")
    a.add_argument("--support-threshold", type=float, default=DEFAULT_SUPPORT, metavar="T",
                   help="flag scores below this value on the [0, 1] scale (default 0.15)")
    a.add_argument("--out", required=True, metavar="PATH")
    scale(a)
    a.set_defaults(func=cmd_apply)

    e = sub.add_parser("evaluate", help="per-category NLL, Brier, ECE1 and ECE2")
    e.add_argument("model")
    e.add_argument("predictions")
    e.add_argument("--bins", type=int, default=10, metavar="N", help="confidence bins for ECE")
    e.add_argument("--weighting", choices=WEIGHTINGS, default="sample")
    e.add_argument("--out", metavar="PREFIX", help="write PREFIX.csv, PREFIX.txt, PREFIX.reliability.csv")
    scale(e)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="table of one metric across models and the raw scores")
    c.add_argument("predictions")
    c.add_argument("models", nargs="+", metavar="[NAME=]MODEL")
    c.add_argument("--metric", choices=METRICS, default="nll")
    c.add_argument("--bins", type=int, default=10, metavar="N", help="confidence bins for ECE")
    c.add_argument("--weighting", choices=WEIGHTINGS, default="sample")
    c.add_argument("--out", metavar="PREFIX", help="write PREFIX.csv and PREFIX.txt")
    scale(c)
    c.set_defaults(func=cmd_compare)

    pl = sub.add_parser("plot", help="SVG calibration plots with CSV twins, one per category")
    pl.add_argument("predictions")
    pl.add_argument("models", nargs="+", metavar="[NAME=]MODEL")
    pl.add_argument("--support-threshold", type=float, default=DEFAULT_SUPPORT, metavar="T")
    pl.add_argument("--no-density", action="store_true", help="omit the kernel density panel")
    pl.add_argument("--out", required=True, metavar="DIR")
    scale(pl)
    pl.set_defaults(func=cmd_plot)

    s = sub.add_parser("synth", help="generate a synthetic prediction CSV from a JSON spec")
    s.add_argument("spec")
    s.add_argument("--seed", type=int, default=None, metavar="S", help="override the seed in the generator spec")
    s.add_argument("--out", required=True, metavar="PATH")
    scale(s)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CategoryMismatchError as exc:
        code, message = EXIT_MISMATCH, str(exc)
    except (ParseError, SchemaVersionError, SpecError) as exc:
        code, message = EXIT_PARSE, str(exc)
    except CalibrationError as exc:
        code, message = EXIT_FIT, str(exc)
    except ValueError as exc:
        code, message = EXIT_USAGE, str(exc)
    except OSError as exc:
        code, message = EXIT_OTHER, str(exc)
    print(f"toplabel-calib: error: {message}", file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
