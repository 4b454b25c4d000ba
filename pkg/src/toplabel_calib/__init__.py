"""Top-label confidence calibration for multiclass classifier outputs."""

from .data import LabeledDataset, TopLabelView, confusion_tables, predicted_category, top_label_view
from .errors import (BandwidthSearchError, CalibrationError, CategoryMismatchError, EmptyCategoryWarning,
                     ParseError, SchemaVersionError, SpecError, UncalibratableError)
from .histogram import fit_cumulative, fit_histogram
from .io import ModelArchive, combine_ensemble, load_model, load_predictions, save_model
from .kde import fit_kde, select_bandwidth
from .methods import fit_model
from .metrics import compare, evaluate, evaluate_archive
from .synthetic import GeneratorSpec, generate
from .temperature import fit_csts, fit_cstswa, fit_sts, fit_tswa

__version__ = "0.1.0"

__all__ = [
    "BandwidthSearchError", "CalibrationError", "CategoryMismatchError", "EmptyCategoryWarning",
    "GeneratorSpec", "LabeledDataset", "ModelArchive", "ParseError", "SchemaVersionError",
    "SpecError", "TopLabelView", "UncalibratableError", "combine_ensemble", "compare",
    "confusion_tables", "evaluate", "evaluate_archive", "fit_csts", "fit_cstswa", "fit_cumulative",
    "fit_histogram", "fit_kde", "fit_model", "fit_sts", "fit_tswa", "generate", "load_model",
    "load_predictions", "predicted_category", "save_model", "select_bandwidth", "top_label_view",
]
