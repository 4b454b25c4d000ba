"""Exception types raised across the package."""


class CalibrationError(Exception):
    """Base class for all errors raised by toplabel_calib."""


class ParseError(CalibrationError):
    """A prediction or spec file could not be parsed."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SchemaVersionError(CalibrationError):
    """A model archive was written with an unsupported schema version."""


class UncalibratableError(CalibrationError):
    """A category lacks the samples a calibrator needs to be fitted."""


class BandwidthSearchError(CalibrationError):
    """The bandwidth schedule was exhausted without meeting the constraint."""


class CategoryMismatchError(CalibrationError):
    """A model and a dataset disagree on the category list."""


class SpecError(CalibrationError):
    """A synthetic generator spec is invalid or infeasible."""


class EmptyCategoryWarning(UserWarning):
    """No sample in the dataset predicts the requested category."""
