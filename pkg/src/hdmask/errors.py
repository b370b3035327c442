"""Exception hierarchy shared by every layer of the toolkit."""

from __future__ import annotations


class HDMError(Exception):
    """Base class for all toolkit errors."""


class InputError(HDMError, ValueError):
    """Malformed input data: bad shapes, non-finite pixels, missing files."""


class ConfigError(HDMError, ValueError):
    """Invalid hyperparameters or unsupported option values."""


class CapabilityError(HDMError, TypeError):
    """The classifier cannot provide something the caller needs (e.g. input gradients)."""


class NumericError(HDMError, ArithmeticError):
    """A loss or gradient became non-finite during optimization."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class DegenerateWeightsError(InputError):
    """All mixing weights are zero, so the weighted mean is undefined."""


class FormatError(HDMError, ValueError):
    """A saliency file is corrupt, truncated or not a saliency file at all."""


class UnsupportedVersionError(FormatError):
    """A saliency file declares a format version this build cannot read."""


class TrainingError(HDMError, RuntimeError):
    """The synthetic testbed classifier failed to reach its accuracy target."""
