"""Exception types shared across the package.

Plain ``ValueError`` is used for bad parameters/shapes; the classes here mark
conditions a caller may want to handle specially (resampling an ill-conditioned
batch, reporting the epoch a training run diverged in, ...).
"""


class DataFormatError(Exception):
    """A data file could not be parsed; message names the file and line."""


class TrainingError(RuntimeError):
    """Training produced non-finite values. Carries the epoch it happened in."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class OptimizerError(RuntimeError):
    """Non-finite gradients fed to the optimizer."""


class DegenerateDataError(RuntimeError):
    """Data without usable geometry (e.g. all pairwise distances zero)."""


class IllConditionedBatchError(RuntimeError):
    """Batch output is numerically rank deficient; the batch should be resampled."""


class StateError(RuntimeError):
    """Operation called on an object in the wrong state (e.g. embed before freeze)."""
