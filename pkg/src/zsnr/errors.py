"""Exception hierarchy shared by every module in the package."""


class ZsnrError(Exception):
    """Base class for all package errors."""

    code = "error"


class InvalidArgumentError(ZsnrError, ValueError):
    code = "invalid-argument"


class SingularParameterizationError(ZsnrError, ValueError):
    """Raised when epsilon-prediction is asked to invert a zero-SNR timestep.

    At ``alpha_bar == 0`` the noisy input is pure noise, so an epsilon
    prediction carries no information about ``x0`` and cannot be inverted.
    """

    code = "singular-parameterization"


class DegenerateInputError(ZsnrError, ValueError):
    code = "degenerate-input"


class TrainingDivergedError(ZsnrError, RuntimeError):
    code = "training-diverged"


class CheckpointFormatError(ZsnrError, ValueError):
    code = "checkpoint-format"


class ConfigError(ZsnrError, ValueError):
    code = "config-validation"
