"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class InputError(ValueError):
    """An argument value is outside the operation's domain."""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class FormatError(ValueError):
    """A serialized file (IDX or checkpoint) is malformed."""


class NonFiniteError(FloatingPointError):
    """A kernel produced or received NaN/Inf while finite checks are on."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; message carries step and parameter."""
