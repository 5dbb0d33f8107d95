"""Exception taxonomy. The CLI maps these onto exit codes (see cli.EXIT_*)."""


class DrdError(Exception):
    pass


class DimensionError(DrdError, ValueError):
    """Tensor rank/shape/axis mismatch."""


class ConfigurationError(DrdError, ValueError):
    """Invalid hyperparameter, config key, or config value."""


class UsageError(DrdError, ValueError):
    """API misuse: non-scalar backward root, missing gradient, bad argument."""


class DataError(DrdError, OSError):
    """Unreadable/miswritten file, wrong image type, missing dataset piece."""


class CheckpointError(DrdError, OSError):
    """Corrupt or truncated checkpoint stream."""


class CompatibilityError(DrdError, ValueError):
    """Checkpoint does not match the constructed network (magic/version/shape)."""


class DivergenceError(DrdError, ArithmeticError):
    """Non-finite loss or state during training."""
