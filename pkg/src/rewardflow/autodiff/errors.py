"""Exception hierarchy for the tensor/autodiff core."""


class AutodiffError(Exception):
    """Base class for all tensor-core failures."""


class DimensionError(AutodiffError):
    """Operand shapes are incompatible with the requested operation."""


class NumericalError(AutodiffError):
    """An operation produced NaN/Inf or otherwise left the finite domain."""


class TapeError(AutodiffError):
    """Backward-pass misuse: no tape, non-scalar loss, or untracked output."""


class ConfigurationError(AutodiffError):
    """An operation was configured with an invalid hyperparameter."""


class OptimizerError(AutodiffError):
    """Optimizer invariant violation (e.g. a parameter missing its gradient)."""
