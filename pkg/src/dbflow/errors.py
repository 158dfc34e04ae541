class DimensionError(ValueError):
    """Operand shapes do not agree."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap."""


class StepSizeError(ValueError):
    """Step too large for the requested retraction (e.g. divergent Neumann series)."""
