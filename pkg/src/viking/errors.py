"""Exception types raised across the package."""


class VikingError(Exception):
    """Base class for all package errors."""


class ShapeError(VikingError, ValueError):
    """Input arrays do not match the model or operator they are passed to."""


class NumericalError(VikingError, ArithmeticError):
    """A non-finite value appeared.

    ``index`` is the datum (or CG iteration) where it was first seen.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ContractError(VikingError, ValueError):
    """A documented precondition was violated."""


class FormatError(VikingError, ValueError):
    """A file does not follow its declared format."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class TrainingError(VikingError, RuntimeError):
    """Training diverged or a step failed; carries the step coordinates."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class ConfigError(VikingError, ValueError):
    """Invalid run configuration. ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.violations))


class IncompatibleCheckpointError(VikingError, ValueError):
    """Checkpoint model does not match the data or model it is used with."""
