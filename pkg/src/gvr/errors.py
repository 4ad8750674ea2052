"""Exception taxonomy shared across the package.

Every error raised by library code derives from :class:`GvrError` so the CLI
can render a single machine-parsable line and pick an exit code.
"""


class GvrError(Exception):
    """Base class for all package errors."""

    kind = "error"


class DimensionError(GvrError, ValueError):
    """Tensor shapes are incompatible with an operation."""

    kind = "dimension"


class RangeError(GvrError, ValueError):
    """A scalar argument is outside its documented range."""

    kind = "range"


class ContractViolation(GvrError, ValueError):
    """A documented precondition was violated by the caller."""

    kind = "contract"


class DegenerateInputError(GvrError, ValueError):
    """Numerically degenerate input (e.g. zero-norm vector)."""

    kind = "degenerate-input"


class CapacityError(GvrError, ValueError):
    """Input exceeds a configured capacity (e.g. more frames than positions)."""

    kind = "capacity"


class FormatError(GvrError, ValueError):
    """A file does not conform to its binary/JSON format."""

    kind = "format"


class CorruptBankError(GvrError, ValueError):
    """An embedding bank violates its invariants."""

    kind = "corrupt-bank"


class ConfigurationError(GvrError, ValueError):
    """A run configuration is invalid or inconsistent with the data."""

    kind = "configuration"


class UsageError(GvrError, ValueError):
    """An operation was invoked on the wrong kind of artifact."""

    kind = "usage"


class ValidationError(GvrError, ValueError):
    """CLI-level config validation failure; message lists all violations."""

    kind = "validation"


class TrainingDiverged(GvrError, RuntimeError):
    """A training loop produced a non-finite loss."""

    kind = "diverged"
