"""Exception types shared across the package.

Every error raised by public entry points subclasses FedFaultError, so callers
can catch one type at the boundary.  Most also subclass ValueError because they
signal bad arguments rather than broken state.
"""


class FedFaultError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FedFaultError, ValueError):
    """An array argument has the wrong dimensionality or length."""


class LabelError(FedFaultError, ValueError):
    """A label value falls outside the expected class range."""


class NumericalError(FedFaultError, ArithmeticError):
    """A computation produced or received non-finite values."""


class EmptyResample(FedFaultError, ValueError):
    """Resampling would produce fewer than one output sample."""


class NoWindows(FedFaultError, ValueError):
    """A signal is shorter than a single segmentation window."""


class EmptyDataset(FedFaultError, ValueError):
    """An operation that needs samples received an empty dataset."""


class EmptyInput(FedFaultError, ValueError):
    """An operation that needs at least one element received none."""


class ZeroVector(FedFaultError, ValueError):
    """Cosine similarity is undefined for a zero-norm vector."""


class DegenerateInput(FedFaultError, ValueError):
    """Input lacks the variation the operation requires (e.g. identical rows)."""


class PlanError(FedFaultError, ValueError):
    """A client plan is inconsistent with the available data."""


class ConfigError(FedFaultError, ValueError):
    """An experiment configuration failed validation.

    The message starts with the dotted path of the offending field.
    """
