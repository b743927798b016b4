"""Exception hierarchy shared by every subpackage."""


class LoramixError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LoramixError, ValueError):
    pass


class InputTooShortError(LoramixError, ValueError):
    pass


class ConfigurationError(LoramixError, ValueError):
    pass


class CapacityError(LoramixError, RuntimeError):
    """Raised when a sequence would exceed the model context or cache size."""


class AlignmentError(LoramixError, ValueError):
    """Injected embedding spans do not line up with placeholder tokens."""


class DomainError(LoramixError, ValueError):
    pass


class DataError(LoramixError, ValueError):
    pass


class FrozenParameterError(LoramixError, RuntimeError):
    """A parameter group that was declared frozen changed during a stage."""

    def __init__(self, message, changed_groups=()):
        super().__init__(message)
        self.changed_groups = list(changed_groups)


class UndefinedMetricError(LoramixError, ValueError):
    pass


class TemplateError(LoramixError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ExtractionError(LoramixError, ValueError):
    def __init__(self, message, raw_reply=""):
        super().__init__(message)
        self.raw_reply = raw_reply


class TransportError(LoramixError, RuntimeError):
    pass


class AllMaskedWarning(UserWarning):
    """Every position of a masked loss was excluded; the loss is defined as 0."""
