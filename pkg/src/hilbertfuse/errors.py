"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration values (bounds, spacing, layout geometry, ...)."""


class BindingError(ValueError):
    """A posterior was used with a feature basis it was not trained against."""


class ParseError(ValueError):
    """Malformed binary or text input.

    Carries the byte (or line) offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class MetricUndefinedError(ValueError):
    """The requested metric is undefined for the given input (e.g. single-class AUC)."""
