"""Exception types shared across the package."""


class CorexplainError(Exception):
    """Base class for all package errors."""


class ParseError(CorexplainError, ValueError):
    """Malformed input file (CSV row, JSON document)."""


class ConfigError(CorexplainError, ValueError):
    """Invalid configuration or precondition violation."""


class ShapeError(CorexplainError, ValueError):
    """Array dimension mismatch."""


class FormatError(CorexplainError, ValueError):
    """Serialized artifact has a wrong schema, version, or is truncated."""
