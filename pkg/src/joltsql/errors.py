"""Exception types shared across the package."""


class JoltError(Exception):
    """Base class for all domain errors."""


class SqlSyntaxError(JoltError):
    """Malformed or unsupported SQL. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownTable(JoltError):
    pass


class UnknownColumn(JoltError):
    pass


class AmbiguousColumn(JoltError):
    pass


class SpanMisaligned(JoltError):
    """A character span boundary falls inside a token."""


class InvalidSegmentation(JoltError):
    """Segment index sets do not partition the sequence."""


class ShapeMismatch(JoltError):
    pass


class EmptyRow(JoltError):
    """An attention mask row has no visible entries."""


class NoMarkers(JoltError):
    pass


class EmptyQuery(JoltError):
    pass


class MissingCacheEntry(JoltError):
    pass


class DegenerateExample(JoltError):
    """Gold SQL references no schema columns; unusable for linking supervision."""


class DegenerateLabels(JoltError):
    """Metric undefined for single-class label vectors."""


class LengthMismatch(JoltError):
    pass


class EmptyPrediction(JoltError):
    """Schema linking predicted no columns at the given threshold."""


class NonFiniteLoss(JoltError):
    pass


class DbError(JoltError):
    pass


class DbUnavailable(JoltError):
    pass


class ConfigError(JoltError):
    pass
