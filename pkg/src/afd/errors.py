"""Exception hierarchy.

Every error raised by the library derives from :class:`AfdError`.  The
``kind`` attribute groups errors the way the CLI reports them (bad input,
bad configuration, not enough data).
"""


class AfdError(Exception):
    kind = "input"


class TraceError(AfdError, ValueError):
    """Base class for trace file problems."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingHeader(TraceError):
    pass


class MalformedLine(TraceError):
    pass


class NonMonotonicTimestamp(TraceError):
    pass


class DimensionMismatch(TraceError):
    pass


class TooFewPackets(AfdError, ValueError):
    pass


class InvalidCutoff(AfdError, ValueError):
    kind = "config"


class BadLinkIndex(AfdError, IndexError):
    pass


class BadSubcarrierIndex(AfdError, IndexError):
    pass


class WindowTooShort(AfdError, ValueError):
    kind = "config"


class TraceTooShort(AfdError, ValueError):
    kind = "insufficient_data"


class EndOutOfRange(AfdError, ValueError):
    pass


class BadCounts(AfdError, ValueError):
    kind = "config"


class EmptyChannel(AfdError, ValueError):
    pass


class LengthMismatch(AfdError, ValueError):
    pass


class EmptyTrainingSet(AfdError, ValueError):
    kind = "insufficient_data"


class EmptyResultingSet(EmptyTrainingSet):
    pass


class LayoutMismatch(AfdError, ValueError):
    pass


class CorruptModel(AfdError, ValueError):
    pass


class VersionMismatch(CorruptModel):
    pass


class InvalidScenario(AfdError, ValueError):
    pass


class MalformedScenario(InvalidScenario):
    pass


class OverlappingEvents(InvalidScenario):
    pass


class InsufficientData(AfdError, ValueError):
    kind = "insufficient_data"


class ConfigError(AfdError, ValueError):
    kind = "config"
