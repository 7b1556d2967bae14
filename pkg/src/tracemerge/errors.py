"""Exception hierarchy shared by every pipeline stage."""


class TraceError(Exception):
    """Base class for all errors raised by tracemerge."""


class FormatError(TraceError):
    """Input is not something we can read."""


class BadMagic(FormatError):
    pass


class UnsupportedLinkType(FormatError):
    pass


class TruncatedRecord(FormatError):
    def __init__(self, ordinal, message=None):
        self.ordinal = ordinal
        super().__init__(message or f"record {ordinal} is truncated")


class MixedLinkType(TraceError):
    pass


class TimestampOverflow(TraceError):
    pass


class TooShort(FormatError):
    pass


class MalformedRadiotap(FormatError):
    pass


class SyncError(TraceError):
    pass


class TooFewReferences(SyncError):
    pass


class DegenerateWindow(SyncError):
    pass


class ImplausibleSlope(SyncError):
    pass


class EmptySet(SyncError, ValueError):
    pass


class UnorderedInput(TraceError):
    def __init__(self, ordinal, message=None):
        self.ordinal = ordinal
        super().__init__(message or f"timestamps regress at record {ordinal}")


class BadConfig(TraceError, ValueError):
    pass
