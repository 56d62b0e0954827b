"""Exception hierarchy. The CLI maps these onto exit codes."""


class MoevcError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MoevcError):
    """Operand shapes or index ranges are incompatible."""


class ConfigError(MoevcError):
    """Config file problem; carries the offending line number when known."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DataError(MoevcError):
    """A data file or corpus is malformed or inconsistent."""


class BadMagicError(DataError):
    """File header magic does not match the expected format."""


class TruncatedPayloadError(DataError):
    """File ended before the declared payload was complete."""


class BadDimensionError(DataError):
    """A declared dimension is zero or otherwise invalid."""


class ZeroVarianceError(DataError):
    """A feature dimension has zero variance; names the dimension."""

    def __init__(self, dim):
        super().__init__(f"feature dimension {dim} has zero variance")
        self.dim = dim


class BadF0Error(DataError):
    """An F0 value is negative or stats are unusable."""


class UnknownSpeakerError(DataError):
    """Speaker id not present in the model; lists the known ids."""

    def __init__(self, speaker, known):
        super().__init__(f"unknown speaker {speaker!r}; known: {', '.join(known)}")
        self.speaker = speaker
        self.known = list(known)


class NumericFailureError(MoevcError):
    """A numeric invariant broke (non-finite loss, failed gradient check)."""
