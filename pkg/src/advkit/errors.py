"""Exception types shared across the toolkit."""


class AdvkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(AdvkitError):
    """Malformed image file. Carries the byte offset of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(AdvkitError):
    """File parsed but uses a feature outside the supported subset."""


class WriteError(AdvkitError):
    """Image or report could not be written."""


class ShapeError(AdvkitError):
    """Operand dimensions do not match what the operation requires."""


class InvalidSpecError(AdvkitError):
    """Corruption spec names an unknown method or out-of-range parameter."""


class UnsupportedCalibrationError(AdvkitError):
    """Method has no continuous, PSNR-monotone parameter to calibrate."""


class InvalidPipelineError(AdvkitError):
    """Preprocessing pipeline violates its mode constraints."""


class NumericalError(AdvkitError):
    """NaN or Inf appeared where finite arithmetic was required."""


class TrainingError(AdvkitError):
    """Training diverged or was fed degenerate data.

    ``epoch`` is the epoch index at which the failure surfaced, when known.
    """

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class FormatError(AdvkitError):
    """Params file is truncated, corrupt, or has an unknown version."""


class PartialShadowError(AdvkitError):
    """Shadow training ran out of query budget.

    Carries whatever params were trained before the budget ran out (may be
    ``None`` when no labeling happened at all) and the queries spent.
    """

    def __init__(self, message, params=None, queries_used=0):
        super().__init__(message)
        self.params = params
        self.queries_used = queries_used


class UndefinedRateError(AdvkitError):
    """A rate was requested over an empty denominator."""


class TransportError(AdvkitError):
    """Remote target unreachable after the configured retries."""


class ProtocolError(AdvkitError):
    """Remote target answered with a schema-violating response."""
