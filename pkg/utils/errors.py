from typing import Optional


class BFLCError(Exception):
    """Base class for all simulator errors."""

    code = "error"


class InvalidArgument(BFLCError, ValueError):
    code = "invalid-argument"


class OutOfOrder(BFLCError):
    code = "out-of-order"


class RoundFull(BFLCError):
    code = "round-full"


class RoundIncomplete(BFLCError):
    code = "round-incomplete"


class PrunedUnavailable(BFLCError):
    code = "pruned-unavailable"


class Forbidden(BFLCError):
    code = "forbidden"


class DuplicateSubmission(BFLCError):
    code = "duplicate-submission"


class ElectionFailure(BFLCError):
    code = "election-failure"


class AdmissionDenied(BFLCError):
    code = "admission-denied"


class PaymentRequired(BFLCError):
    code = "payment-required"


class NotFound(BFLCError):
    code = "not-found"


class RoundAborted(BFLCError):
    code = "round-aborted"


class ExperimentFailure(BFLCError):
    code = "experiment-failure"


class ConfigError(BFLCError):
    """Invalid experiment configuration; `line` points into the source file when known."""

    code = "config-error"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ChainFormatError(BFLCError):
    """Unparseable chain file line."""

    code = "chain-format"

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
