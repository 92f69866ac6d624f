"""Exception types shared across the package."""


class LoccTomoError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LoccTomoError):
    """Non-finite or malformed input data."""


class DegenerateBlockError(LoccTomoError):
    """A covariance block that must be inverted is numerically singular."""


class DegenerateCaseError(LoccTomoError):
    """A solver precondition fails because the state sits on a degenerate
    parameter configuration; carries the diagnosis string."""

    def __init__(self, message, diagnosis):
        super().__init__(message)
        self.diagnosis = diagnosis


class InconsistentStatisticsError(LoccTomoError):
    """Measured quantities violate an exact constraint beyond tolerance,
    signalling corrupted or too-noisy input."""


class UnreliableConditioningError(LoccTomoError):
    """A conditional subensemble has too little weight for its moments to
    be meaningful."""


class TailTooLargeError(LoccTomoError):
    """The Fock-space cutoff leaves too much probability outside the
    truncated basis."""

    def __init__(self, message, tail):
        super().__init__(message)
        self.tail = tail


class ContractViolationError(LoccTomoError):
    """An operation was called outside its documented contract."""


class ProtocolFailureError(LoccTomoError):
    """The reconstruction protocol could not complete."""
