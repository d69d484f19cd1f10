"""Exception hierarchy.

The three top-level families map onto the CLI exit codes: ``InputError`` -> 2,
``NumericalError`` -> 3, ``ProtocolError`` -> 4.
"""


class QnarError(Exception):
    """Base class for every error raised by this package."""


class InputError(QnarError, ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(QnarError, ArithmeticError):
    """An iterative computation failed to produce a trustworthy result."""


class ProtocolError(QnarError):
    """An auction operation was attempted out of order or with a bad payload."""


# contribution graph
class InvalidEvent(InputError):
    pass


class UnknownEdgeKind(InputError):
    pass


class DanglingTarget(InputError):
    pass


class EventOutsideHorizon(InputError):
    pass


class InvalidWeights(InputError):
    pass


# ranking
class NoConvergence(NumericalError):
    def __init__(self, message, residual=None, iterations=None, partial=None, epoch=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.partial = partial
        self.epoch = epoch


class TooLarge(InputError):
    pass


class InvalidSeed(InputError):
    pass


class EmptyAnchorSet(InputError):
    pass


class ZeroAnchorMass(InputError):
    pass


# credrank
class UnknownNode(InputError, KeyError):
    pass


class NoContributors(InputError):
    pass


class ZeroTotalScore(InputError):
    pass


# ledger
class OverflowGuard(QnarError, OverflowError):
    pass


# auction
class WrongPhase(ProtocolError):
    pass


class DuplicateCommit(ProtocolError):
    pass


class DuplicateReveal(ProtocolError):
    pass


class NoSuchCommitment(ProtocolError):
    pass


class DigestMismatch(ProtocolError):
    """The revealed bid does not open the stored commitment. The escrow is forfeited."""


class BidExceedsEscrow(DigestMismatch):
    pass


class DepositTooSmall(ProtocolError):
    pass


class InsufficientBalance(ProtocolError):
    pass


class NoValidReveals(ProtocolError):
    pass


class NotAWinner(ProtocolError):
    pass


# simulation
class InvalidDistributionParams(InputError):
    pass


class NotEnoughPlayers(QnarError):
    pass


class DegenerateReturns(InputError):
    pass


# io
class SnapshotError(InputError):
    pass


class ConfigError(InputError):
    pass
