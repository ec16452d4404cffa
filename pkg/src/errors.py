"""Exception hierarchy for the gossip bandit simulator."""


class GossipBanditError(Exception):
    """Base error. Every subclass carries a stable string code."""

    code = "ERROR"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def __str__(self):
        return f"[{self.code}] {super().__str__()}"


class ConfigError(GossipBanditError):
    code = "CONFIG_INVALID"


class TopologyError(GossipBanditError):
    """Raised with UNCONNECTABLE or BAD_PARAMS."""

    code = "BAD_PARAMS"


class DegenerateSpectrumError(GossipBanditError):
    code = "DEGENERATE"


class OutOfRangeError(GossipBanditError):
    code = "OUT_OF_RANGE"


class DimensionMismatchError(GossipBanditError):
    code = "DIM_MISMATCH"


class SolverDivergedError(GossipBanditError):
    code = "SOLVER_DIVERGED"


class ProtocolOrderError(GossipBanditError):
    code = "OUT_OF_ORDER"


class DuplicateFeedbackError(GossipBanditError):
    code = "DUPLICATE_FEEDBACK"


class MissingLStarError(GossipBanditError):
    code = "MISSING_LSTAR"


class FloorViolationError(GossipBanditError):
    code = "FLOOR_VIOLATION"


class BoundViolationError(GossipBanditError):
    code = "BOUND_VIOLATION"


class RatesTooLargeError(GossipBanditError):
    code = "RATES_TOO_LARGE"


class NotSPDError(GossipBanditError):
    code = "NOT_SPD"


class RankDeficientError(GossipBanditError):
    code = "RANK_DEFICIENT"


class SizeCapExceededError(GossipBanditError):
    code = "SIZE_CAP_EXCEEDED"


class BadSpecError(GossipBanditError):
    code = "BAD_SPEC"


class InvariantViolation(GossipBanditError):
    """A theory-level diagnostic failed while strict mode is on."""

    code = "INVARIANT_VIOLATION"
