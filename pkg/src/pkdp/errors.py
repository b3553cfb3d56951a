"""Exception types shared across the package."""


class ZeroMassEvent(ValueError):
    """Raised when conditioning on an event of probability zero."""


class DimensionMismatch(ValueError):
    """Components disagree on alphabet or database size."""


class EngineInfeasible(RuntimeError):
    """The requested engine cannot handle this instance."""


class NotExchangeable(EngineInfeasible):
    """Scenario lacks the iid / prefix / count structure the fast path needs."""


class RejectionBudgetExceeded(EngineInfeasible):
    """Rejection sampling ran out of attempts before collecting enough samples."""


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file."""


class InvariantViolation(RuntimeError):
    """An internal consistency check failed."""
