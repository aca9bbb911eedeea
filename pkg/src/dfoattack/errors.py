"""Exception hierarchy shared across the toolkit."""


class DfoAttackError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(DfoAttackError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(InvalidInputError):
    """An array has the wrong length or shape."""


class InvalidGridError(InvalidInputError):
    """A tile grid cannot be laid over the given image extent."""


class BudgetExhaustedError(DfoAttackError):
    """The query counter has no budget left for another oracle call."""


class OracleError(DfoAttackError):
    """A model oracle failed to produce logits."""


class OracleTimeoutError(OracleError):
    """A remote oracle did not answer within the deadline."""


class MalformedResponseError(OracleError):
    """A remote oracle answered with bytes that do not match the wire schema."""


class OracleShapeError(OracleError):
    """A remote oracle declared or returned a shape that does not line up."""


class TrainingError(DfoAttackError):
    """Toy-model training failed to reach its accuracy floor after retries."""
