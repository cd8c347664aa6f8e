"""Exception hierarchy shared by all srflow modules."""


class SrflowError(Exception):
    """Base class for every error raised by srflow."""


class ParseError(SrflowError):
    """Malformed expression or system file.

    ``offset`` is the byte offset into the source text (``None`` when the
    error is not tied to a position).
    """

    def __init__(self, message, offset=None, source=None):
        self.message = message
        self.offset = offset
        self.source = source
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class UnknownIdentifierError(ParseError):
    def __init__(self, name, offset=None, source=None):
        self.name = name
        super().__init__(f"unknown identifier '{name}'", offset, source)


class DomainError(SrflowError, ArithmeticError):
    """Evaluation left the domain of an operator (1/0, log of x <= 0, ...)."""

    def __init__(self, message, node=None):
        self.node = node
        text = message if node is None else f"{message} in '{node}'"
        super().__init__(text)


class DimensionError(SrflowError, ValueError):
    pass


class ExpressionTooLarge(SrflowError):
    pass


class IntegrationError(SrflowError):
    """Numeric failure inside the ODE integrator."""


class BlowUpError(IntegrationError):
    pass


class NonFiniteError(IntegrationError):
    pass


class StepSizeError(IntegrationError):
    pass


class GridError(SrflowError, ValueError):
    pass


class RankError(SrflowError, ValueError):
    """Input violates a rank hypothesis (non-constant rank, dependence, ...)."""


class NotNormalizedError(SrflowError, ValueError):
    pass


class TransversalityError(DomainError):
    pass


class NotIntegralCurveError(SrflowError, ValueError):
    """The trajectory is not an integral curve of the given field."""
