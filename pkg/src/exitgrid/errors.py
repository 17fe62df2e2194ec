"""Exception hierarchy.

Validation problems (bad input, violated hypotheses) and numerical failures
(no convergence, trajectories leaving the box) are kept apart so the CLI can
map them to different exit codes.
"""


class ExitGridError(Exception):
    """Base class for all package errors."""


class ValidationError(ExitGridError, ValueError):
    """Input rejected before any numerics ran."""


class ExpressionSyntaxError(ValidationError):
    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"syntax error at offset {position}: {message}")


class UnknownIdentifierError(ValidationError):
    def __init__(self, name: str, position: int):
        self.name = name
        self.position = position
        super().__init__(f"unknown identifier {name!r} at offset {position}")


class ConfigError(ValidationError):
    """Malformed or incomplete problem/run configuration."""


class HypothesisError(ValidationError):
    """Declared constants contradict a standing hypothesis."""


class NumericalError(ExitGridError, ArithmeticError):
    """A numerical procedure failed."""


class EvaluationError(NumericalError):
    """An expression was evaluated outside its domain (sqrt of a negative, 1/0, ...)."""


class ConvergenceError(NumericalError):
    pass


class DomainExitError(NumericalError):
    """A trajectory or arc left the computational box."""


class DegenerateCostateError(NumericalError):
    pass


class DegenerateGradientError(NumericalError):
    """The level function has (numerically) zero gradient where a normal is needed."""


class TerminalDataError(ValidationError):
    """Terminal data for an extremal is inconsistent with the Hamiltonian."""
