"""Exit-time optimal control: value functions on grids, extremals, and regularity diagnostics."""

from .errors import ExitGridError, NumericalError, ValidationError
from .expr import parse_expression
from .problem import ControlProblem, Constants, parse_problem, validate_hypotheses

__version__ = "0.1.0"

__all__ = [
    "Constants",
    "ControlProblem",
    "ExitGridError",
    "NumericalError",
    "ValidationError",
    "parse_expression",
    "parse_problem",
    "validate_hypotheses",
]
