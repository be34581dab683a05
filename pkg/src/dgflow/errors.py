"""Exception hierarchy shared across the package.

Each class maps to a CLI exit code, see cli.EXIT_CODES.
"""


class DgflowError(Exception):
    """Base class for all package errors."""


class ParameterError(DgflowError):
    """Invalid or infeasible parameters (bad graph class params, domains, ...)."""


class GenerationError(DgflowError):
    """Random generation could not satisfy a hard requirement (connectivity)."""


class IntegrityError(DgflowError):
    """A content hash or file invariant failed to verify."""


class ShapeMismatchError(DgflowError):
    """Mismatched dimensions or time grids between inputs."""


class NumericalError(DgflowError):
    """A numerical routine failed (non-convergence, Cholesky breakdown...)."""


class BoundaryError(NumericalError):
    """A density left the strictly positive region during integration."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index
