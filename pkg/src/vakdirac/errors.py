"""Exception types shared across the package."""


class VakdiracError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(VakdiracError, ValueError):
    """A vector block has the wrong length.

    Carries the expected and found lengths so callers can report the
    offending block precisely instead of relying on broadcast behaviour.
    """

    def __init__(self, what, expected, found):
        self.what = what
        self.expected = int(expected)
        self.found = int(found)
        super().__init__(f"{what}: expected length {expected}, found {found}")


class ExpressionError(VakdiracError, ValueError):
    """Base class for expression-language errors; `offset` is 1-based."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)


class ExpressionSyntaxError(ExpressionError):
    pass


class UnknownIdentifierError(ExpressionError):
    pass


class EvalDomainError(VakdiracError, ArithmeticError):
    """Evaluation left the domain of an operation (log of a non-positive
    value, non-integer power of a negative base, exact division by zero).
    """

    def __init__(self, op, value, offset=None):
        self.op = op
        self.value = value
        self.offset = offset
        where = f" at offset {offset}" if offset and offset > 0 else ""
        super().__init__(f"domain error in '{op}' (argument {value!r}){where}")


class ConstraintViolationError(VakdiracError, ValueError):
    """Initial data or a chart point does not satisfy the constraints."""

    def __init__(self, residuals, tol):
        self.residuals = residuals
        self.tol = tol
        super().__init__(
            "initial constraint violated: phi = "
            + ", ".join(f"{r:.6g}" for r in residuals)
            + f" (tolerance {tol:g})"
        )


class RankDeficiencyError(VakdiracError, ValueError):
    pass


class AlgebraicSolveError(VakdiracError, RuntimeError):
    """The bordered Newton solve failed to converge."""

    def __init__(self, message, t=None, iterations=None, residual=None):
        self.t = t
        self.iterations = iterations
        self.residual = residual
        if t is not None:
            message = f"{message} (t={t:.6g})"
        super().__init__(message)


class SingularJacobianError(AlgebraicSolveError):
    """Bordered or saddle matrix is numerically singular.

    Raised in particular for holonomic constraints (no velocity
    dependence), which make the bordered system rank deficient and fall
    outside the supported index-1 setting.
    """
