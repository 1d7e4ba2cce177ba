"""Exception hierarchy shared by all solver stages.

Every error carries a human readable message; the CLI maps
:class:`ValidationError` subclasses to exit code 2 and
:class:`SolverError` subclasses to exit code 3.
"""


class GrpError(Exception):
    """Base class of all package errors."""


class ValidationError(GrpError):
    """Input data violates an admissibility or geometry requirement."""


class SolverError(GrpError):
    """A numerical iteration failed to produce a trustworthy result."""


# --- system model -----------------------------------------------------------
class NotStrictlyHyperbolic(ValidationError):
    pass


class NonConvergence(SolverError):
    pass


# --- Riemann fan -------------------------------------------------------------
class CurveLeftBox(ValidationError):
    pass


class NewtonDivergence(SolverError):
    pass


class RarefactionRequired(ValidationError):
    pass


# --- geometry ----------------------------------------------------------------
class DegenerateGeometry(ValidationError):
    pass


class OutOfSector(ValidationError):
    pass


class DegenerateTime(ValidationError):
    pass


class BoundViolation(ValidationError):
    pass


class MinimalAngleViolation(ValidationError):
    pass


# --- broad solution / GRP ----------------------------------------------------
class NoExit(SolverError):
    pass


class NoContraction(SolverError):
    pass


class ArgumentOutOfDomain(ValidationError):
    pass


class DenominatorTooSmall(SolverError):
    pass


class OuterDivergence(SolverError):
    pass


class OutsidePhysicalDomain(ValidationError):
    pass


class MissingDerivativeField(SolverError):
    pass


# --- sensitivity / objective -------------------------------------------------
class TooCloseToShock(ValidationError):
    pass


class ShockOnBoundary(ValidationError):
    pass


class TargetDiscontinuousAtShock(ValidationError):
    pass


class NonConvergentQuotient(SolverError):
    pass


class ConfigError(ValidationError):
    """Configuration problem; ``pointer`` is a JSON pointer to the bad entry."""

    def __init__(self, pointer, message):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer
