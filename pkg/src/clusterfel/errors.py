"""Exception hierarchy.

Every error raised on purpose by the package derives from ``ClusterFELError``.
The command line maps the three families onto exit codes
(validation 2, infeasibility 3, numerical 4).
"""


class ClusterFELError(Exception):
    """Base class for all package errors."""


class ValidationError(ClusterFELError, ValueError):
    """Malformed input: wrong shape, bad range, unknown id."""


class DimensionError(ValidationError):
    """Arrays whose lengths or shapes should agree do not."""


class ConstraintViolation(ValidationError):
    """A decision variable lies outside its admissible box."""


class SizeGuardError(ValidationError):
    """An exhaustive routine was asked to enumerate too much."""


class InfeasibleError(ClusterFELError):
    """No decision satisfies the constraints (energy budget, link rate, subcarriers)."""


class AllocationError(InfeasibleError):
    """Subcarrier allocation cannot serve every client."""


class NumericalError(ClusterFELError, ArithmeticError):
    """Non-finite values, divergence, or an ill-posed fit."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""


class FitError(NumericalError):
    """Round-law fit is singular or invalid on its range."""


class DomainError(NumericalError):
    """A formula was evaluated outside its domain."""


class InstrumentationError(ClusterFELError):
    """A check needs recorded quantities that were not recorded."""


class UnsupportedError(ClusterFELError):
    """Requested model/variant is not supported by this routine."""


class HypothesisError(ValidationError):
    """A bound was requested outside the step-size range it is stated for."""


EXIT_CODES = (
    (ValidationError, 2),
    (InfeasibleError, 3),
    (NumericalError, 4),
)


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1
