"""Exception hierarchy shared across the solver modules."""


class SdportError(Exception):
    """Base class for all package-specific errors."""


class NonFiniteIntegrand(SdportError):
    """An integrand evaluated to nan/inf at a quadrature node."""


class NoSignChange(SdportError):
    """A root bracket does not actually bracket a sign change."""


class MaxIterations(SdportError):
    """An iterative scheme hit its iteration cap without converging."""


class OutOfDomain(SdportError):
    """Evaluation requested outside a function's domain."""


class AtKink(SdportError):
    """Marginal utility requested exactly at the reference kink."""


class NoFiniteEnvelope(SdportError):
    """The utility has no finite concave envelope (no liquidation boundary)."""


class NoConvergence(SdportError):
    """A nonlinear solve failed to converge."""


class Unreachable(SdportError):
    """The correction cannot lift the solution up to the benchmark."""


class BudgetUnattainable(SdportError):
    """No multiplier in the search range prices the solution at x_bar."""


class Infeasible(SdportError):
    """The problem data violate a standing feasibility assumption."""


class RepairFailed(SdportError):
    """The monotonicity repair left the correction non-monotone."""


class SegmentMiss(SdportError):
    """A rank fell outside every declared partition segment."""
