"""Exception types shared across the library."""


class DiskHaloError(Exception):
    """Base class for all library-specific failures."""


class ConvergenceError(DiskHaloError):
    """An iterative solver exhausted its sweep budget.

    Carries a ``diagnostics`` dict (last residuals, sweep count, multipliers)
    so callers can report what the iteration was doing when it gave up.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class MultiplierError(DiskHaloError):
    """A cutoff-energy bisection could not bracket its constraint target."""


class UnboundedStateError(DiskHaloError):
    """The radial profile never crosses zero: no compactly supported state."""


class InfeasibleComponentError(DiskHaloError):
    """A component's mass target drove its cutoff to the potential minimum."""

    def __init__(self, component, message):
        super().__init__(message)
        self.component = component


class SupportEscapeError(DiskHaloError):
    """A transported sample or density support left the evaluation domain."""
