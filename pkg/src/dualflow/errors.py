"""Exception types shared across the package."""


class DualFlowError(Exception):
    """Base class for all package errors."""


class ShapeError(DualFlowError, ValueError):
    """Array dimensions do not match the configuration."""


class GridMismatchError(DualFlowError, ValueError):
    pass


class UnsupportedConfigurationError(DualFlowError, ValueError):
    pass


class InvalidDensityError(DualFlowError, ValueError):
    """A matrix density has an eigenvalue below ``-eps_psd``."""


class ZoneExitError(DualFlowError):
    """The dual-to-primal map is undefined at some grid node.

    The ``report`` attribute carries the zone diagnostics
    (a :class:`dualflow.dual_core.DtPZoneReport` or a plain margin for the
    toy model).
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StiffnessError(DualFlowError):
    """Fake-time step underflow while dissipation keeps increasing."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PositivityError(DualFlowError):
    """Transport density dropped below the positivity floor."""


class SingularityError(DualFlowError, ZeroDivisionError):
    pass
