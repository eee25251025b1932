"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SpectralFIOError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SpectralFIOError, ValueError):
    """Invalid system, scenario or experiment configuration."""


class ForbiddenRegionError(SpectralFIOError, ValueError):
    """Requested an energy-shell point where V(x) >= lambda."""


class NumericalError(SpectralFIOError):
    """A numerical procedure could not deliver its contract."""


class StepFailure(NumericalError):
    """The adaptive integrator failed to meet its tolerance.

    ``last_time`` and ``last_state`` describe the last accepted state.
    """

    def __init__(self, message, last_time=None, last_state=None):
        super().__init__(message)
        self.last_time = last_time
        self.last_state = last_state


class NoCrossingError(NumericalError):
    """A seed trajectory never met the target cutoff support."""


class NoConvergenceError(NumericalError):
    """Newton shooting did not converge; shrink the chart window."""


class SingularJacobianError(NumericalError):
    """|det dx/d(eta)| fell below threshold: a caustic was met."""


class NoStationaryPointError(NumericalError):
    """d_t S has no sign change on the scanned time grid."""


class WindowEmptyError(NumericalError):
    """No eigenvalue of the discretized operator in the requested window."""


class ResolutionError(ConfigError):
    """Grid spacing does not resolve the semiclassical wavelength."""


class SolverFailure(NumericalError):
    """Sparse linear solve failed."""


class UnboundedGrowthError(NumericalError):
    """No exponent N <= N_max bounds the semiclassical Fourier transform."""


class DegenerateFitError(NumericalError):
    """Norms underflowed or were non-positive, so no power law can be fitted."""


class AliasingWarning(UserWarning):
    """Significant spectral mass sits in the Nyquist shell of a grid."""
