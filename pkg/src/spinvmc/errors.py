"""Exception types shared across the package."""


class SpinVmcError(Exception):
    """Base class for all package errors."""


class CapacityError(SpinVmcError, ValueError):
    """A system size exceeds what an exact/dense code path supports."""


class ScheduleError(SpinVmcError, ValueError):
    """A time-dependent coefficient was requested outside its domain, or a
    time argument is required but missing."""


class ZeroAmplitudeError(SpinVmcError, ValueError):
    """A quantity (log-derivative, local value, ratio) is undefined because
    the wave function vanishes exactly on the requested configuration."""


class DegenerateStateError(SpinVmcError, ValueError):
    """A state has no support (identically zero) or a distribution collapsed
    to nothing sampleable."""


class UnsupportedRotationError(SpinVmcError, ValueError):
    """A diagonal rotation has no matching phase-parameter slot in the ansatz."""


class UnsupportedSplitError(SpinVmcError, ValueError):
    """A Hamiltonian does not decompose into the supported split structure
    (diagonal two-site part plus commuting single-site part)."""


class ConfigError(SpinVmcError, ValueError):
    """A run configuration failed strict validation."""


class NonConvergenceError(SpinVmcError, RuntimeError):
    """An iterative solve exhausted its retry policy."""
