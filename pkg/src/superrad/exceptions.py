"""Exception types raised by the simulator."""


class SimulationError(RuntimeError):
    """Base class for failures during propagation."""


class InfeasibleConfigError(ValueError):
    """The requested dimensions exceed the configured memory or size budget."""


class TrajectoryFailure(SimulationError):
    """One or more trajectories produced a zero norm or non-finite state."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)


class StepSizeError(SimulationError):
    """The step controller fell below its floor; the problem is too stiff for the settings."""


class SeriesConvergenceError(SimulationError):
    """A phi-function Taylor series did not converge within the term limit."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class GridMismatchError(ValueError):
    """Two observable series do not share a time grid."""
