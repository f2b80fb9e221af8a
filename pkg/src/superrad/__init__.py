"""Stochastic trajectory simulation of driven collective emission into a structured photonic band."""
from .bath import BandParams, BathDiscretization, DriveWaveform, VacuumSampler, discretize_band
from .dynamics import BatchState, SimParams, StochasticModel, Trajectory, propagate_batch
from .exceptions import (ConfigError, InfeasibleConfigError, SimulationError, StepSizeError,
                         TrajectoryFailure)
from .hilbert import CompositeBasis, build_fock_basis

__version__ = "0.1.0"
