"""Photonic band discretisation, classical drive and vacuum sampling.

Frequencies are in units of the atomic transition frequency omega_0 and times
in units of 1/omega_0.  Drive durations and start times are given in laser
cycles (2 pi / carrier) and converted here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class BandParams:
    """Tight-binding band omega(k) = epsilon + 2 h cos k coupled with strength h_c."""

    epsilon: float = 2.0
    hopping: float = 0.2
    coupling: float = 0.2

    def __post_init__(self):
        if self.hopping < 0:
            raise ValueError("hopping must be non-negative")

    @property
    def edges(self) -> tuple[float, float]:
        return self.epsilon - 2 * self.hopping, self.epsilon + 2 * self.hopping

    def dispersion(self, k):
        return self.epsilon + 2.0 * self.hopping * np.cos(k)

    def coupling_density(self, k):
        """Continuum coupling c(k) for orthonormal sine modes of the semi-infinite chain."""
        return self.coupling * np.sqrt(2.0 / np.pi) * np.sin(k)


@dataclass(frozen=True)
class BathDiscretization:
    params: BandParams
    k_nodes: np.ndarray
    omegas: np.ndarray
    couplings: np.ndarray
    dk: float

    @property
    def n_modes(self) -> int:
        return len(self.omegas)

    def with_coupling(self, coupling: float) -> "BathDiscretization":
        scale = 0.0 if self.params.coupling == 0 else coupling / self.params.coupling
        params = BandParams(self.params.epsilon, self.params.hopping, coupling)
        if self.params.coupling == 0:
            return discretize_band(params, self.n_modes)
        return BathDiscretization(params, self.k_nodes, self.omegas, self.couplings * scale, self.dk)


def discretize_band(params: BandParams, n_modes: int) -> BathDiscretization:
    """Midpoint grid on (0, pi) with weights c_nu = c(k_nu) sqrt(dk)."""
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    dk = np.pi / n_modes
    k = (np.arange(1, n_modes + 1) - 0.5) * dk
    omegas = params.dispersion(k)
    couplings = (params.coupling_density(k) * np.sqrt(dk)).astype(complex)
    return BathDiscretization(params, k, omegas, couplings, dk)


ENVELOPES = ("sin2", "flat", "gauss")


@dataclass(frozen=True)
class DriveWaveform:
    """Classical field d0 F(t) = amplitude * env(t) * cos(carrier * t + phase).

    ``amplitude`` is the peak Rabi frequency d0 F0 in units of omega_0.
    ``duration`` and ``start`` are in laser cycles.  For the Gaussian envelope the
    field standard deviation is duration / 8 and the peak sits at the window centre.
    """

    carrier: float = 1.0
    amplitude: float = 0.25
    envelope: str = "sin2"
    duration: float = 8.0
    start: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.envelope not in ENVELOPES:
            raise ValueError(f"envelope must be one of {ENVELOPES}, got {self.envelope!r}")
        if self.carrier <= 0 or self.duration <= 0:
            raise ValueError("carrier and duration must be positive")

    @property
    def cycle(self) -> float:
        return TWO_PI / self.carrier

    @property
    def t_on(self) -> float:
        return self.start * self.cycle

    @property
    def t_span(self) -> float:
        return self.duration * self.cycle

    def envelope_value(self, t):
        t = np.asarray(t, dtype=float)
        s = t - self.t_on
        if self.envelope == "gauss":
            sigma = self.t_span / 8.0
            return np.exp(-0.5 * ((s - 0.5 * self.t_span) / sigma) ** 2)
        inside = (s >= 0) & (s <= self.t_span)
        if self.envelope == "flat":
            return np.where(inside, 1.0, 0.0)
        return np.where(inside, np.sin(np.pi * s / self.t_span) ** 2, 0.0)

    def envelope_derivative(self, t):
        t = np.asarray(t, dtype=float)
        s = t - self.t_on
        if self.envelope == "gauss":
            sigma = self.t_span / 8.0
            u = s - 0.5 * self.t_span
            return -u / sigma**2 * np.exp(-0.5 * (u / sigma) ** 2)
        if self.envelope == "flat":
            return np.zeros_like(t)
        inside = (s >= 0) & (s <= self.t_span)
        w = np.pi / self.t_span
        return np.where(inside, w * np.sin(2 * w * s), 0.0)

    def value(self, t):
        """d0 F(t)."""
        return self.amplitude * self.envelope_value(t) * np.cos(self.carrier * np.asarray(t) + self.phase)

    def derivative(self, t):
        """d/dt of d0 F(t)."""
        t = np.asarray(t, dtype=float)
        arg = self.carrier * t + self.phase
        return self.amplitude * (
            self.envelope_derivative(t) * np.cos(arg)
            - self.carrier * self.envelope_value(t) * np.sin(arg)
        )

    __call__ = value

    def pulse_area(self) -> float:
        """Integral of amplitude * env(t) over the pulse (rotating-wave Rabi angle)."""
        if self.envelope == "sin2":
            return self.amplitude * self.t_span / 2
        if self.envelope == "flat":
            return self.amplitude * self.t_span
        return self.amplitude * np.sqrt(2 * np.pi) * self.t_span / 8.0

    @classmethod
    def with_rabi_cycles(cls, cycles: float = 1.0, **kw) -> "DriveWaveform":
        """Choose the amplitude so a lone resonant atom completes ``cycles`` Rabi cycles."""
        unit = cls(amplitude=1.0, **kw)
        return cls(amplitude=TWO_PI * cycles / unit.pulse_area(), **kw)


def eval_drive(waveform: DriveWaveform, t):
    return waveform.value(t)


@dataclass(frozen=True)
class VacuumSampler:
    """Counter-based sampler of vacuum Husimi draws alpha ~ CN(0, 1).

    Trajectory ``i`` always receives the same vector for a given seed, and its
    first components do not depend on ``n_modes``.
    """

    seed: int
    n_modes: int

    def generator(self, trajectory_index: int) -> np.random.Generator:
        bitgen = np.random.Philox(key=int(self.seed), counter=[0, 0, int(trajectory_index), 0])
        return np.random.Generator(bitgen)

    def sample(self, trajectory_index: int) -> np.ndarray:
        x = self.generator(trajectory_index).standard_normal(2 * self.n_modes)
        return (x[0::2] + 1j * x[1::2]) / np.sqrt(2.0)

    def sample_batch(self, indices) -> np.ndarray:
        indices = np.atleast_1d(indices)
        out = np.empty((len(indices), self.n_modes), dtype=complex)
        for row, i in enumerate(indices):
            out[row] = self.sample(i)
        return out


def sample_vacuum(sampler: VacuumSampler, trajectory_index: int) -> np.ndarray:
    return sampler.sample(trajectory_index)
