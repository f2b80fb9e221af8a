"""Batch estimators: photon statistics, atomic observables and Husimi marginals.

The trajectory amplitudes ``alpha`` are Husimi (anti-normally ordered) samples,
so normally ordered photon moments follow from

    <n>    = E|alpha|^2 - M
    <n^2>  = E[(|alpha|^2 - M)^2 - |alpha|^2]

with ``M`` the number of modes and ``|alpha|^2`` summed over modes.  Atomic
observables are batch means of per-trajectory normalised conditional
expectations.  Standard errors are delete-one jackknife estimates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hilbert import CollectiveSpinBasis, spin_shift

#: photon numbers below this many standard errors leave the dispersion undefined
DISPERSION_SNR = 10.0


def jackknife(samples: np.ndarray, estimator) -> tuple[np.ndarray, np.ndarray]:
    """Delete-one jackknife for an estimator of sample means.

    ``samples`` has shape (B, k); ``estimator`` maps means of shape (..., k) to
    the statistic (vectorised over leading axes).  Returns (value, standard error).
    """
    x = np.asarray(samples)
    if x.ndim == 1:
        x = x[:, None]
    B = len(x)
    total = x.sum(axis=0)
    value = estimator(total / B)
    if B < 2:
        return value, np.full_like(np.asarray(value, dtype=float), np.nan)
    loo = estimator((total - x) / (B - 1))
    dev = loo - loo.mean(axis=0)
    se = np.sqrt((B - 1) / B * np.sum(np.abs(dev) ** 2, axis=0))
    return value, se


def photon_moments(alpha: np.ndarray) -> dict:
    """<n>, <n^2>, Var(n) and their jackknife errors from Husimi samples."""
    alpha = np.asarray(alpha)
    M = alpha.shape[1]
    q = np.sum(np.abs(alpha) ** 2, axis=1).astype(float)
    cols = np.stack([q - M, (q - M) ** 2 - q], axis=1)
    n1, n1_se = jackknife(cols[:, :1], lambda m: m[..., 0])
    n2, n2_se = jackknife(cols, lambda m: m[..., 1])
    var, var_se = jackknife(cols, lambda m: m[..., 1] - m[..., 0] ** 2)
    return {"n_mean": float(n1), "n_mean_se": float(n1_se), "n_second": float(n2),
            "n_second_se": float(n2_se), "var_n": float(var), "var_n_se": float(var_se)}


def relative_dispersion(alpha: np.ndarray, snr: float = DISPERSION_SNR) -> tuple[float, float]:
    """Var(n)/<n> with jackknife error; NaN when <n> is not resolved above noise."""
    alpha = np.asarray(alpha)
    M = alpha.shape[1]
    q = np.sum(np.abs(alpha) ** 2, axis=1).astype(float)
    cols = np.stack([q - M, (q - M) ** 2 - q], axis=1)
    mom = photon_moments(alpha)
    if not mom["n_mean"] > snr * mom["n_mean_se"]:
        return float("nan"), float("nan")
    val, se = jackknife(cols, lambda m: (m[..., 1] - m[..., 0] ** 2) / m[..., 0])
    return float(val), float(se)


def normalized_spin_states(conditional: np.ndarray) -> np.ndarray:
    f = np.asarray(conditional)
    return f / np.sqrt(np.sum(np.abs(f) ** 2, axis=1, keepdims=True))


def spin_expectations(conditional: np.ndarray, n_atoms: int) -> np.ndarray:
    """Per-trajectory <Sx>, <Sy>, <Sz>, <m> (real), shape (B, 4)."""
    f = normalized_spin_states(conditional)
    spin = CollectiveSpinBasis(n_atoms)
    lowered = spin_shift("S-", f[..., None], spin)[..., 0]
    sm = np.sum(f.conj() * lowered, axis=1)
    pop = np.abs(f) ** 2
    m = pop @ spin.levels
    return np.stack([2.0 * sm.real, -2.0 * sm.imag, 2.0 * m - n_atoms, m], axis=1)


def estimate_rho_system(state) -> np.ndarray:
    """Batch average of the normalised conditional spin density matrices."""
    f = normalized_spin_states(state.conditional)
    rho = np.einsum("bi,bj->ij", f, f.conj()) / len(f)
    return 0.5 * (rho + rho.conj().T)


def excited_fraction(state) -> tuple[float, float]:
    """Fraction of atoms in the excited state, <m>/N, with its standard error."""
    m = spin_expectations(state.conditional, state.n_atoms)[:, 3] / state.n_atoms
    val, se = jackknife(m[:, None], lambda x: x[..., 0])
    return float(val), float(se)


def correlator_I(state) -> tuple[float, float]:
    """Two-point dipole correlator with the single-atom parts removed.

    (<S^2> - 3N)/(N(N-1)) - |<S>/N|^2, using <S^2> = N(N+2) in the symmetric
    sector.  Zero for product states, positive for correlated (superradiant) states.
    """
    N = state.n_atoms
    if N < 2:
        return float("nan"), float("nan")
    s = spin_expectations(state.conditional, N)[:, :3]
    const = (N * (N + 2) - 3.0 * N) / (N * (N - 1))
    val, se = jackknife(s, lambda m: const - np.sum(m**2, axis=-1) / N**2)
    return float(val), float(se)


def emission_rate(time: np.ndarray, n_mean: np.ndarray) -> np.ndarray:
    """d<n>/dt by second-order finite differences on the record grid."""
    time = np.asarray(time, float)
    if len(time) < 2:
        return np.zeros_like(np.asarray(n_mean, float))
    return np.gradient(np.asarray(n_mean, float), time)


@dataclass
class HusimiGrid:
    """Normalised histogram of the Husimi marginal of one mode."""

    x_edges: np.ndarray
    y_edges: np.ndarray
    density: np.ndarray
    mode: int
    time: float = float("nan")

    @property
    def x_centers(self):
        return 0.5 * (self.x_edges[1:] + self.x_edges[:-1])

    @property
    def y_centers(self):
        return 0.5 * (self.y_edges[1:] + self.y_edges[:-1])

    @property
    def cell_area(self) -> float:
        return float(np.diff(self.x_edges)[0] * np.diff(self.y_edges)[0])

    def total_mass(self) -> float:
        return float(self.density.sum() * self.cell_area)


def husimi_marginal(alpha: np.ndarray, mode: int, bins: int = 64, extent: float | None = None,
                    smoothing: float = 0.0, time: float = float("nan")) -> HusimiGrid:
    """2-D histogram of (Re alpha, Im alpha) for ``mode``, normalised to unit mass.

    ``smoothing`` is a Gaussian kernel width in bins (0 disables).
    """
    a = np.asarray(alpha)[:, mode]
    if extent is None:
        extent = max(3.0, 1.1 * float(np.max(np.abs(a))) if len(a) else 3.0)
    rng = [[-extent, extent], [-extent, extent]]
    hist, xe, ye = np.histogram2d(a.real, a.imag, bins=bins, range=rng)
    if smoothing > 0:
        from scipy.ndimage import gaussian_filter

        hist = gaussian_filter(hist, smoothing, mode="constant")
    area = (xe[1] - xe[0]) * (ye[1] - ye[0])
    mass = hist.sum() * area
    density = hist / mass if mass > 0 else hist
    return HusimiGrid(xe, ye, density, mode, time)


SERIES_COLUMNS = (
    "time", "n_mean", "n_mean_se", "n_second", "n_second_se", "var_n", "var_n_se",
    "rel_dispersion", "rel_dispersion_se", "correlator", "correlator_se",
    "excited_fraction", "excited_fraction_se", "emission_rate", "emission_rate_se", "n_valid",
)


@dataclass
class ObservableSeries:
    """Time series of batch observables; ``time`` in laser cycles, rates per cycle."""

    columns: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.columns[key]

    def __getattr__(self, key):
        cols = self.__dict__.get("columns", {})
        if key in cols:
            return cols[key]
        raise AttributeError(key)

    def __len__(self):
        return len(self.columns.get("time", ()))

    def to_array(self) -> np.ndarray:
        return np.column_stack([np.asarray(self.columns[c], float) for c in SERIES_COLUMNS])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ObservableSeries":
        arr = np.atleast_2d(arr)
        return cls({c: arr[:, i] for i, c in enumerate(SERIES_COLUMNS)})


class SeriesRecorder:
    """Collects per-time summaries from :class:`BatchState` snapshots."""

    def __init__(self, n_atoms: int, n_modes: int, keep_states: bool = False):
        self.n_atoms = n_atoms
        self.n_modes = n_modes
        self.rows: list[dict] = []
        self.q_history: list[np.ndarray] = []
        self.masks: list[np.ndarray] = []
        self.keep_states = keep_states
        self.states: list = []

    def record(self, state) -> None:
        valid = state.valid()
        row = {"time": float(state.time), "n_valid": float(valid.n_batch)}
        row.update(photon_moments(valid.alpha))
        row["rel_dispersion"], row["rel_dispersion_se"] = relative_dispersion(valid.alpha)
        row["correlator"], row["correlator_se"] = correlator_I(valid)
        row["excited_fraction"], row["excited_fraction_se"] = excited_fraction(valid)
        self.rows.append(row)
        self.q_history.append(np.sum(np.abs(state.alpha) ** 2, axis=1).astype(float))
        self.masks.append(np.ones(state.n_batch, bool) if state.active is None else state.active.copy())
        if self.keep_states:
            self.states.append(valid)

    def finalize(self) -> ObservableSeries:
        cols = {c: np.array([r[c] for r in self.rows], dtype=float)
                for c in SERIES_COLUMNS if c not in ("emission_rate", "emission_rate_se")}
        t = cols["time"]
        cols["emission_rate"] = emission_rate(t, cols["n_mean"])
        if len(t) >= 2:
            q = np.stack(self.q_history, axis=1)
            keep = np.logical_and.reduce(self.masks)
            per_traj = np.gradient(q[keep], t, axis=1)
            B = per_traj.shape[0]
            cols["emission_rate_se"] = per_traj.std(axis=0, ddof=1) / np.sqrt(B) if B > 1 \
                else np.full(len(t), np.nan)
        else:
            cols["emission_rate_se"] = np.full(len(t), np.nan)
        return ObservableSeries({c: cols[c] for c in SERIES_COLUMNS})
