"""Exact reference: unitary evolution of atoms plus band modes for tiny instances.

The joint state lives on spin (x) mode_1 (x) ... (x) mode_M with an occupation
cutoff per mode, built here from scratch with Kronecker products.  Nothing is
shared with the stochastic path except the band/drive parameter objects, so the
two implementations cross-check each other.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .bath import BandParams, DriveWaveform, discretize_band
from .exceptions import ConfigError, GridMismatchError, InfeasibleConfigError, SimulationError
from .observables import SERIES_COLUMNS, ObservableSeries, emission_rate

DEFAULT_DIMENSION_CAP = 20_000


@dataclass(frozen=True)
class OracleConfig:
    """Physical parameters plus per-mode cutoff ``n_max``; times in laser cycles."""

    n_atoms: int = 2
    n_modes: int = 2
    n_max: int = 4
    band: BandParams = BandParams()
    drive: DriveWaveform = DriveWaveform()
    t_start: float = 0.0
    t_end: float = 8.0
    record_interval: float = 1.0 / 64
    rtol: float = 1e-10
    atol: float = 1e-12
    dimension_cap: int = DEFAULT_DIMENSION_CAP
    norm_tolerance: float = 1e-8

    def __post_init__(self):
        if self.rtol > 1e-10:
            raise ConfigError("oracle tolerance must be 1e-10 or tighter")
        if self.t_end <= self.t_start:
            raise ConfigError("t_end must exceed t_start")

    @property
    def dimension(self) -> int:
        return (self.n_atoms + 1) * (self.n_max + 1) ** self.n_modes

    def record_times(self) -> np.ndarray:
        n = int(round((self.t_end - self.t_start) / self.record_interval))
        grid = self.t_start + self.record_interval * np.arange(n + 1)
        if grid[-1] < self.t_end - 1e-9 * self.record_interval:
            grid = np.append(grid, self.t_end)
        return grid

    @classmethod
    def from_sim(cls, params, n_max: int | None = None, **kw) -> "OracleConfig":
        """Mirror the physics of a :class:`SimParams`, with ``n_max`` defaulting to its N_p."""
        return cls(n_atoms=params.n_atoms, n_modes=params.n_modes,
                   n_max=params.max_photons if n_max is None else n_max,
                   band=params.band, drive=params.drive, t_start=params.t_start, t_end=params.t_end,
                   record_interval=params.record_interval, **kw)

    def replace(self, **changes) -> "OracleConfig":
        return replace(self, **changes)


def _angular_momentum(n_atoms: int):
    """J+, J- and 2 J_z for J = N/2, basis ordered by m_z = -J..J."""
    j = n_atoms / 2.0
    mz = np.arange(-j, j + 1.0)
    up = np.sqrt(j * (j + 1) - mz[:-1] * (mz[:-1] + 1))
    jp = sp.diags(up, -1, format="csr")
    return jp, sp.csr_matrix(jp.T), sp.diags(2.0 * mz, format="csr")


def _kron_all(ops):
    out = ops[0]
    for op in ops[1:]:
        out = sp.kron(out, op, format="csr")
    return out


class ExactModel:
    """Sparse matrices of H_0(t) = H_S(t) + H_B + H_I on the product space."""

    def __init__(self, config: OracleConfig):
        if config.dimension > config.dimension_cap:
            raise InfeasibleConfigError(
                f"oracle dimension {config.dimension} exceeds cap {config.dimension_cap}")
        self.config = config
        bath = discretize_band(config.band, config.n_modes)
        S = config.n_atoms + 1
        d = config.n_max + 1
        a = sp.diags(np.sqrt(np.arange(1, d, dtype=float)), 1, format="csr")
        eye_s, eye_m = sp.identity(S, format="csr"), sp.identity(d, format="csr")
        splus, sminus, sz = _angular_momentum(config.n_atoms)
        self.sx_s = (splus + sminus).toarray()
        self.sy_s = (1j * (splus - sminus)).toarray()
        self.sz_s = sz.toarray()
        self.modes = [_kron_all([eye_s] + [a if k == nu else eye_m for k in range(config.n_modes)])
                      for nu in range(config.n_modes)]
        self.number = sum(m.T @ m for m in self.modes).tocsr()
        sp_full = _kron_all([splus] + [eye_m] * config.n_modes)
        self.sx = _kron_all([splus + sminus] + [eye_m] * config.n_modes)
        h = 0.5 * _kron_all([sz] + [eye_m] * config.n_modes).astype(complex)
        for nu in range(config.n_modes):
            c = complex(bath.couplings[nu])
            an = self.modes[nu]
            h = h + bath.omegas[nu] * (an.T @ an) + c * (sp_full @ an) + np.conj(c) * (sp_full.T @ an.T)
        self.h_static = sp.csr_matrix(h)
        self.shape = (S,) + (d,) * config.n_modes
        self.bath = bath

    def hamiltonian(self, t: float) -> sp.csr_matrix:
        return self.h_static + float(self.config.drive.value(t)) * self.sx

    def initial_state(self) -> np.ndarray:
        psi = np.zeros(self.h_static.shape[0], dtype=complex)
        psi[0] = 1.0  # m_z = -J (all atoms ground), every mode empty
        return psi

    def rho_spin(self, psi: np.ndarray) -> np.ndarray:
        blk = psi.reshape(self.shape[0], -1)
        return blk @ blk.conj().T


@dataclass
class OracleResult:
    series: ObservableSeries
    times: np.ndarray
    states: np.ndarray = field(repr=False)
    rho_spin: np.ndarray = field(repr=False)
    max_norm_drift: float = 0.0


def oracle_propagate(config: OracleConfig, keep_states: bool = True,
                     initial_state: np.ndarray | None = None) -> OracleResult:
    """Propagate the joint wavefunction and evaluate exact observables on the record grid.

    The default start is all atoms in the ground state with every mode empty;
    ``initial_state`` overrides it (a normalised vector on the product space,
    spin index outermost with ``m_z`` ascending, then one factor per mode).
    """
    model = ExactModel(config)
    psi0 = model.initial_state() if initial_state is None else np.asarray(initial_state, complex)
    if psi0.shape != (model.h_static.shape[0],):
        raise ValueError(f"initial state must have shape ({model.h_static.shape[0]},)")
    cycle = config.drive.cycle
    grid = config.record_times()
    h_static, sx, drive = model.h_static, model.sx, config.drive

    def rhs(t, y):
        return -1j * (h_static @ y + float(drive.value(t)) * (sx @ y))

    sol = solve_ivp(rhs, (grid[0] * cycle, grid[-1] * cycle), psi0, method="DOP853",
                    t_eval=grid * cycle, rtol=config.rtol, atol=config.atol)
    if not sol.success:
        raise SimulationError(f"oracle propagation failed: {sol.message}")
    states = sol.y.T
    norms = np.sum(np.abs(states) ** 2, axis=1)
    drift = float(np.max(np.abs(norms - 1.0)))
    if drift > config.norm_tolerance:
        raise SimulationError(f"oracle norm drift {drift:.3g} exceeds {config.norm_tolerance:.1g}")

    N = config.n_atoms
    n_op = model.number
    rows = {c: [] for c in SERIES_COLUMNS}
    rhos = []
    for t, psi in zip(grid, states):
        npsi = n_op @ psi
        n1 = float(np.real(np.vdot(psi, npsi)))
        n2 = float(np.real(np.vdot(npsi, npsi)))
        rho = model.rho_spin(psi)
        rhos.append(rho)
        sx_, sy_, sz_ = (float(np.real(np.trace(rho @ o))) for o in (model.sx_s, model.sy_s, model.sz_s))
        corr = ((N * (N + 2) - 3.0 * N) / (N * (N - 1)) - (sx_**2 + sy_**2 + sz_**2) / N**2) if N > 1 \
            else float("nan")
        var = n2 - n1**2
        vals = {"time": t, "n_mean": n1, "n_second": n2, "var_n": var,
                "rel_dispersion": var / n1 if n1 > 0 else float("nan"),
                "correlator": corr, "excited_fraction": 0.5 * (sz_ / N + 1.0), "n_valid": 0.0}
        for c in SERIES_COLUMNS:
            if c.endswith("_se"):
                rows[c].append(0.0)
            elif c in vals:
                rows[c].append(vals[c])
    cols = {c: np.asarray(v, float) for c, v in rows.items() if v}
    cols["emission_rate"] = emission_rate(cols["time"], cols["n_mean"])
    cols["emission_rate_se"] = np.zeros_like(cols["time"])
    series = ObservableSeries({c: cols[c] for c in SERIES_COLUMNS})
    return OracleResult(series, grid, states if keep_states else np.empty((0,)), np.array(rhos), drift)


@dataclass
class CompareReport:
    z: dict
    max_abs_z: float
    max_abs_deviation: dict
    peak_time: float
    peak_relative_deviation: float
    z_bound: float
    rel_bound: float
    numerical_floor: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_z <= self.z_bound and self.peak_relative_deviation <= self.rel_bound)

    def to_dict(self) -> dict:
        return {
            "result": "pass" if self.passed else "fail",
            "max_abs_z": self.max_abs_z,
            "max_abs_z_per_quantity": {k: float(np.nanmax(np.abs(v))) for k, v in self.z.items()},
            "max_abs_deviation": self.max_abs_deviation,
            "peak_time": self.peak_time,
            "peak_relative_deviation": self.peak_relative_deviation,
            "z_bound": self.z_bound,
            "rel_bound": self.rel_bound,
            "numerical_floor": self.numerical_floor,
        }


def compare_runs(stochastic: ObservableSeries, exact: ObservableSeries,
                 quantities=("n_mean", "excited_fraction"), z_bound: float = 3.0,
                 rel_bound: float = 0.05, numerical_floor: float = 0.0,
                 time_tol: float = 1e-9) -> CompareReport:
    """z-scores of the stochastic series against the exact one on a shared grid.

    z = (stochastic - exact) / sqrt(se^2 + numerical_floor^2).  The floor
    accounts for deterministic integration error, which dominates while all
    trajectories still agree (e.g. the atomic state before any emission) and
    the sampling error is vanishingly small.  With a zero floor, points whose
    standard error vanishes score 0 if the values agree to 1e-12 and infinity
    otherwise.  The relative check is on <n> at the time the exact <n> peaks.
    """
    ts, te = np.asarray(stochastic["time"]), np.asarray(exact["time"])
    if ts.shape != te.shape or np.max(np.abs(ts - te), initial=0.0) > time_tol:
        raise GridMismatchError("stochastic and exact series are on different time grids")
    z, dev = {}, {}
    for q in quantities:
        diff = np.asarray(stochastic[q]) - np.asarray(exact[q])
        sigma = np.hypot(np.asarray(stochastic[q + "_se"]), numerical_floor)
        with np.errstate(divide="ignore", invalid="ignore"):
            zq = np.where(sigma > 0, diff / sigma, np.where(np.abs(diff) <= 1e-12, 0.0, np.inf))
        z[q] = zq
        dev[q] = float(np.max(np.abs(diff)))
    max_z = float(max(np.max(np.abs(v)) for v in z.values()))
    n_exact = np.asarray(exact["n_mean"])
    ipk = int(np.argmax(n_exact))
    peak = float(n_exact[ipk])
    rel = abs(float(stochastic["n_mean"][ipk]) - peak) / peak if peak > 0 else float("inf")
    return CompareReport(z, max_z, dev, float(te[ipk]), rel, z_bound, rel_bound, numerical_floor)
