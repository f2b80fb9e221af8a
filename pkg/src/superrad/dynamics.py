"""Conditional-wavefunction dynamics of driven atoms coupled to a discretised band.

Each trajectory carries

* ``psi``   -- the unnormalised conditional state on spin (x) truncated Fock space.
  Its Fock factor holds the *virtual* photons: Taylor coefficients of the
  conditional Bargmann function around the trajectory's coherent amplitude.
* ``alpha`` -- the trajectory's point in the bath Husimi distribution.
* ``gamma`` -- a displacement of the virtual-photon frame (identically zero in the
  default ``"bargmann"`` frame).

Equations of motion (hbar = omega_0 = 1), with e = <S->_cond and
kappa = 0 ("bargmann") or 1 ("displaced"):

    i psi'   = [H_0(t) + sum c* (alpha* + gamma*) S- + sum c gamma S+
                - (1 + kappa) e* sum c a - kappa e sum c* a^dagger] psi
    i alpha' = omega alpha + c* e
    i gamma' = kappa (omega gamma + c* e)

In the bargmann frame this is the non-Hermitian stochastic Hamiltonian driving
the coherent amplitudes through <S->.  Conditional expectations are taken in
the state <-gamma|psi> (the virtual vacuum component when gamma = 0), which is
the system state conditioned on the bath coherent state |alpha>.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .bath import BandParams, BathDiscretization, DriveWaveform, VacuumSampler, discretize_band
from .exceptions import ConfigError, TrajectoryFailure
from .hilbert import CompositeBasis, apply_collective, coupled_annihilation, fock_apply, spin_shift
from .integrator import IntegrationStats, StepController, flush_small, integrate

log = logging.getLogger(__name__)

FRAMES = {"bargmann": 0.0, "displaced": 1.0}
PRECISIONS = {"double": (np.float64, np.complex128), "single": (np.float32, np.complex64)}


@dataclass(frozen=True)
class SimParams:
    """Physical and numerical configuration of a stochastic run.

    Frequencies are in units of omega_0; ``t_start``, ``t_end`` and
    ``record_interval`` are in laser cycles of the drive carrier.
    """

    n_atoms: int = 2
    n_modes: int = 2
    max_photons: int = 4
    n_batch: int = 4096
    band: BandParams = BandParams()
    drive: DriveWaveform = DriveWaveform()
    t_start: float = 0.0
    t_end: float = 8.0
    record_interval: float = 1.0 / 64
    rtol: float | None = None
    atol: float | None = None
    initial_step: float = 0.05
    seed: int = 0
    precision: str = "double"
    frame: str = "bargmann"
    failure_policy: str = "abort"

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ConfigError("t_end must exceed t_start")
        if self.n_batch < 1:
            raise ConfigError("n_batch must be >= 1")
        if self.record_interval <= 0:
            raise ConfigError("record_interval must be positive")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {tuple(PRECISIONS)}")
        if self.frame not in FRAMES:
            raise ConfigError(f"frame must be one of {tuple(FRAMES)}")
        if self.failure_policy not in ("abort", "drop"):
            raise ConfigError("failure_policy must be 'abort' or 'drop'")

    @property
    def cycle(self) -> float:
        return self.drive.cycle

    def record_times(self) -> np.ndarray:
        """Record grid in laser cycles, inclusive of both ends."""
        n = int(round((self.t_end - self.t_start) / self.record_interval))
        grid = self.t_start + self.record_interval * np.arange(n + 1)
        if grid[-1] < self.t_end - 1e-9 * self.record_interval:
            grid = np.append(grid, self.t_end)
        return grid

    def controller(self) -> StepController:
        ctl = StepController.for_precision(self.precision, initial_step=self.initial_step)
        if self.rtol is not None:
            ctl.rtol = self.rtol
        if self.atol is not None:
            ctl.atol = self.atol
        return ctl

    def bath(self) -> BathDiscretization:
        return discretize_band(self.band, self.n_modes)

    def replace(self, **changes) -> "SimParams":
        return replace(self, **changes)


@dataclass
class Trajectory:
    """One stochastic sample (a row of the batch, viewed separately)."""

    psi: np.ndarray
    alpha: np.ndarray
    trajectory_index: int
    gamma: np.ndarray | None = None
    discarded_norm: float = 0.0


@dataclass
class BatchState:
    """Snapshot of the whole batch at one record time (time in laser cycles)."""

    time: float
    alpha: np.ndarray
    conditional: np.ndarray
    n_atoms: int
    trajectory_indices: np.ndarray
    active: np.ndarray | None = None
    psi: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_batch(self) -> int:
        return len(self.alpha)

    @property
    def n_modes(self) -> int:
        return self.alpha.shape[1]

    def valid(self) -> "BatchState":
        """Restrict to active trajectories."""
        if self.active is None or self.active.all():
            return self
        keep = self.active
        return BatchState(self.time, self.alpha[keep], self.conditional[keep], self.n_atoms,
                          self.trajectory_indices[keep], None,
                          None if self.psi is None else self.psi[keep])


def normalized_expectation(op_kind: str, psi: np.ndarray, basis: CompositeBasis):
    """<psi|O|psi> / <psi|psi> for a collective operator, over the last axis."""
    norm = np.sum(np.abs(psi) ** 2, axis=-1)
    if np.any(norm <= 0) or not np.all(np.isfinite(norm)):
        raise TrajectoryFailure("zero-norm or non-finite state in normalized expectation")
    return np.sum(psi.conj() * apply_collective(op_kind, psi, basis), axis=-1) / norm


def _spin_expect(f: np.ndarray, kind: str, spin) -> np.ndarray:
    """<f|O|f>/<f|f> for spin-only vectors f of shape (..., S)."""
    g = spin_shift(kind, f[..., None], spin)[..., 0]
    return np.sum(f.conj() * g, axis=-1) / np.sum(np.abs(f) ** 2, axis=-1)


class StochasticModel:
    """Right-hand side, exact Jacobian action and time derivative for a batch.

    Batches are stored column-wise: ``y`` has shape (size, B) with rows
    ``[psi (S*D), alpha (M), gamma (M)]``, so every operator is a single sparse
    product over contiguous rows and per-trajectory scalars broadcast along the
    last axis.
    """

    def __init__(self, basis: CompositeBasis, bath: BathDiscretization, drive: DriveWaveform,
                 frame: str = "bargmann", omega0: float = 1.0, dtype=np.complex128):
        if bath.n_modes != basis.fock.n_modes:
            raise ValueError("bath and basis disagree on the number of modes")
        self.basis = basis
        self.bath = bath
        self.drive = drive
        self.frame = frame
        self.kappa = FRAMES[frame]
        self.omega0 = omega0
        self.dtype = np.dtype(dtype)
        self.rdtype = self.dtype.type(0).real.dtype
        S, D = basis.shape
        self.S, self.D, self.M = S, D, bath.n_modes
        self.n_psi = S * D
        self.size = self.n_psi + 2 * self.M
        self.omegas = np.asarray(bath.omegas, dtype=self.rdtype)[:, None]
        self.cconj = np.asarray(bath.couplings, dtype=self.dtype).conj()[:, None]
        self.c = np.asarray(bath.couplings, dtype=self.dtype)
        self.up = basis.spin.raising_elements().astype(self.rdtype)[:, None]

        spin, fock = basis.spin, basis.fock
        eye_s = sp.identity(S, format="csr")
        eye_f = sp.identity(D, format="csr")
        ca = coupled_annihilation(bath, fock)
        cad = sp.csr_matrix(ca.conj().T)
        energies = sp.diags(fock.states @ np.asarray(bath.omegas, float))

        def kron(a, b):
            return sp.csr_matrix(sp.kron(a, b), dtype=self.dtype)

        self.H_static = kron(0.5 * omega0 * spin.matrix("Sz"), eye_f) + kron(eye_s, energies) \
            + kron(spin.matrix("S+"), ca) + kron(spin.matrix("S-"), cad)
        self.H_static.sum_duplicates()
        self.X = kron(spin.matrix("Sx"), eye_f)
        self.Sm = kron(spin.matrix("S-"), eye_f)
        self.Sp = kron(spin.matrix("S+"), eye_f)
        self.A = kron(eye_s, ca)
        self.Ad = kron(eye_s, cad)
        self.fock_modes_T = [sp.csr_matrix(fock.annihilation(nu).T, dtype=self.dtype) for nu in range(self.M)]
        self._occ = fock.states
        self._inv_sqrt_fact = np.exp(-0.5 * gammaln(np.arange(fock.max_total + 1) + 1.0))
        self._h_cache = (None, None)
        self._flush = np.sqrt(np.finfo(self.rdtype).tiny)

    # packing -----------------------------------------------------------------
    def split(self, y):
        n, M = self.n_psi, self.M
        return y[:n], y[n: n + M], y[n + M:]

    def pack(self, psi, alpha, gamma=None):
        gamma = np.zeros_like(alpha) if gamma is None else gamma
        return np.concatenate([psi, alpha, gamma], axis=0).astype(self.dtype, copy=False)

    def initial_state(self, alpha0: np.ndarray) -> np.ndarray:
        """Column batch with every trajectory in |g, vac> and the given (B, M) amplitudes."""
        alpha0 = np.asarray(alpha0)
        B = len(alpha0)
        psi = np.zeros((self.n_psi, B), dtype=self.dtype)
        psi[0] = 1.0
        return self.pack(psi, alpha0.T.astype(self.dtype))

    # conditional state -------------------------------------------------------
    def projection_coefficients(self, gamma):
        """<-gamma|s> exp(|gamma|^2/2) for every Fock state s, shape (D, B)."""
        B = gamma.shape[1]
        powers = (-gamma.conj())[:, None, :] ** np.arange(self.basis.fock.max_total + 1)[None, :, None]
        powers = powers * self._inv_sqrt_fact[None, :, None]
        coef = np.ones((self.D, B), dtype=self.dtype)
        for nu in range(self.M):
            coef = coef * powers[nu, self._occ[:, nu], :]
        return coef

    def conditional(self, psi, gamma=None, coef=None):
        """System state conditioned on the bath coherent state, shape (S, B)."""
        blocks = psi.reshape(self.S, self.D, -1)
        if self.kappa == 0.0 and coef is None:
            return blocks[:, 0, :]
        if coef is None:
            coef = self.projection_coefficients(gamma)
        return np.einsum("sdb,db->sb", blocks, coef)

    def conditional_from_flat(self, y):
        psi, _, gamma = self.split(y)
        return self.conditional(psi, gamma)

    def _lower(self, f):
        out = np.zeros_like(f)
        out[:-1] = self.up * f[1:]
        return out

    def _lowering_expect(self, f):
        nrm = np.sum(f.real**2 + f.imag**2, axis=0)
        u = np.sum(f.conj() * self._lower(f), axis=0)
        safe = np.where(nrm > 0, nrm, 1.0)
        return u / safe, nrm

    def hamiltonian(self, t):
        """Sparse H_0(t) on the joint space (cached for the last time queried)."""
        dval = float(self.drive.value(t))
        if self._h_cache[0] != dval:
            h = self.H_static + dval * self.X if dval != 0.0 else self.H_static
            self._h_cache = (dval, sp.csr_matrix(h))
        return self._h_cache[1]

    # right-hand side ---------------------------------------------------------
    def rhs(self, t, y):
        psi, alpha, gamma = self.split(y)
        f = self.conditional(psi, gamma)
        e, _ = self._lowering_expect(f)
        k = self.kappa
        h = self.hamiltonian(t) @ psi
        sig_m = self.c.conj() @ (alpha.conj() + gamma.conj())
        h += sig_m * (self.Sm @ psi)
        h -= (1.0 + k) * e.conj() * (self.A @ psi)
        if k:
            h += (self.c @ gamma) * (self.Sp @ psi)
            h -= k * e * (self.Ad @ psi)
        dalpha = -1j * (self.omegas * alpha + self.cconj * e)
        dgamma = -1j * k * (self.omegas * gamma + self.cconj * e)
        return self.pack(-1j * h, dalpha, dgamma)

    def dfdt(self, t, y):
        d = float(self.drive.derivative(t))
        out = np.zeros_like(y)
        if d != 0.0:
            out[: self.n_psi] = (-1j * d) * (self.X @ y[: self.n_psi])
        return out

    def linearize(self, t, y):
        """Exact (real-linear) Jacobian action of ``rhs`` at (t, y)."""
        psi, alpha, gamma = self.split(y)
        k = self.kappa
        coef = None if k == 0.0 else self.projection_coefficients(gamma)
        f = self.conditional(psi, gamma, coef)
        e, nrm = self._lowering_expect(f)
        inv = 1.0 / np.where(nrm > 0, nrm, 1.0)
        sm_f = self._lower(f)
        H = self.hamiltonian(t)
        A, Ad, Sm, Sp = self.A, self.Ad, self.Sm, self.Sp
        ca = A @ psi
        sm_psi = Sm @ psi
        sig_m = self.c.conj() @ (alpha.conj() + gamma.conj())
        ce = (1.0 + k) * e.conj()
        cc = self.cconj
        n = self.n_psi
        S, D = self.S, self.D
        up_sig = (self.up * sig_m)[:, None, :].astype(self.dtype, copy=False)
        if k:
            cad = Ad @ psi
            sp_psi = Sp @ psi
            sig_p = self.c @ gamma
            blocks = psi.reshape(self.S, self.D, -1)
            # d f / d gamma*_nu = -sum_s sqrt(n_nu) coef_{s - e_nu} psi_s
            dfdg = np.stack([-np.einsum("sdb,db->sb", blocks, a_t @ coef) for a_t in self.fock_modes_T])

        def action(v):
            dpsi, dalpha, dgamma = v[:n], v[n: n + self.M], v[n + self.M:]
            if k:
                df = np.einsum("sdb,db->sb", dpsi.reshape(self.S, self.D, -1), coef) \
                    + np.einsum("mb,msb->sb", dgamma.conj(), dfdg)
            else:
                df = dpsi.reshape(self.S, self.D, -1)[:, 0, :]
            dsig_m = self.c.conj() @ (dalpha.conj() + dgamma.conj())
            dnrm = 2.0 * np.sum(f.real * df.real + f.imag * df.imag, axis=0)
            du = np.sum(df.conj() * sm_f + f.conj() * self._lower(df), axis=0)
            de = (du - e * dnrm) * inv
            out = np.empty_like(v)
            h = H @ dpsi
            # S- is a shift between spin blocks: (S- x)_m = up_m x_{m+1}
            h3, d3 = h.reshape(S, D, -1), dpsi.reshape(S, D, -1)
            h3[:-1] += d3[1:] * up_sig
            tmp = A @ dpsi
            tmp *= ce
            h -= tmp
            np.multiply(sm_psi, dsig_m, out=tmp)
            h += tmp
            np.multiply(ca, (1.0 + k) * de.conj(), out=tmp)
            h -= tmp
            if k:
                h += sig_p * (Sp @ dpsi) + (self.c @ dgamma) * sp_psi
                h -= k * (e * (Ad @ dpsi) + de * cad)
            np.multiply(h, -1j, out=out[:n])
            out[n: n + self.M] = -1j * (self.omegas * dalpha + cc * de)
            out[n + self.M:] = (-1j * k) * (self.omegas * dgamma + cc * de)
            return out

        return action

    def semilinear(self, t, y):
        """Linear part only: (-i H_0(t) psi, -i omega alpha, -i kappa omega gamma)."""
        H = self.hamiltonian(t)
        n, M, k = self.n_psi, self.M, self.kappa

        def action(v):
            out = np.empty_like(v)
            out[:n] = -1j * (H @ v[:n])
            out[n: n + M] = -1j * self.omegas * v[n: n + M]
            out[n + M:] = (-1j * k) * self.omegas * v[n + M:]
            return out

        return action

    def normalize(self, y):
        """Rescale every psi to unit norm (the dynamics is invariant under this).

        Components below sqrt(smallest normal float) are flushed to zero: they sit
        far below rounding level, and left alone they decay into subnormal numbers
        that slow every later operator application by an order of magnitude.
        """
        out = np.ascontiguousarray(y).copy()
        flush_small(out, self._flush)
        psi = out[: self.n_psi]
        nrm = np.sqrt(np.sum(psi.real**2 + psi.imag**2, axis=0))
        good = nrm > 0
        psi[:, good] /= nrm[good].astype(self.rdtype)
        return out


def stochastic_rhs(t, traj: Trajectory, bath: BathDiscretization, drive: DriveWaveform,
                   basis: CompositeBasis, frame: str = "bargmann"):
    """(dpsi/dt, dalpha/dt) for a single trajectory; ``t`` in units of 1/omega_0."""
    model = StochasticModel(basis, bath, drive, frame)
    gamma = None if traj.gamma is None else np.asarray(traj.gamma, complex)[:, None]
    y = model.pack(np.asarray(traj.psi, complex).reshape(-1, 1), np.asarray(traj.alpha, complex)[:, None], gamma)
    f = model.conditional_from_flat(y)
    if not np.sum(np.abs(f) ** 2) > 0:
        raise TrajectoryFailure("conditional state has zero norm", [traj.trajectory_index])
    dpsi, dalpha, _ = model.split(model.rhs(t, y))
    return dpsi[:, 0], dalpha[:, 0]


@dataclass
class RunResult:
    series: object
    dumps: dict
    rho_final: np.ndarray
    stats: IntegrationStats
    wall_time: float
    failed: np.ndarray
    final_state: BatchState


def propagate_batch(params: SimParams, recorder=None, dump_times=(),
                    linearization: str = "exact") -> RunResult:
    """Propagate ``params.n_batch`` trajectories in lockstep and record observables.

    ``recorder.record(BatchState)`` is called on every record time; the default
    recorder builds an :class:`~superrad.observables.ObservableSeries`.
    ``dump_times`` (laser cycles, on the record grid) select raw alpha snapshots.
    ``linearization="semilinear"`` swaps the exact Jacobian for the linear part only.
    """
    from .observables import SeriesRecorder, estimate_rho_system

    rdtype, cdtype = PRECISIONS[params.precision]
    basis = CompositeBasis.build(params.n_atoms, params.n_modes, params.max_photons)
    bath = params.bath()
    model = StochasticModel(basis, bath, params.drive, params.frame, dtype=cdtype)
    indices = np.arange(params.n_batch)
    alpha0 = VacuumSampler(params.seed, params.n_modes).sample_batch(indices)
    y0 = model.initial_state(alpha0)
    cycle = params.cycle
    grid = params.record_times()
    dump_set = {round(float(t), 9) for t in dump_times}
    recorder = recorder or SeriesRecorder(params.n_atoms, params.n_modes)
    dumps: dict = {}
    active = np.ones(params.n_batch, dtype=bool)
    holder = {}

    def snapshot(t_int, y):
        psi, alpha, gamma = model.split(y)
        f = model.conditional(psi, gamma)
        t_cyc = t_int / cycle
        state = BatchState(t_cyc, alpha.T.astype(complex), f.T.astype(complex), params.n_atoms, indices,
                           active.copy())
        holder["last"] = state
        recorder.record(state)
        key = round(float(t_cyc), 9)
        if key in dump_set:
            dumps[float(t_cyc)] = np.ascontiguousarray(alpha.T[active])

    def after_step(y):
        f = model.conditional_from_flat(y)
        nrm = np.sum(np.abs(f) ** 2, axis=0)
        bad = active & ~(np.isfinite(nrm) & (nrm > np.finfo(rdtype).tiny)
                         & np.all(np.isfinite(y), axis=0))
        if bad.any():
            if params.failure_policy == "abort":
                raise TrajectoryFailure(
                    f"{bad.sum()} trajectories collapsed (first index {indices[bad][0]})", indices[bad])
            log.warning("dropping %d failed trajectories: %s", bad.sum(), indices[bad][:10])
            active[bad] = False
            y = y.copy()
            y[:, bad] = y0[:, bad]
        y = model.normalize(y)
        if not active.all():
            y[:, ~active] = y0[:, ~active]
        return y

    class _Problem:
        rhs = staticmethod(model.rhs)
        dfdt = staticmethod(model.dfdt)
        linearize = staticmethod(model.linearize if linearization == "exact" else model.semilinear)

    start = _time.perf_counter()
    stats = integrate(_Problem, params.t_start * cycle, y0, grid * cycle, params.controller(), snapshot,
                      after_step=after_step, batch_axis=-1)
    wall = _time.perf_counter() - start
    final = holder["last"]
    series = recorder.finalize() if hasattr(recorder, "finalize") else None
    log.info("propagated %d trajectories: %d steps (%d rejected) in %.1fs",
             params.n_batch, stats.accepted, stats.rejected, wall)
    return RunResult(series, dumps, estimate_rho_system(final.valid()), stats, wall, ~active, final)
