"""Joint Hilbert space of the collective spin ladder and a truncated multimode Fock space.

State vectors are plain complex numpy arrays whose last axis runs over the
composite basis, ``index = m * fock.dimension + fock_index``; any leading axes
are treated as batch axes.  All ``apply_*`` functions are pure and return new
arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

from .exceptions import InfeasibleConfigError

#: Upper bound on the number of Fock states that ``build_fock_basis`` will enumerate.
DEFAULT_MAX_FOCK_STATES = 2_000_000

SPIN_OPS = ("S+", "S-", "Sx", "Sy", "Sz")


@dataclass(frozen=True)
class CollectiveSpinBasis:
    """Symmetric Dicke ladder of ``n_atoms`` two-level atoms.

    Level ``m`` holds ``m`` excited atoms; ``m = 0`` is the collective ground state.
    """

    n_atoms: int

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be positive")

    @property
    def dimension(self) -> int:
        return self.n_atoms + 1

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.n_atoms + 1)

    def raising_elements(self) -> np.ndarray:
        """Matrix elements <m+1|S+|m> for m = 0..N-1."""
        m = np.arange(self.n_atoms, dtype=float)
        return np.sqrt((m + 1.0) * (self.n_atoms - m))

    def sz_diagonal(self) -> np.ndarray:
        return 2.0 * self.levels - self.n_atoms

    def matrix(self, kind: str) -> sp.csr_matrix:
        """Sparse (N+1)x(N+1) matrix of a collective operator."""
        up = sp.diags(self.raising_elements(), -1, shape=(self.dimension,) * 2, dtype=complex)
        if kind == "S+":
            out = up
        elif kind == "S-":
            out = up.T
        elif kind == "Sx":
            out = up + up.T
        elif kind == "Sy":
            out = 1j * (up - up.T)
        elif kind == "Sz":
            out = sp.diags(self.sz_diagonal().astype(complex))
        else:
            raise ValueError(f"unknown collective operator {kind!r}")
        return sp.csr_matrix(out)


def _compositions(total: int, parts: int):
    # descending lexicographic order within a fixed total
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(eq=False)
class FockBasis:
    """Multimode Fock states with at most ``max_total`` photons in total."""

    n_modes: int
    max_total: int
    states: np.ndarray
    index_map: dict = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.states)

    @property
    def totals(self) -> np.ndarray:
        return self.states.sum(axis=1)

    def index(self, occupation) -> int:
        return self.index_map[tuple(int(n) for n in occupation)]

    def annihilation(self, mode: int) -> sp.csr_matrix:
        """Sparse matrix of a_mode (0-based mode index) inside the truncated space."""
        cache = self.__dict__.setdefault("_ann_cache", {})
        if mode not in cache:
            if not 0 <= mode < self.n_modes:
                raise IndexError(f"mode {mode} out of range for {self.n_modes} modes")
            occ = self.states[:, mode]
            cols = np.nonzero(occ > 0)[0]
            lowered = self.states[cols].copy()
            lowered[:, mode] -= 1
            rows = np.array([self.index_map[tuple(s)] for s in lowered.tolist()], dtype=np.int64)
            vals = np.sqrt(occ[cols].astype(float))
            cache[mode] = sp.csr_matrix((vals, (rows, cols)), shape=(self.dimension,) * 2)
        return cache[mode]

    def creation(self, mode: int) -> sp.csr_matrix:
        """Truncated a_mode^dagger: amplitudes leaving the space are dropped."""
        return sp.csr_matrix(self.annihilation(mode).T)

    def overflow_weights(self, mode: int) -> np.ndarray:
        """|<s+e_mode|a^dagger|s>|^2 for boundary states whose image is truncated away."""
        w = np.zeros(self.dimension)
        edge = self.totals == self.max_total
        w[edge] = self.states[edge, mode] + 1.0
        return w


def build_fock_basis(n_modes: int, max_total: int, max_states: int = DEFAULT_MAX_FOCK_STATES) -> FockBasis:
    """Enumerate all occupation tuples with total photon number <= ``max_total``.

    States are graded by total photon number and ordered descending-lexicographically
    inside each grade, e.g. ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)``.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if max_total < 0:
        raise ValueError("max_total must be >= 0")
    count = comb(n_modes + max_total, max_total)
    if count > max_states:
        raise InfeasibleConfigError(
            f"Fock space with {n_modes} modes and {max_total} photons has {count} states "
            f"(limit {max_states})"
        )
    states = np.array(
        [s for n in range(max_total + 1) for s in _compositions(n, n_modes)], dtype=np.int64
    ).reshape(count, n_modes)
    index_map = {tuple(s): i for i, s in enumerate(states.tolist())}
    return FockBasis(n_modes, max_total, states, index_map)


@dataclass(eq=False)
class CompositeBasis:
    """Tensor product spin (x) Fock with row-major flattening (spin index outermost)."""

    spin: CollectiveSpinBasis
    fock: FockBasis

    @classmethod
    def build(cls, n_atoms: int, n_modes: int, max_total: int, **kw) -> "CompositeBasis":
        return cls(CollectiveSpinBasis(n_atoms), build_fock_basis(n_modes, max_total, **kw))

    @property
    def dimension(self) -> int:
        return self.spin.dimension * self.fock.dimension

    @property
    def shape(self) -> tuple[int, int]:
        return self.spin.dimension, self.fock.dimension

    def index(self, m: int, occupation) -> int:
        return m * self.fock.dimension + self.fock.index(occupation)

    def unflatten(self, i: int) -> tuple[int, tuple]:
        m, f = divmod(int(i), self.fock.dimension)
        return m, tuple(int(n) for n in self.fock.states[f])

    def blocks(self, psi: np.ndarray) -> np.ndarray:
        """View ``psi`` as (..., spin, fock)."""
        return psi.reshape(psi.shape[:-1] + self.shape)

    def basis_state(self, m: int = 0, occupation=None, dtype=complex) -> np.ndarray:
        if occupation is None:
            occupation = (0,) * self.fock.n_modes
        out = np.zeros(self.dimension, dtype=dtype)
        out[self.index(m, occupation)] = 1.0
        return out

    def ground_vacuum(self, dtype=complex) -> np.ndarray:
        return self.basis_state(0, None, dtype)

    def operator_matrix(self, spin_op=None, fock_op=None) -> sp.csr_matrix:
        """Kronecker product of a spin-sector and a Fock-sector matrix (identity if None)."""
        a = sp.identity(self.spin.dimension, format="csr") if spin_op is None else spin_op
        b = sp.identity(self.fock.dimension, format="csr") if fock_op is None else fock_op
        return sp.csr_matrix(sp.kron(a, b))


class DiscardedNorm:
    """Accumulates squared amplitude dropped at the photon-number truncation.

    ``value`` has the batch shape of the vectors passed through ``apply_mode``.
    Keep one accumulator per trajectory batch; it is not thread-safe.
    """

    def __init__(self):
        self.value = 0.0

    def add(self, amount):
        self.value = self.value + amount


def spin_shift(kind: str, blocks: np.ndarray, spin: CollectiveSpinBasis) -> np.ndarray:
    """Apply a collective operator to the spin axis (-2) of a (..., spin, fock) array."""
    out = np.zeros_like(blocks)
    up = spin.raising_elements().astype(blocks.real.dtype)[:, None]
    if kind in ("S+", "Sx", "Sy"):
        raised = up * blocks[..., :-1, :]
    if kind in ("S-", "Sx", "Sy"):
        lowered = up * blocks[..., 1:, :]
    if kind == "S+":
        out[..., 1:, :] = raised
    elif kind == "S-":
        out[..., :-1, :] = lowered
    elif kind == "Sx":
        out[..., 1:, :] = raised
        out[..., :-1, :] += lowered
    elif kind == "Sy":
        out[..., 1:, :] = 1j * raised
        out[..., :-1, :] -= 1j * lowered
    elif kind == "Sz":
        out[...] = spin.sz_diagonal().astype(blocks.real.dtype)[:, None] * blocks
    else:
        raise ValueError(f"unknown collective operator {kind!r}")
    return out


def fock_apply(matrix: sp.spmatrix, blocks: np.ndarray) -> np.ndarray:
    """Apply a Fock-sector sparse matrix along the last axis."""
    flat = blocks.reshape(-1, blocks.shape[-1])
    out = (matrix @ flat.T).T
    return np.ascontiguousarray(out, dtype=blocks.dtype).reshape(blocks.shape)


def apply_collective(kind: str, psi: np.ndarray, basis: CompositeBasis) -> np.ndarray:
    """S+, S-, Sx, Sy or Sz acting on the spin factor (ladder edges map to zero)."""
    return spin_shift(kind, basis.blocks(psi), basis.spin).reshape(psi.shape)


def apply_mode(kind: str, mode: int, psi: np.ndarray, basis: CompositeBasis,
               discarded: DiscardedNorm | None = None) -> np.ndarray:
    """Annihilate or create a photon in ``mode`` (0-based)."""
    blocks = basis.blocks(psi)
    if kind == "annihilate":
        mat = basis.fock.annihilation(mode)
    elif kind == "create":
        mat = basis.fock.creation(mode)
        if discarded is not None:
            w = basis.fock.overflow_weights(mode)
            discarded.add(np.einsum("...mf,f->...", np.abs(blocks) ** 2, w))
    else:
        raise ValueError(f"unknown mode operator {kind!r}")
    return fock_apply(mat, blocks).reshape(psi.shape)


def apply_h_system(t: float, drive, psi: np.ndarray, basis: CompositeBasis,
                   omega0: float = 1.0) -> np.ndarray:
    """(omega0/2) Sz psi + d0 F(t) Sx psi, with ``drive(t)`` returning d0 F(t)."""
    blocks = basis.blocks(psi)
    f = float(drive(t)) if callable(drive) else float(drive.value(t))
    out = 0.5 * omega0 * spin_shift("Sz", blocks, basis.spin)
    if f != 0.0:
        out += f * spin_shift("Sx", blocks, basis.spin)
    return out.reshape(psi.shape)


def bath_energies(bath, fock: FockBasis) -> np.ndarray:
    """Diagonal of H_B over the Fock states."""
    return fock.states @ np.asarray(bath.omegas, dtype=float)


def apply_h_bath(bath, psi: np.ndarray, basis: CompositeBasis) -> np.ndarray:
    """sum_nu omega_nu n_nu, diagonal in the Fock basis."""
    if bath.n_modes != basis.fock.n_modes:
        raise ValueError("bath and basis disagree on the number of modes")
    energies = bath_energies(bath, basis.fock).astype(psi.real.dtype)
    return (basis.blocks(psi) * energies).reshape(psi.shape)


def coupled_annihilation(bath, fock: FockBasis) -> sp.csr_matrix:
    """sum_nu c_nu a_nu on the Fock sector."""
    out = sp.csr_matrix((fock.dimension,) * 2, dtype=complex)
    for nu, c in enumerate(np.asarray(bath.couplings)):
        out = out + complex(c) * fock.annihilation(nu)
    return sp.csr_matrix(out)


def apply_h_int(bath, psi: np.ndarray, basis: CompositeBasis) -> np.ndarray:
    """sum_nu c_nu S+ a_nu psi + c_nu^* S- a_nu^dagger psi."""
    blocks = basis.blocks(psi)
    ca = coupled_annihilation(bath, basis.fock)
    absorbed = spin_shift("S+", fock_apply(ca, blocks), basis.spin)
    emitted = spin_shift("S-", fock_apply(sp.csr_matrix(ca.conj().T), blocks), basis.spin)
    return (absorbed + emitted).reshape(psi.shape)
