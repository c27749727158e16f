"""Collective spin (Dicke basis) tensored with a truncated bosonic mode.

Basis ordering is fixed: the spin label is the major index and the Fock
label the minor one.  The spin factor is ordered from ``M_z = +S`` down to
``M_z = -S``, so ``Sz`` is ``diag(S, S-1, ..., -S)`` on the spin factor and
``index(M_z, n) = (S - M_z) * (n_max + 1) + n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class CompositeSpace:
    """Hilbert space of ``n_spins`` collective spins and one boson mode.

    Parameters
    ----------
    n_spins : int
        Number of two-level atoms N.  The total spin is S = N/2.
    fock_cutoff : int
        Largest retained boson number ``n_max``.  Zero is allowed for models
        without a boson (the boson factor is then one-dimensional).
    """

    n_spins: int
    fock_cutoff: int

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise ValueError(f"n_spins must be a positive integer, got {self.n_spins}")
        if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 0:
            raise ValueError(f"fock_cutoff must be a non-negative integer, got {self.fock_cutoff}")

    @property
    def total_spin(self) -> float:
        return self.n_spins / 2

    @property
    def spin_dim(self) -> int:
        return self.n_spins + 1

    @property
    def boson_dim(self) -> int:
        return self.fock_cutoff + 1

    @property
    def dim(self) -> int:
        return self.spin_dim * self.boson_dim

    def spin_index(self, m_z: float) -> int:
        j = self.total_spin - m_z
        if abs(j - round(j)) > 1e-9 or not (0 <= round(j) <= self.n_spins):
            raise ValueError(f"M_z={m_z} is not a valid magnetization for S={self.total_spin}")
        return int(round(j))

    def index(self, m_z: float, n: int) -> int:
        """Flat index of ``|S, m_z> (x) |n>``."""
        if int(n) != n or not (0 <= n <= self.fock_cutoff):
            raise ValueError(f"boson number n={n} outside [0, {self.fock_cutoff}]")
        return self.spin_index(m_z) * self.boson_dim + int(n)

    def label(self, index: int) -> tuple[float, int]:
        """Inverse of :meth:`index`: returns ``(M_z, n)``."""
        if not (0 <= index < self.dim):
            raise ValueError(f"index {index} outside [0, {self.dim})")
        j, n = divmod(int(index), self.boson_dim)
        return self.total_spin - j, n

    def magnetizations(self) -> np.ndarray:
        """``M_z`` values of the spin factor in basis order."""
        return self.total_spin - np.arange(self.spin_dim)

    def labels(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``(M_z, n)`` for every flat index."""
        m = np.repeat(self.magnetizations(), self.boson_dim)
        n = np.tile(np.arange(self.boson_dim), self.spin_dim)
        return m, n

    def as_grid(self, amplitudes: np.ndarray) -> np.ndarray:
        """Reshape a state vector to ``C[j, n]`` with ``j = S - M_z``."""
        return np.asarray(amplitudes).reshape(self.spin_dim, self.boson_dim)


def _spin_factor_ladders(n_spins: int) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    s = n_spins / 2
    m = s - np.arange(n_spins + 1)
    # S_+ |S,m> = sqrt((S-m)(S+m+1)) |S,m+1>; m+1 sits one row above m
    up = np.sqrt((s - m[1:]) * (s + m[1:] + 1))
    s_plus = sp.diags(up, offsets=1, shape=(n_spins + 1, n_spins + 1), format="csr", dtype=complex)
    s_minus = s_plus.T.tocsr()
    s_z = sp.diags(m.astype(complex), format="csr")
    return s_plus, s_minus, s_z


def build_spin_operators(space: CompositeSpace) -> dict[str, sp.csr_matrix]:
    """Collective spin operators tensored with the boson identity.

    Returns a dict with keys ``Sx, Sy, Sz, S_plus, S_minus``.
    """
    s_plus, s_minus, s_z = _spin_factor_ladders(space.n_spins)
    eye_b = sp.identity(space.boson_dim, dtype=complex, format="csr")

    def lift(op):
        return sp.kron(op, eye_b, format="csr")

    sp_full = lift(s_plus)
    sm_full = lift(s_minus)
    return {
        "Sx": ((sp_full + sm_full) * 0.5).tocsr(),
        "Sy": ((sp_full - sm_full) * (-0.5j)).tocsr(),
        "Sz": lift(s_z),
        "S_plus": sp_full,
        "S_minus": sm_full,
    }


def build_boson_operators(space: CompositeSpace) -> dict[str, sp.csr_matrix]:
    """Boson ladder and number operators tensored with the spin identity.

    Returns a dict with keys ``a, a_dag, number``.  The annihilation
    operator obeys ``<n-1|a|n> = sqrt(n)``; ``[a, a_dag]`` is the identity
    except on the top Fock level.
    """
    nb = space.boson_dim
    a_b = sp.diags(np.sqrt(np.arange(1, nb)).astype(complex), offsets=1, shape=(nb, nb), format="csr")
    eye_s = sp.identity(space.spin_dim, dtype=complex, format="csr")
    a = sp.kron(eye_s, a_b, format="csr")
    a_dag = a.conj().T.tocsr()
    number = sp.kron(eye_s, sp.diags(np.arange(nb).astype(complex)), format="csr")
    return {"a": a, "a_dag": a_dag, "number": number}


def dicke_number_state(space: CompositeSpace, m_z: float, n: int) -> np.ndarray:
    """Basis state ``|S, m_z> (x) |n>``."""
    psi = np.zeros(space.dim, dtype=complex)
    psi[space.index(m_z, n)] = 1.0
    return psi


def spin_coherent_state(space: CompositeSpace, theta: float, phi: float, n: int = 0) -> np.ndarray:
    """SU(2) coherent state ``|S, theta, phi>`` tensored with ``|n>``.

    Uses ``C_M = sqrt(binom(2S, S+M)) cos(theta/2)^(S+M) sin(theta/2)^(S-M)
    exp(-i (S-M) phi)``, so ``theta = 0`` is ``|S, S>`` and ``theta = pi``
    is ``|S, -S>``.  With this phase convention the mean spin points along
    polar angle ``theta`` and azimuth ``-phi``.
    """
    n_spins = space.n_spins
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    amps = np.empty(n_spins + 1, dtype=complex)
    for j in range(n_spins + 1):
        # j = S - M, S + M = N - j
        amps[j] = np.sqrt(comb(n_spins, j)) * c ** (n_spins - j) * s**j * np.exp(-1j * j * phi)
    amps /= np.linalg.norm(amps)
    fock = np.zeros(space.boson_dim, dtype=complex)
    if int(n) != n or not (0 <= n <= space.fock_cutoff):
        raise ValueError(f"boson number n={n} outside [0, {space.fock_cutoff}]")
    fock[int(n)] = 1.0
    return np.kron(amps, fock)


def expectation(op, psi: np.ndarray) -> complex:
    """``<psi|op|psi>`` for a normalized state."""
    return complex(np.vdot(psi, op @ psi))
