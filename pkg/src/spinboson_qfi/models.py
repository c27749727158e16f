"""Spin-boson models: Hamiltonians, jump operators and Kraus maps.

Three models share one parameter container:

* ``TC``  -- Tavis-Cummings coupling ``(lam/sqrt(S)) (a S+ + a^dag S-)``
* ``GD``  -- generalized Dicke coupling ``(lam/sqrt(S)) (a + a^dag) Sz``
* ``BTC`` -- boundary time crystal, driven collective spin with collective
  decay ``sqrt(gamma/S) S-`` and no boson.

Frequencies are in units of ``kappa`` (``gamma`` for BTC) by default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .hilbert import CompositeSpace, build_boson_operators, build_spin_operators


class Model(str, Enum):
    TC = "TC"
    GD = "GD"
    BTC = "BTC"


class Target(str, Enum):
    """Parameter to be estimated."""

    OMEGA = "Omega"
    LAMBDA = "Lambda"


@dataclass(frozen=True)
class ModelParams:
    """Model selector and physical parameters.

    ``lam`` is the spin-boson coupling (``lambda`` is reserved in Python);
    ``phi_lo`` is the homodyne local-oscillator phase.
    """

    model: Model = Model.TC
    omega: float = 0.0
    delta_spin: float = 0.0
    delta_boson: float = 0.0
    lam: float = 0.0
    kappa: float = 1.0
    gamma: float = 1.0
    phi_lo: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        for name in ("omega", "delta_spin", "delta_boson", "lam", "kappa", "gamma", "phi_lo"):
            value = getattr(self, name)
            if not np.isfinite(value) or np.iscomplexobj(value):
                raise ValueError(f"{name} must be a finite real number, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.model is Model.BTC:
            if self.gamma <= 0:
                raise ValueError("BTC requires gamma > 0")
        elif self.kappa <= 0:
            raise ValueError("kappa must be positive")

    def with_param(self, target: Target, value: float) -> "ModelParams":
        target = Target(target)
        if target is Target.OMEGA:
            return replace(self, omega=value)
        return replace(self, lam=value)

    def value_of(self, target: Target) -> float:
        return self.omega if Target(target) is Target.OMEGA else self.lam

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.value
        return d


class CountingKraus(NamedTuple):
    K0: np.ndarray
    K1: sp.csr_matrix


def build_hamiltonian(space: CompositeSpace, params: ModelParams) -> sp.csr_matrix:
    """Hamiltonian in the frame rotating with the drive."""
    spin = build_spin_operators(space)
    drive = 0.5 * params.omega * (spin["S_plus"] + spin["S_minus"])
    if params.model is Model.BTC:
        return drive.tocsr()
    if params.model not in (Model.TC, Model.GD):
        raise ValueError(f"unknown model {params.model!r}")
    boson = build_boson_operators(space)
    h = drive + params.delta_spin * spin["Sz"] + params.delta_boson * boson["number"]
    h = h + params.lam * _coupling(space, params.model)
    return h.tocsr()


def _coupling(space: CompositeSpace, model: Model) -> sp.csr_matrix:
    spin = build_spin_operators(space)
    boson = build_boson_operators(space)
    scale = 1.0 / np.sqrt(space.total_spin)
    if model is Model.TC:
        op = boson["a"] @ spin["S_plus"] + boson["a_dag"] @ spin["S_minus"]
    elif model is Model.GD:
        op = (boson["a"] + boson["a_dag"]) @ spin["Sz"]
    else:
        raise ValueError(f"model {model.value} has no spin-boson coupling")
    return (scale * op).tocsr()


def build_jump_operator(space: CompositeSpace, params: ModelParams) -> sp.csr_matrix:
    """``sqrt(kappa) a`` for TC/GD, ``sqrt(gamma/S) S-`` for BTC."""
    if params.model is Model.BTC:
        s_minus = build_spin_operators(space)["S_minus"]
        return (np.sqrt(params.gamma / space.total_spin) * s_minus).tocsr()
    return (np.sqrt(params.kappa) * build_boson_operators(space)["a"]).tocsr()


def build_dH(space: CompositeSpace, params: ModelParams, target: Target) -> sp.csr_matrix:
    """Derivative of the Hamiltonian with respect to ``target``.

    H is linear in both Omega and lambda, so this is parameter independent.
    """
    target = Target(target)
    if target is Target.OMEGA:
        return build_spin_operators(space)["Sx"]
    if params.model is Model.BTC:
        raise ValueError("the BTC model has no coupling lambda to estimate")
    return _coupling(space, params.model)


def effective_hamiltonian(space: CompositeSpace, params: ModelParams) -> sp.csr_matrix:
    """``H - (i/2) L^dag L``."""
    h = build_hamiltonian(space, params)
    L = build_jump_operator(space, params)
    return (h - 0.5j * (L.conj().T @ L)).tocsr()


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")


def kraus_counting(space: CompositeSpace, params: ModelParams, dt: float) -> CountingKraus:
    """No-click ``K0 = exp(-i H_eff dt)`` (exact) and click ``K1 = sqrt(dt) L``."""
    _check_dt(dt)
    K0 = sla.expm(-1j * dt * effective_hamiltonian(space, params).toarray())
    K1 = (np.sqrt(dt) * build_jump_operator(space, params)).tocsr()
    return CountingKraus(K0, K1)


def frechet_expm(A: np.ndarray, E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(exp(A), L(A, E))`` from the block matrix ``[[A, E], [0, A]]``.

    The upper-right block of the block exponential is the Frechet
    derivative of the exponential at ``A`` in direction ``E``.
    """
    d = A.shape[0]
    block = np.zeros((2 * d, 2 * d), dtype=complex)
    block[:d, :d] = A
    block[d:, d:] = A
    block[:d, d:] = E
    out = sla.expm(block)
    return out[:d, :d].copy(), out[:d, d:].copy()


def kraus_counting_with_derivative(
    space: CompositeSpace, params: ModelParams, target: Target, dt: float
) -> tuple[np.ndarray, np.ndarray, sp.csr_matrix]:
    """``(K0, dK0, K1)`` from a single block exponential."""
    _check_dt(dt)
    A = -1j * dt * effective_hamiltonian(space, params).toarray()
    E = -1j * dt * build_dH(space, params, target).toarray()
    K0, dK0 = frechet_expm(A, E)
    K1 = (np.sqrt(dt) * build_jump_operator(space, params)).tocsr()
    return K0, dK0, K1


def homodyne_drift_operator(space: CompositeSpace, params: ModelParams, dt: float) -> sp.csr_matrix:
    """The current-independent part ``1 - i H dt - L^dag L dt / 2`` of ``K_J``."""
    _check_dt(dt)
    L = build_jump_operator(space, params)
    eye = sp.identity(space.dim, dtype=complex, format="csr")
    h = build_hamiltonian(space, params)
    return (eye - 1j * dt * h - 0.5 * dt * (L.conj().T @ L)).tocsr()


def kraus_homodyne(space: CompositeSpace, params: ModelParams, J: float, dt: float) -> sp.csr_matrix:
    """First-order homodyne Kraus operator for current value ``J``.

    ``K_J = 1 - i H dt - L^dag L dt / 2 + exp(i phi_lo) L J dt``.
    """
    L = build_jump_operator(space, params)
    drift = homodyne_drift_operator(space, params, dt)
    return (drift + (np.exp(1j * params.phi_lo) * J * dt) * L).tocsr()


def build_dK(
    space: CompositeSpace,
    params: ModelParams,
    target: Target,
    which: str,
    dt: float,
    J: float | None = None,
):
    """Derivative of a Kraus operator with respect to ``target``.

    ``which`` is one of ``"K0"``, ``"K1"``, ``"K_J"``.  ``dK0`` is dense
    (block-exponential Frechet derivative), the other two are sparse.
    """
    _check_dt(dt)
    dH = build_dH(space, params, target)
    if which == "K0":
        return kraus_counting_with_derivative(space, params, target, dt)[1]
    if which == "K1":
        return sp.csr_matrix((space.dim, space.dim), dtype=complex)
    if which == "K_J":
        # independent of J: the current multiplies L, which does not depend on H
        return (-1j * dt * dH).tocsr()
    raise ValueError(f"unknown Kraus operator {which!r}; expected K0, K1 or K_J")
