"""Mean-field dynamics of the generalized Dicke model and closed-form TC rates.

State vector ``(m_x, m_y, m_z, m_q, m_p)``: normalized collective spin plus
the two boson quadratures.  The flow conserves ``m_x^2 + m_y^2 + m_z^2``,
which shows up as one neutral direction in every linearization; stability
is therefore judged on the tangent space of the spin sphere.
"""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass

import numpy as np

from .models import Model, ModelParams

MARGINAL_TOLERANCE = 1e-10
SQRT2 = np.sqrt(2.0)


class MeanFieldError(RuntimeError):
    """The mean-field integration produced non-finite values."""


@dataclass(frozen=True)
class MeanFieldState:
    m_x: float
    m_y: float
    m_z: float
    m_q: float
    m_p: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "MeanFieldState":
        values = np.asarray(values, dtype=float)
        if values.shape != (5,):
            raise ValueError("a mean-field state has exactly five components")
        return cls(*map(float, values))

    @property
    def spin_norm(self) -> float:
        return float(np.sqrt(self.m_x**2 + self.m_y**2 + self.m_z**2))


@dataclass(frozen=True)
class StationaryBranch:
    """A fixed point with its linear-stability verdict.

    ``stability`` is ``"stable"``, ``"unstable"`` or ``"marginal"``.
    ``eigenvalues`` are those of the Jacobian restricted to the tangent
    space of the spin sphere (the conserved norm is removed).
    """

    label: str
    state: MeanFieldState
    stability: str
    eigenvalues: np.ndarray


def _require_gd(params: ModelParams) -> None:
    if params.model is not Model.GD:
        raise ValueError(f"mean-field equations are for the GD model, got {params.model.value}")
    if params.delta_spin != 0:
        raise ValueError("the mean-field equations assume zero spin detuning")


def _rhs(m: np.ndarray, omega: float, delta: float, lam: float, kappa: float) -> np.ndarray:
    mx, my, mz, mq, mp = m
    c = SQRT2 * lam
    return np.array(
        [
            -c * mp * my,
            -omega * mz + c * mp * mx,
            omega * my,
            delta * mp + c * mz - 0.5 * kappa * mq,
            -delta * mq - 0.5 * kappa * mp,
        ]
    )


def gd_meanfield_rhs(state: MeanFieldState | np.ndarray, params: ModelParams) -> np.ndarray:
    """Time derivative of ``(m_x, m_y, m_z, m_q, m_p)``."""
    _require_gd(params)
    m = state.as_array() if isinstance(state, MeanFieldState) else np.asarray(state, dtype=float)
    return _rhs(m, params.omega, params.delta_boson, params.lam, params.kappa)


def gd_meanfield_jacobian(state: MeanFieldState | np.ndarray, params: ModelParams) -> np.ndarray:
    _require_gd(params)
    m = state.as_array() if isinstance(state, MeanFieldState) else np.asarray(state, dtype=float)
    mx, my, mz, mq, mp = m
    c = SQRT2 * params.lam
    om, de, ka = params.omega, params.delta_boson, params.kappa
    return np.array(
        [
            [0.0, -c * mp, 0.0, 0.0, -c * my],
            [c * mp, 0.0, -om, 0.0, c * mx],
            [0.0, om, 0.0, 0.0, 0.0],
            [0.0, 0.0, c, -0.5 * ka, de],
            [0.0, 0.0, 0.0, -de, -0.5 * ka],
        ]
    )


def critical_coupling(params: ModelParams) -> float:
    """``sqrt((delta^2 + kappa^2/4) Omega / (2 delta))``."""
    delta = params.delta_boson
    if not delta > 0:
        raise ValueError("a finite critical coupling needs boson detuning delta > 0")
    return float(np.sqrt((delta**2 + 0.25 * params.kappa**2) * params.omega / (2.0 * delta)))


def tangent_eigenvalues(state: MeanFieldState, params: ModelParams) -> np.ndarray:
    """Jacobian eigenvalues on the tangent space of the spin sphere.

    The conserved norm makes ``m . J v = 0`` at a fixed point, so the
    tangent space is invariant and the radial direction carries a trivial
    zero eigenvalue, which is dropped here.
    """
    m = state.as_array()
    spin = m[:3]
    radius = np.linalg.norm(spin)
    if radius == 0:
        raise ValueError("the spin vector vanishes; no tangent space")
    # columns 1..2 of a complete QR basis are orthogonal to the spin vector
    q, _ = np.linalg.qr(spin[:, None] / radius, mode="complete")
    basis = np.zeros((5, 4))
    basis[:3, :2] = q[:, 1:]
    basis[3, 2] = 1.0
    basis[4, 3] = 1.0
    reduced = basis.T @ gd_meanfield_jacobian(state, params) @ basis
    return np.linalg.eigvals(reduced)


def classify_stability(eigenvalues: np.ndarray) -> str:
    re = np.real(eigenvalues)
    if np.any(re > MARGINAL_TOLERANCE):
        return "unstable"
    if np.any(np.abs(re) <= MARGINAL_TOLERANCE):
        return "marginal"
    return "stable"


def _branch(label: str, m: np.ndarray, params: ModelParams) -> StationaryBranch:
    state = MeanFieldState.from_array(m)
    eig = tangent_eigenvalues(state, params)
    return StationaryBranch(label, state, classify_stability(eig), eig)


def stationary_branches(params: ModelParams) -> list[StationaryBranch]:
    """Fixed points of the mean-field flow.

    Below the critical coupling (or for ``delta <= 0``, where none exists)
    only the normal point ``m_x = -1`` is returned; above it, the two
    superradiant points as well.  Each carries its stability tag.
    """
    _require_gd(params)
    normal = _branch("normal", np.array([-1.0, 0.0, 0.0, 0.0, 0.0]), params)
    if params.delta_boson <= 0 or params.lam <= 0:
        return [normal]
    lam_c = critical_coupling(params)
    if params.lam <= lam_c:
        return [normal]
    lam, delta, kappa = params.lam, params.delta_boson, params.kappa
    denom = delta**2 + 0.25 * kappa**2
    mx = -(lam_c**2) / lam**2
    branches = [normal]
    for sign, label in ((1.0, "superradiant+"), (-1.0, "superradiant-")):
        mz = sign * np.sqrt(1.0 - mx**2)
        mq = kappa * lam * mz / (SQRT2 * denom)
        mp = -SQRT2 * lam * delta * mz / denom
        branches.append(_branch(label, np.array([mx, 0.0, mz, mq, mp]), params))
    return branches


def normal_branch_unstable(params: ModelParams, lam: float) -> bool:
    from dataclasses import replace

    p = replace(params, lam=lam)
    eig = tangent_eigenvalues(MeanFieldState(-1.0, 0.0, 0.0, 0.0, 0.0), p)
    return bool(np.max(eig.real) > 0)


def locate_pitchfork(params: ModelParams, lam_hi: float | None = None, xtol: float = 1e-12) -> float:
    """Bisect on the coupling for the loss of stability of the normal point.

    Uses only the linearization, not the closed-form critical coupling, so
    it serves as an independent check of it.
    """
    _require_gd(params)
    lo = 0.0
    hi = lam_hi if lam_hi is not None else 1.0
    for _ in range(200):
        if normal_branch_unstable(params, hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ValueError("normal point stays stable for every tried coupling")
    while hi - lo > xtol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if normal_branch_unstable(params, mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def integrate_meanfield(
    initial: MeanFieldState | np.ndarray,
    params: ModelParams,
    t_grid,
    dt: float = 1e-3,
) -> np.ndarray:
    """Fixed-step RK4; returns an array of shape ``(len(t_grid), 5)``."""
    _require_gd(params)
    m = initial.as_array() if isinstance(initial, MeanFieldState) else np.array(initial, dtype=float)
    if np.linalg.norm(m[:3]) > 1 + 1e-12:
        raise ValueError("spin vector longer than one")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or t_grid[0] < 0 or np.any(np.diff(t_grid) < 0):
        raise ValueError("time grid must be non-empty, non-negative and non-decreasing")
    args = (params.omega, params.delta_boson, params.lam, params.kappa)
    out = np.empty((t_grid.size, 5))
    t = 0.0
    for i, t_next in enumerate(t_grid):
        span = t_next - t
        n_sub = int(np.ceil(span / dt - 1e-9)) if span > 0 else 0
        h = span / n_sub if n_sub else 0.0
        for _ in range(n_sub):
            k1 = _rhs(m, *args)
            k2 = _rhs(m + 0.5 * h * k1, *args)
            k3 = _rhs(m + 0.5 * h * k2, *args)
            k4 = _rhs(m + h * k3, *args)
            m = m + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(m)):
            raise MeanFieldError(f"non-finite mean-field state at t={t_next:.4g}")
        out[i] = m
        t = t_next
    return out


def tc_stationary_qfi_rates(params: ModelParams, n_spins: int) -> dict[str, float]:
    """Long-time QFI growth rates of the TC model in its stationary phase.

    ``rate_omega = kappa S / lambda^2`` and
    ``rate_lambda = kappa Omega^2 S / lambda^4`` with ``S = N/2``.
    """
    if n_spins <= 0:
        raise ValueError("need at least one spin")
    if params.lam == 0:
        raise ValueError("rates diverge at zero coupling")
    s = n_spins / 2
    return {
        "rate_omega": params.kappa * s / params.lam**2,
        "rate_lambda": params.kappa * params.omega**2 * s / params.lam**4,
    }


BRANCH_COLUMNS = ["lambda", "branch", "m_x", "m_y", "m_z", "m_q", "m_p", "stability"]


def branch_table(params: ModelParams, couplings) -> list[list]:
    """Rows of ``BRANCH_COLUMNS`` for a sweep over the coupling."""
    from dataclasses import replace

    rows = []
    for lam in couplings:
        for br in stationary_branches(replace(params, lam=float(lam))):
            rows.append([float(lam), br.label, *br.state.as_array().tolist(), br.stability])
    return rows


def write_branch_table(path, rows: list[list], header_lines: list[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(BRANCH_COLUMNS)
        for row in rows:
            lam, label, *values, stability = row
            writer.writerow([f"{lam:.17g}", label, *(f"{v:.17g}" for v in values), stability])
