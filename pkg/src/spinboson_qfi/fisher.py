"""Fisher information of continuously monitored spin-boson systems.

Three routes to the same quantities:

* ``qfi_system_environment`` propagates the two-sided density operator
  together with its first and mixed second parameter derivatives, giving
  the QFI of the joint system-environment state without ever touching the
  environment.
* ``qfi_fd_oracle`` evolves the two-sided operator at four shifted
  parameter pairs and takes a finite-difference mixed derivative of the
  log-trace.  Kept as an independent check only.
* ``trajectory_fisher`` turns sampled trajectories into Monte-Carlo
  estimates of the record Fisher information and the mean conditional QFI;
  ``enumerate_counting_records`` computes the same sums exactly for tiny
  systems.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .hilbert import CompositeSpace
from .models import (
    Model,
    ModelParams,
    Target,
    build_dH,
    build_hamiltonian,
    build_jump_operator,
    kraus_counting_with_derivative,
    kraus_homodyne,
)
from .trajectories import (
    DEFAULT_DT,
    EnsembleResult,
    _two_sided_generator,
    integrate_master,
    liouvillian,
    rk4_propagate,
)

CLASS_TOLERANCE = 1e-8
AMPLITUDE_FLOOR = 1e-12


# --- system-environment QFI ---------------------------------------------------


@dataclass
class TwoSidedState:
    """Two-sided operator and its derivatives at ``eta1 = eta2 = eta``."""

    t: float
    rho: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    tau: np.ndarray

    @property
    def fisher(self) -> float:
        tr_rho = np.trace(self.rho)
        value = 4 * (np.trace(self.tau) / tr_rho - np.trace(self.sigma1) * np.trace(self.sigma2) / tr_rho**2)
        return float(value.real)


def _require_pure(psi0) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.ndim != 1:
        raise ValueError("the system-environment QFI needs a pure initial state vector")
    if abs(np.linalg.norm(psi0) - 1) > 1e-10:
        raise ValueError("initial state must be normalized")
    return psi0


def propagate_two_sided(H, dH, L, psi0, t_grid, dt: float = DEFAULT_DT) -> list[TwoSidedState]:
    """Propagate ``(rho, sigma1, sigma2, tau)`` from operators.

    ``rho`` follows the Lindblad equation; ``sigma1``/``sigma2`` are the
    derivatives with respect to the left/right parameter and ``tau`` the
    mixed derivative.  All start at zero except ``rho = |psi0><psi0|``.
    """
    psi0 = _require_pure(psi0)
    H = sp.csr_matrix(H)
    dH = sp.csr_matrix(dH)
    L = sp.csr_matrix(L)
    d = H.shape[0]
    gen = liouvillian(H, L)
    dH_T = dH.T.tocsr()

    def rhs(y):
        Y = y.reshape(4, d * d)
        out = (gen @ Y.T).T
        R, S1, S2, _ = (m.reshape(d, d) for m in Y)
        out[1] += (-1j * (dH @ R)).ravel()
        out[2] += (1j * (dH_T @ R.T).T).ravel()
        out[3] += (-1j * (dH @ S2) + 1j * (dH_T @ S1.T).T).ravel()
        return out.ravel()

    y0 = np.zeros(4 * d * d, dtype=complex)
    y0[: d * d] = np.outer(psi0, psi0.conj()).ravel()
    t_grid = np.asarray(t_grid, dtype=float)
    ys = rk4_propagate(rhs, y0, t_grid, dt=dt)
    states = []
    for t, y in zip(t_grid, ys):
        R, S1, S2, T = (m.reshape(d, d) for m in y.reshape(4, d * d))
        states.append(TwoSidedState(float(t), R, S1, S2, T))
    return states


def qfi_system_environment(
    psi0,
    space: CompositeSpace,
    params: ModelParams,
    target: Target,
    t_grid,
    dt: float = DEFAULT_DT,
) -> np.ndarray:
    """QFI of the joint system-environment state on ``t_grid``."""
    H = build_hamiltonian(space, params)
    dH = build_dH(space, params, target)
    L = build_jump_operator(space, params)
    return np.array([s.fisher for s in propagate_two_sided(H, dH, L, psi0, t_grid, dt=dt)])


def fd_log_trace_fisher(H_of, L, psi0, t_grid, h: float, dt: float = DEFAULT_DT) -> np.ndarray:
    """Finite-difference mixed derivative of ``log tr rho_{eta1 eta2}``.

    ``H_of(shift)`` returns the Hamiltonian at ``eta + shift``.
    """
    if not h > 0:
        raise ValueError("parameter step h must be positive")
    psi0 = _require_pure(psi0)
    d = len(psi0)
    rho0 = np.outer(psi0, psi0.conj()).ravel()
    t_grid = np.asarray(t_grid, dtype=float)
    H_plus, H_minus = sp.csr_matrix(H_of(h)), sp.csr_matrix(H_of(-h))
    if (H_plus - H_minus).count_nonzero() == 0:
        return np.zeros(len(t_grid))
    traces = {}
    for s1, H1 in (("+", H_plus), ("-", H_minus)):
        for s2, H2 in (("+", H_plus), ("-", H_minus)):
            gen = _two_sided_generator(H1, H2, L)
            ys = rk4_propagate(gen, rho0, t_grid, dt=dt)
            traces[s1 + s2] = np.array([y.reshape(d, d).trace() for y in ys])
    out = np.zeros(len(t_grid))
    for i, t in enumerate(t_grid):
        if t == 0:
            continue
        vals = [traces[k][i] for k in ("++", "+-", "-+", "--")]
        spread = max(abs(v - vals[0]) for v in vals)
        if spread < 1e-12:
            raise FloatingPointError(
                f"two-sided traces agree to {spread:.1e} at t={t:.4g}; h={h} is too small for a finite difference"
            )
        logs = np.log(np.array(vals, dtype=complex))
        # 4 * (mixed second difference) / (2h)^2
        out[i] = float(np.real(logs[0] - logs[1] - logs[2] + logs[3])) / h**2
    return out


def qfi_fd_oracle(
    psi0,
    space: CompositeSpace,
    params: ModelParams,
    target: Target,
    t_grid,
    h: float = 1e-3,
    dt: float = DEFAULT_DT,
) -> np.ndarray:
    """Finite-difference oracle for :func:`qfi_system_environment`."""
    eta = params.value_of(target)
    L = build_jump_operator(space, params)

    def H_of(shift):
        return build_hamiltonian(space, params.with_param(target, eta + shift))

    return fd_log_trace_fisher(H_of, L, psi0, t_grid, h, dt=dt)


# --- trajectory Fisher information --------------------------------------------


@dataclass
class FisherSeries:
    """Fisher information series on a time grid.

    ``F_total = I_E + F_S`` is the trajectory Fisher information; ``F_SE``
    is the system-environment QFI when supplied.  ``stderr_*`` are
    Monte-Carlo standard errors.
    """

    t: np.ndarray
    F_total: np.ndarray
    I_E: np.ndarray
    F_S: np.ndarray
    stderr_total: np.ndarray
    stderr_I_E: np.ndarray
    stderr_F_S: np.ndarray
    n_traj: int
    F_SE: np.ndarray | None = None

    CSV_COLUMNS = ("t", "F_SE", "F_total", "I_E", "F_S", "stderr_total")

    def to_csv(self, path, header_lines: tuple[str, ...] = ()) -> None:
        """Write columns ``t, F_SE, F_total, I_E, F_S, stderr_total``.

        Floats use 17 significant digits; ``F_SE`` is empty if unknown.
        Each header line is written as a ``#`` comment before the column row.
        """
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(self.CSV_COLUMNS)
            for i in range(len(self.t)):
                f_se = "" if self.F_SE is None else f"{self.F_SE[i]:.17g}"
                writer.writerow(
                    [
                        f"{self.t[i]:.17g}",
                        f_se,
                        f"{self.F_total[i]:.17g}",
                        f"{self.I_E[i]:.17g}",
                        f"{self.F_S[i]:.17g}",
                        f"{self.stderr_total[i]:.17g}",
                    ]
                )


def _mean_and_stderr(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = samples.shape[1]
    mean = samples.mean(axis=1)
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    return mean, samples.std(axis=1, ddof=1) / np.sqrt(n)


def trajectory_fisher(result: EnsembleResult, F_SE: np.ndarray | None = None) -> FisherSeries:
    """Monte-Carlo Fisher information from sampled trajectories.

    Trajectories are drawn with their own probabilities, so the weighted
    sums over records become plain means:
    ``I_E = 4 <A^2>``, ``F_S = 4 <|phi|^2 - A^2 - B^2>`` and
    ``F_total = 4 <|phi|^2 - B^2>``.
    """
    if result.n_traj == 0:
        raise ValueError("empty ensemble")
    A2 = result.A**2
    B2 = result.B**2
    I_E, se_I = _mean_and_stderr(4 * A2)
    F_S, se_S = _mean_and_stderr(4 * (result.phi_norm_sq - A2 - B2))
    _, se_T = _mean_and_stderr(4 * (result.phi_norm_sq - B2))
    return FisherSeries(
        t=result.t.copy(),
        F_total=I_E + F_S,
        I_E=I_E,
        F_S=F_S,
        stderr_total=se_T,
        stderr_I_E=se_I,
        stderr_F_S=se_S,
        n_traj=result.n_traj,
        F_SE=None if F_SE is None else np.asarray(F_SE, dtype=float),
    )


@dataclass
class EnumerationResult:
    """Exact sums over all ``2**M`` photon-counting records.

    ``F_counting = I_E + F_S`` is the exact record-plus-conditional Fisher
    information; ``F_kraus_sum = 4 sum ||d psi_tilde||^2`` is the
    Kraus-chain form, equal to ``F_counting`` whenever every ``B`` vanishes.
    ``F_SE_discrete`` is the QFI of the discrete-time joint state.
    """

    M: int
    dt: float
    total_probability: float
    F_counting: float
    I_E: float
    F_S: float
    F_kraus_sum: float
    F_SE_discrete: float
    probabilities: np.ndarray
    A: np.ndarray
    B: np.ndarray
    records: np.ndarray


MAX_ENUMERATION_STEPS = 12


def enumerate_counting_records(
    psi0, space: CompositeSpace, params: ModelParams, target: Target, M: int, dt: float
) -> EnumerationResult:
    """Exact photon-counting Fisher information by brute-force enumeration."""
    if M < 0 or M > MAX_ENUMERATION_STEPS:
        raise ValueError(f"M={M} outside [0, {MAX_ENUMERATION_STEPS}]")
    if space.dim > 64:
        raise ValueError(f"enumeration is limited to tiny spaces (dim {space.dim} > 64)")
    psi0 = _require_pure(psi0)
    K0, dK0, K1 = kraus_counting_with_derivative(space, params, target, dt)
    K1 = K1.toarray()
    psi = psi0[:, None].copy()
    dpsi = np.zeros_like(psi)
    records = np.zeros((1, 0), dtype=np.int8)
    for _ in range(M):
        psi_0 = K0 @ psi
        dpsi_0 = K0 @ dpsi + dK0 @ psi
        psi_1 = K1 @ psi
        dpsi_1 = K1 @ dpsi
        psi = np.concatenate([psi_0, psi_1], axis=1)
        dpsi = np.concatenate([dpsi_0, dpsi_1], axis=1)
        n = records.shape[0]
        records = np.concatenate(
            [
                np.concatenate([records, np.zeros((n, 1), np.int8)], axis=1),
                np.concatenate([records, np.ones((n, 1), np.int8)], axis=1),
            ],
            axis=0,
        )
    prob = np.sum(np.abs(psi) ** 2, axis=0)
    keep = prob > 0
    overlap = np.zeros(psi.shape[1], dtype=complex)
    overlap[keep] = np.einsum("ij,ij->j", psi[:, keep].conj(), dpsi[:, keep]) / prob[keep]
    dnorm2 = np.sum(np.abs(dpsi) ** 2, axis=0)
    phi_sq = np.zeros_like(prob)
    phi_sq[keep] = dnorm2[keep] / prob[keep]
    A, B = overlap.real, overlap.imag
    I_E = 4 * np.sum(prob * A**2)
    F_S = 4 * np.sum(prob * (phi_sq - A**2 - B**2))
    joint_overlap = np.sum(np.einsum("ij,ij->j", psi.conj(), dpsi))
    F_kraus = 4 * np.sum(dnorm2)
    return EnumerationResult(
        M=M,
        dt=dt,
        total_probability=float(np.sum(prob)),
        F_counting=float(I_E + F_S),
        I_E=float(I_E),
        F_S=float(F_S),
        F_kraus_sum=float(F_kraus),
        F_SE_discrete=float(F_kraus - 4 * abs(joint_overlap) ** 2),
        probabilities=prob,
        A=A,
        B=B,
        records=records,
    )


# --- saturation diagnostics -----------------------------------------------------


def check_condition_I(
    psi0, space: CompositeSpace, params: ModelParams, target: Target, t_grid, dt: float = DEFAULT_DT
) -> np.ndarray:
    """``|tr(dH rho(t))|`` along the Lindblad solution."""
    rhos = integrate_master(psi0, space, params, t_grid, dt=dt)
    dH = build_dH(space, params, target)
    return np.array([abs(np.sum(dH.multiply(rho.T))) for rho in rhos])


@dataclass
class ConditionIIReport:
    per_trajectory_max: np.ndarray
    ensemble_max: float
    t: np.ndarray
    B: np.ndarray


def check_condition_II(result: EnsembleResult) -> ConditionIIReport:
    """Largest ``|Im<psi|phi>|`` seen along each trajectory.

    The per-trajectory maxima are taken over every integration step; ``B``
    holds the sampled series for plotting.
    """
    return ConditionIIReport(
        per_trajectory_max=result.max_abs_B.copy(),
        ensemble_max=float(result.max_abs_B.max()),
        t=result.t.copy(),
        B=result.B.copy(),
    )


@dataclass
class ClassReport:
    """Worst relative deviation of adjacent coefficient products from their axis."""

    max_violation_first: float
    max_violation_second: float
    is_member: bool

    @property
    def max_violation(self) -> float:
        return max(self.max_violation_first, self.max_violation_second)


def _axis_violation(c_lo: np.ndarray, c_hi: np.ndarray, axis: str) -> float:
    prod = np.conj(c_lo) * c_hi
    mask = (np.abs(c_lo) > AMPLITUDE_FLOOR) & (np.abs(c_hi) > AMPLITUDE_FLOOR)
    if not mask.any():
        return 0.0
    prod = prod[mask]
    off = np.abs(prod.real) if axis == "imag" else np.abs(prod.imag)
    return float(np.max(off / np.abs(prod)))


def check_saturating_class(state: np.ndarray, space: CompositeSpace, model: Model | str) -> ClassReport:
    """Test membership of the saturating class for ``model``.

    First condition (spin): ``C*_{M,n} C_{M+1,n}`` purely imaginary (all
    models).  Second condition (boson): ``C*_{M,n} C_{M,n+1}`` real for TC,
    imaginary for GD, absent for BTC.
    """
    model = Model(model)
    grid = space.as_grid(state)
    # row j holds M = S - j, so M+1 is row j-1
    first = _axis_violation(grid[1:, :], grid[:-1, :], "imag")
    if model is Model.BTC or space.boson_dim < 2:
        second = 0.0
    else:
        second = _axis_violation(grid[:, :-1], grid[:, 1:], "real" if model is Model.TC else "imag")
    return ClassReport(first, second, first < CLASS_TOLERANCE and second < CLASS_TOLERANCE)


def random_class_member(space: CompositeSpace, model: Model | str, rng: np.random.Generator) -> np.ndarray:
    """Random normalized state of the saturating class, with a random global phase.

    Magnitudes are drawn away from zero so that every adjacent pair is tested.
    """
    model = Model(model)
    j = np.arange(space.spin_dim)[:, None]
    n = np.arange(space.boson_dim)[None, :]
    grade = j + (n if model is Model.GD else 0)
    mags = rng.uniform(0.2, 1.0, size=(space.spin_dim, space.boson_dim))
    signs = rng.choice([-1.0, 1.0], size=mags.shape)
    grid = (1j**grade) * mags * signs
    if model is Model.BTC:
        grid[:, 1:] = 0.0
    psi = grid.ravel()
    psi = psi * np.exp(1j * rng.uniform(0, 2 * np.pi)) / np.linalg.norm(psi)
    return psi


@dataclass
class ClosureReport:
    passed: bool
    worst_violation: float
    negative_min_violation: float
    negative_passed: bool


def class_closure_test(
    space: CompositeSpace,
    params: ModelParams,
    unravelling: str,
    n_random: int,
    rng: np.random.Generator,
    dt: float = 0.05,
    negative_delta: float = 0.3,
) -> ClosureReport:
    """Check that the model's Kraus operators map class members into the class.

    Uses ``params`` as given for the positive check; a copy with boson
    detuning ``negative_delta * kappa`` (and, for homodyne, the phase
    rotated by pi/2) must push members off the class by more than 1e-3.
    The click operator does not depend on the detuning, so the negative
    check uses the no-click / current operators only.
    """
    from dataclasses import replace

    def kraus_ops(p: ModelParams, include_click: bool):
        if unravelling == "counting":
            K0, _, K1 = kraus_counting_with_derivative(space, p, Target.OMEGA, dt)
            return [K0, K1.toarray()] if include_click else [K0]
        J_values = rng.normal(0.0, 1.0 / np.sqrt(dt), size=3)
        return [kraus_homodyne(space, p, J, dt).toarray() for J in J_values]

    worst = 0.0
    negative = np.inf
    detuned = replace(params, delta_boson=negative_delta * (params.kappa if params.model is not Model.BTC else 1.0))
    negatives = [detuned]
    if unravelling == "homodyne":
        negatives.append(replace(params, phi_lo=params.phi_lo + np.pi / 2))
    for _ in range(n_random):
        psi = random_class_member(space, params.model, rng)
        for K in kraus_ops(params, True):
            out = K @ psi
            worst = max(worst, check_saturating_class(out / np.linalg.norm(out), space, params.model).max_violation)
        for bad in negatives:
            if bad.model is Model.BTC and bad is detuned:
                continue
            for K in kraus_ops(bad, False):
                out = K @ psi
                v = check_saturating_class(out / np.linalg.norm(out), space, params.model).max_violation
                negative = min(negative, v)
    passed = worst < CLASS_TOLERANCE
    return ClosureReport(passed, worst, float(negative), bool(negative > 1e-3))


def class_entry_times(result: EnsembleResult, tol: float = 1e-8) -> np.ndarray:
    """First sampled time after which ``|B|`` stays constant (to ``tol``) per trajectory.

    Inside the class ``B`` freezes, so a constant tail of ``B`` marks entry.
    ``nan`` where no constant tail is seen.
    """
    B = result.B
    diffs = np.abs(np.diff(B, axis=0)) > tol
    times = np.full(B.shape[1], np.nan)
    for k in range(B.shape[1]):
        moving = np.flatnonzero(diffs[:, k])
        if moving.size == 0:
            times[k] = result.t[0]
        elif moving[-1] < len(result.t) - 2:
            times[k] = result.t[moving[-1] + 1]
    return times


# --- slopes -----------------------------------------------------------------------


def long_time_slope(t: np.ndarray, values: np.ndarray, fraction: float = 0.25) -> float:
    """Least-squares slope over the final ``fraction`` of the window."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    start = t[-1] - fraction * (t[-1] - t[0])
    mask = t >= start - 1e-12
    if mask.sum() < 2:
        raise ValueError("need at least two points for a slope")
    slope, _ = np.polyfit(t[mask], values[mask], 1)
    return float(slope)
