"""Quantum trajectories with a co-propagated Fisher derivative vector.

Along every trajectory we carry the normalized conditional state ``psi``
and the unnormalized derivative vector ``phi = d(psi_tilde)/d(eta) /
||psi_tilde||``, which obeys

    phi' = (dK psi + K phi) / ||K psi||

for the Kraus operator ``K`` selected by the measurement outcome.  Both the
single-trajectory API and the ensemble API use the same batched kernels,
with one column per trajectory.

The unconditional (Lindblad) dynamics is integrated with fixed-step RK4 on
the vectorized density matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

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
    effective_hamiltonian,
    frechet_expm,
    homodyne_drift_operator,
    kraus_counting_with_derivative,
)

log = logging.getLogger(__name__)

MAX_CLICK_PROBABILITY = 0.1
LEAKAGE_TOLERANCE = 1e-6
DEFAULT_DT = 1e-3


class DiscretizationError(RuntimeError):
    """The time step is too coarse for the jump discretization."""


class FockLeakageError(RuntimeError):
    """Population reached the top of the truncated Fock space."""


class IntegrationError(RuntimeError):
    """The master-equation integrator lost trace preservation."""


class TrajectoryError(RuntimeError):
    """A trajectory in an ensemble failed; ``index`` names it."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"trajectory {index} failed: {cause}")
        self.index = index
        self.cause = cause


class Unravelling(str, Enum):
    COUNTING = "counting"
    HOMODYNE = "homodyne"


@dataclass
class TrajectoryState:
    """Conditional state of one trajectory.

    ``A + iB = <psi|phi>``; ``log_likelihood`` is the accumulated
    ``log <psi_tilde|psi_tilde>`` (sum of log squared step norms).
    """

    psi: np.ndarray
    phi: np.ndarray
    A: float = 0.0
    B: float = 0.0
    log_likelihood: float = 0.0
    t: float = 0.0

    @classmethod
    def initial(cls, psi0: np.ndarray) -> "TrajectoryState":
        psi0 = np.asarray(psi0, dtype=complex)
        if abs(np.linalg.norm(psi0) - 1) > 1e-10:
            raise ValueError("initial state must be normalized")
        return cls(psi=psi0.copy(), phi=np.zeros_like(psi0))


@dataclass
class CountingRecord:
    dt: float
    bits: np.ndarray

    @property
    def jump_times(self) -> np.ndarray:
        return (np.flatnonzero(self.bits) + 1) * self.dt


@dataclass
class HomodyneRecord:
    dt: float
    currents: np.ndarray


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, seeding and time grid.

    Trajectory ``k`` draws from its own Philox stream keyed by
    ``(master_seed, k)``, so results do not depend on how trajectories are
    batched or scheduled.
    """

    n_traj: int
    master_seed: int
    dt: float = DEFAULT_DT
    t_final: float = 10.0
    sample_stride: int = 100

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be a positive integer")
        if not self.dt > 0 or not self.t_final >= 0:
            raise ValueError("need dt > 0 and t_final >= 0")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def sample_steps(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps + 1, self.sample_stride)
        if steps[-1] != self.n_steps:
            steps = np.append(steps, self.n_steps)
        return steps


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for trajectory ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(index,))))


class HomodyneDrift(str, Enum):
    """Current-independent part of the homodyne Kraus operator.

    ``FIRST_ORDER`` is ``1 - i H dt - L^dag L dt / 2``.  ``EXPONENTIAL``
    replaces it by ``exp(-i H_eff dt)``, which agrees to first order in
    ``dt`` but drops the ``O(dt^2)`` per-step error of the linear drift.
    """

    FIRST_ORDER = "first_order"
    EXPONENTIAL = "exponential"


class ModelContext:
    """Operators for one ``(space, params, target, dt, unravelling)``.

    Built once and shared read-only by every trajectory.
    """

    def __init__(
        self,
        space: CompositeSpace,
        params: ModelParams,
        target: Target,
        dt: float,
        unravelling: Unravelling | str,
        homodyne_drift: HomodyneDrift | str = "first_order",
    ):
        self.space = space
        self.params = params
        self.target = Target(target)
        self.dt = float(dt)
        self.unravelling = Unravelling(unravelling)
        self.H = build_hamiltonian(space, params)
        self.L = build_jump_operator(space, params)
        self.dH = build_dH(space, params, self.target)
        self.root_dt = np.sqrt(self.dt)
        if self.unravelling is Unravelling.COUNTING:
            self.K0, self.dK0, self.K1 = kraus_counting_with_derivative(space, params, self.target, dt)
            self._powers: dict[int, tuple[np.ndarray, np.ndarray]] = {1: (self.K0, self.dK0)}
        else:
            self.homodyne_drift = HomodyneDrift(homodyne_drift)
            if self.homodyne_drift is HomodyneDrift.FIRST_ORDER:
                self.drift = homodyne_drift_operator(space, params, dt)
                self.dK_J = (-1j * dt * self.dH).tocsr()
            else:
                self.drift, self.dK_J, _ = kraus_counting_with_derivative(space, params, self.target, dt)
            self.lo_phase = np.exp(1j * params.phi_lo)
        self.check_leakage = params.model is not Model.BTC and space.fock_cutoff >= 2
        if self.check_leakage:
            _, n = space.labels()
            self._top_levels = np.flatnonzero(n >= space.fock_cutoff - 1)

    def leakage(self, psi: np.ndarray) -> np.ndarray:
        """Population of the two highest Fock levels, per column."""
        if not self.check_leakage:
            return np.zeros(psi.shape[1] if psi.ndim == 2 else 1)
        return np.sum(np.abs(psi[self._top_levels]) ** 2, axis=0)

    def no_click_power(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """``K0**m`` and its parameter derivative, cached per ``m``.

        ``K0**m = exp(-i H_eff m dt)`` exactly, so both come from one block
        exponential at step ``m * dt``.
        """
        if m not in self._powers:
            A = -1j * m * self.dt * effective_hamiltonian(self.space, self.params).toarray()
            E = -1j * m * self.dt * self.dH.toarray()
            self._powers[m] = frechet_expm(A, E)
        return self._powers[m]


def _column_norm2(Y: np.ndarray) -> np.ndarray:
    """Squared norm of every column, computed on a real view (no temporaries)."""
    if Y.shape[-1] > 0 and Y.strides[-1] != Y.itemsize:
        Y = np.ascontiguousarray(Y)
    V = Y.view(float)
    sq = np.einsum("ij,ij->j", V, V)
    return sq[0::2] + sq[1::2]


def _column_overlap(P: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``<P_j|F_j>`` for every column ``j``."""
    return np.einsum("ij,ij->j", P.conj(), F)


def _check_click_probability(p1: np.ndarray) -> None:
    if p1.size and p1.max() > MAX_CLICK_PROBABILITY:
        raise DiscretizationError(
            f"click probability {p1.max():.3g} per step exceeds {MAX_CLICK_PROBABILITY}; reduce dt"
        )


def _counting_kernel(ctx: ModelContext, X: np.ndarray, u: np.ndarray):
    """One Bernoulli counting step on ``X = [psi | phi]`` (unnormalized output)."""
    n = X.shape[1] // 2
    psi = X[:, :n]
    Lpsi = ctx.L @ psi
    p1 = ctx.dt * _column_norm2(Lpsi)
    _check_click_probability(p1)
    clicks = u < p1
    Y = ctx.K0 @ X
    Y[:, n:] += ctx.dK0 @ psi
    if clicks.any():
        idx = np.flatnonzero(clicks)
        Y[:, idx] = ctx.root_dt * Lpsi[:, idx]
        Y[:, n + idx] = ctx.root_dt * (ctx.L @ X[:, n + idx])
    return Y, clicks.astype(np.int8)


def _homodyne_kernel(ctx: ModelContext, X: np.ndarray, xi: np.ndarray):
    """One homodyne step on ``X = [psi | phi]``; ``xi`` are standard normals."""
    n = X.shape[1] // 2
    psi = X[:, :n]
    LX = ctx.L @ X
    mean = 2.0 * np.real(ctx.lo_phase * _column_overlap(psi, LX[:, :n]))
    J = mean + xi / ctx.root_dt
    coef = (ctx.lo_phase * ctx.dt) * J
    Y = ctx.drift @ X
    LX[:, :n] *= coef
    LX[:, n:] *= coef
    Y += LX
    Y[:, n:] += ctx.dK_J @ psi
    return Y, J


def _normalize(Y: np.ndarray, norm2: np.ndarray | None = None) -> np.ndarray:
    """Divide ``[psi | phi]`` in place by the norm of ``psi``; return ``log norm**2``."""
    n = Y.shape[1] // 2
    if norm2 is None:
        norm2 = _column_norm2(Y[:, :n])
    if np.any(norm2 <= 0) or not np.all(np.isfinite(norm2)):
        raise FloatingPointError("conditional state collapsed to zero norm")
    inv = 1.0 / np.sqrt(norm2)
    Y[:, :n] *= inv
    Y[:, n:] *= inv
    return np.log(norm2)


def _advance(ctx: ModelContext, state: TrajectoryState, variate: float):
    X = np.stack([state.psi, state.phi], axis=1)
    if ctx.unravelling is Unravelling.COUNTING:
        Y, outcome = _counting_kernel(ctx, X, np.array([variate]))
    else:
        Y, outcome = _homodyne_kernel(ctx, X, np.array([variate]))
    logn = _normalize(Y)
    overlap = np.vdot(Y[:, 0], Y[:, 1])
    new_state = TrajectoryState(
        psi=Y[:, 0].copy(),
        phi=Y[:, 1].copy(),
        A=float(overlap.real),
        B=float(overlap.imag),
        log_likelihood=state.log_likelihood + float(logn[0]),
        t=state.t + ctx.dt,
    )
    return new_state, outcome[0]


def step_counting(state: TrajectoryState, ctx: ModelContext, rng: np.random.Generator):
    """One photon-counting step.  Returns ``(new_state, bit)``.

    Click probability ``dt <psi|L^dag L|psi>`` (Bernoulli draw); the click
    branch applies ``K1``, otherwise ``K0``.
    """
    if ctx.unravelling is not Unravelling.COUNTING:
        raise ValueError("context was built for homodyne detection")
    new_state, bit = _advance(ctx, state, rng.random())
    return new_state, int(bit)


def step_homodyne(state: TrajectoryState, ctx: ModelContext, rng: np.random.Generator):
    """One homodyne step.  Returns ``(new_state, J)``.

    ``J`` is Gaussian with mean ``<L e^{i phi_lo} + L^dag e^{-i phi_lo}>``
    and variance ``1/dt``.
    """
    if ctx.unravelling is not Unravelling.HOMODYNE:
        raise ValueError("context was built for photon counting")
    new_state, J = _advance(ctx, state, rng.standard_normal())
    return new_state, float(J)


class Sampler(str, Enum):
    """How clicks are drawn in counting ensembles.

    ``BERNOULLI`` draws one uniform per step with ``p1 = dt <L^dag L>``.
    ``WAITING`` draws one uniform per inter-click interval and clicks at the
    first step where the no-click norm ``||K0^k psi||^2`` falls below it; runs
    of no-click steps are then applied as a single precomputed ``K0^m``.
    Clicks still land on step boundaries.
    """

    BERNOULLI = "bernoulli"
    WAITING = "waiting"


@dataclass
class EnsembleResult:
    """Raw per-trajectory series sampled on ``t``.

    Arrays ``A``, ``B``, ``phi_norm_sq``, ``log_likelihood`` and
    ``integrated_output`` have shape ``(n_samples, n_traj)``.  The
    integrated output is the cumulative click count (counting) or the
    time-integrated current ``sum J dt`` (homodyne).  ``records`` holds the
    full measurement records when requested.
    """

    t: np.ndarray
    unravelling: Unravelling
    dt: float
    A: np.ndarray
    B: np.ndarray
    phi_norm_sq: np.ndarray
    log_likelihood: np.ndarray
    integrated_output: np.ndarray
    max_abs_B: np.ndarray
    max_leakage: np.ndarray
    indices: np.ndarray
    records: np.ndarray | None = None
    final_psi: np.ndarray | None = None
    final_phi: np.ndarray | None = None

    @property
    def n_traj(self) -> int:
        return self.A.shape[1]

    def record(self, k: int):
        """Measurement record of the ``k``-th trajectory in this result."""
        if self.records is None:
            raise ValueError("records were not kept; rerun with keep_records=True")
        if self.unravelling is Unravelling.COUNTING:
            return CountingRecord(self.dt, self.records[k].copy())
        return HomodyneRecord(self.dt, self.records[k].copy())

    @staticmethod
    def concatenate(parts: list["EnsembleResult"]) -> "EnsembleResult":
        first = parts[0]

        def cat(name, axis=1):
            values = [getattr(p, name) for p in parts]
            if values[0] is None:
                return None
            return np.concatenate(values, axis=axis)

        return EnsembleResult(
            t=first.t,
            unravelling=first.unravelling,
            dt=first.dt,
            A=cat("A"),
            B=cat("B"),
            phi_norm_sq=cat("phi_norm_sq"),
            log_likelihood=cat("log_likelihood"),
            integrated_output=cat("integrated_output"),
            max_abs_B=cat("max_abs_B", 0),
            max_leakage=cat("max_leakage", 0),
            indices=cat("indices", 0),
            records=cat("records", 0),
            final_psi=cat("final_psi"),
            final_phi=cat("final_phi"),
        )


class _Batch:
    """Mutable state of a batch of trajectories advanced together."""

    def __init__(self, ctx: ModelContext, psi0: np.ndarray, config: EnsembleConfig, indices, keep_records):
        n = len(indices)
        self.ctx = ctx
        self.n = n
        self.n_steps = config.n_steps
        self.indices = np.asarray(indices)
        self.X = np.zeros((ctx.space.dim, 2 * n), dtype=complex)
        self.X[:, :n] = np.asarray(psi0, dtype=complex)[:, None]
        self.loglik = np.zeros(n)
        self.integrated = np.zeros(n)
        self.max_abs_B = np.zeros(n)
        self.rngs = [trajectory_rng(config.master_seed, int(k)) for k in indices]
        self.variates = None
        self.records = None
        if keep_records:
            dtype = np.int8 if ctx.unravelling is Unravelling.COUNTING else float
            self.records = np.zeros((n, config.n_steps), dtype=dtype)

    def track_B(self, cols=None) -> None:
        X, n = self.X, self.n
        if cols is None:
            B = _column_overlap(X[:, :n], X[:, n:]).imag
            np.maximum(self.max_abs_B, np.abs(B), out=self.max_abs_B)
        else:
            B = _column_overlap(X[:, cols], X[:, n + cols]).imag
            self.max_abs_B[cols] = np.maximum(self.max_abs_B[cols], np.abs(B))


def _run_steps(batch: _Batch, start: int, stop: int, block: int = 512) -> None:
    """Step-by-step propagation (Bernoulli counting or homodyne).

    Steps always run consecutively from zero, and variates are drawn in
    blocks of ``block`` steps at absolute step numbers.  Block draws give
    the same numbers as one draw per step.
    """
    ctx = batch.ctx
    counting = ctx.unravelling is Unravelling.COUNTING
    for step in range(start, stop):
        offset = step % block
        if offset == 0:
            size = min(block, batch.n_steps - step)
            draw = (lambda g: g.random(size)) if counting else (lambda g: g.standard_normal(size))
            batch.variates = np.stack([draw(g) for g in batch.rngs], axis=1)
        u = batch.variates[offset]
        if counting:
            Y, outcome = _counting_kernel(ctx, batch.X, u)
            batch.integrated += outcome
        else:
            Y, outcome = _homodyne_kernel(ctx, batch.X, u)
            batch.integrated += outcome * ctx.dt
        batch.loglik += _normalize(Y)
        batch.X = Y
        if batch.records is not None:
            batch.records[:, step] = outcome
        batch.track_B()


class _WaitingClock:
    """Per-trajectory click thresholds and no-click survival since the last click."""

    def __init__(self, batch: _Batch):
        self.threshold = np.array([g.random() for g in batch.rngs])
        self.survival = np.ones(batch.n)


def _run_waiting(batch: _Batch, clock: _WaitingClock, start: int, stop: int, chunk_steps: int) -> None:
    """Waiting-time counting from ``start`` to ``stop``.

    Each chunk of up to ``chunk_steps`` steps is first tried as one no-click
    block.  Trajectories whose threshold is crossed inside the chunk are
    redone step by step, which puts their clicks on the exact step.
    ``max_abs_B`` is therefore tracked at chunk ends for no-click runs and
    at every step otherwise.
    """
    ctx = batch.ctx
    n = batch.n
    step = start
    while step < stop:
        m = min(chunk_steps, stop - step)
        X = batch.X
        psi = X[:, :n]
        _check_click_probability(ctx.dt * _column_norm2(ctx.L @ psi))
        power, dpower = ctx.no_click_power(m)
        Y = power @ X
        Y[:, n:] += dpower @ psi
        norm2 = _column_norm2(Y[:, :n])
        late = np.flatnonzero(clock.survival * norm2 < clock.threshold)
        cols = np.concatenate([late, n + late])
        redo = X[:, cols] if late.size else None
        logn = _normalize(Y, norm2)
        on_time = np.ones(n, dtype=bool)
        on_time[late] = False
        batch.loglik[on_time] += logn[on_time]
        clock.survival[on_time] *= norm2[on_time]
        batch.X = Y
        if late.size:
            batch.X[:, cols] = _fine_steps(batch, clock, late, redo, step, m)
        batch.track_B()
        step += m


def _fine_steps(batch: _Batch, clock: _WaitingClock, late: np.ndarray, X: np.ndarray, step0: int, m: int):
    """Redo ``m`` steps one at a time for the trajectories ``late``."""
    ctx = batch.ctx
    nb = late.size
    loglik = np.zeros(nb)
    survival = clock.survival[late].copy()
    threshold = clock.threshold[late]
    for s in range(m):
        psi = X[:, :nb]
        Lpsi = ctx.L @ psi
        _check_click_probability(ctx.dt * _column_norm2(Lpsi))
        Y = ctx.K0 @ X
        Y[:, nb:] += ctx.dK0 @ psi
        norm2 = _column_norm2(Y[:, :nb])
        click = survival * norm2 < threshold
        if click.any():
            ci = np.flatnonzero(click)
            Y[:, ci] = ctx.root_dt * Lpsi[:, ci]
            Y[:, nb + ci] = ctx.root_dt * (ctx.L @ X[:, nb + ci])
            norm2[ci] = _column_norm2(Y[:, ci])
            for c in ci:
                threshold[c] = batch.rngs[late[c]].random()
            batch.integrated[late[ci]] += 1
            if batch.records is not None:
                batch.records[late[ci], step0 + s] = 1
        survival = np.where(click, 1.0, survival * norm2)
        loglik += _normalize(Y, norm2)
        X = Y
        B = _column_overlap(X[:, :nb], X[:, nb:]).imag
        batch.max_abs_B[late] = np.maximum(batch.max_abs_B[late], np.abs(B))
    batch.loglik[late] += loglik
    clock.survival[late] = survival
    clock.threshold[late] = threshold
    return X


def _simulate_batch(
    ctx: ModelContext,
    psi0: np.ndarray,
    config: EnsembleConfig,
    indices: np.ndarray,
    keep_records: bool = False,
    keep_final: bool = False,
    sampler: Sampler | str = Sampler.BERNOULLI,
    chunk_steps: int = 20,
) -> EnsembleResult:
    sampler = Sampler(sampler)
    waiting = sampler is Sampler.WAITING
    if waiting and ctx.unravelling is not Unravelling.COUNTING:
        raise ValueError("waiting-time sampling applies to photon counting only")
    batch = _Batch(ctx, psi0, config, indices, keep_records)
    n = batch.n
    sample_steps = config.sample_steps()
    n_samples = len(sample_steps)
    out = {k: np.zeros((n_samples, n)) for k in ("A", "B", "phi_norm_sq", "log_likelihood", "integrated_output")}
    max_leak = ctx.leakage(batch.X[:, :n])
    clock = _WaitingClock(batch) if waiting else None

    for pos in range(1, n_samples):
        start, stop = sample_steps[pos - 1], sample_steps[pos]
        if waiting:
            _run_waiting(batch, clock, start, stop, chunk_steps)
        else:
            _run_steps(batch, start, stop)
        psi, phi = batch.X[:, :n], batch.X[:, n:]
        overlap = _column_overlap(psi, phi)
        out["A"][pos] = overlap.real
        out["B"][pos] = overlap.imag
        out["phi_norm_sq"][pos] = _column_norm2(phi)
        out["log_likelihood"][pos] = batch.loglik
        out["integrated_output"][pos] = batch.integrated
        leak = ctx.leakage(psi)
        np.maximum(max_leak, leak, out=max_leak)
        if leak.max() > LEAKAGE_TOLERANCE:
            bad = int(batch.indices[int(np.argmax(leak))])
            raise TrajectoryError(
                bad,
                FockLeakageError(
                    f"population {leak.max():.2e} in the top two Fock levels at t={stop * ctx.dt:.4g}; "
                    f"increase fock_cutoff (now {ctx.space.fock_cutoff})"
                ),
            )

    return EnsembleResult(
        t=sample_steps * ctx.dt,
        unravelling=ctx.unravelling,
        dt=ctx.dt,
        max_abs_B=batch.max_abs_B,
        max_leakage=max_leak,
        indices=batch.indices,
        records=batch.records,
        final_psi=batch.X[:, :n].copy() if keep_final else None,
        final_phi=batch.X[:, n:].copy() if keep_final else None,
        **out,
    )


def run_trajectory(
    initial: np.ndarray,
    ctx: ModelContext,
    config: EnsembleConfig,
    index: int = 0,
    keep_records: bool = True,
    sampler: Sampler | str = Sampler.BERNOULLI,
) -> EnsembleResult:
    """Single trajectory ``index`` of an ensemble, with ``phi(0) = 0``."""
    _require_normalized(initial)
    return _simulate_batch(
        ctx, initial, config, np.array([index]), keep_records=keep_records, keep_final=True, sampler=sampler
    )


def run_ensemble(
    initial: np.ndarray,
    ctx: ModelContext,
    config: EnsembleConfig,
    chunk_size: int = 2000,
    workers: int = 1,
    keep_records: bool = False,
    keep_final: bool = False,
    sampler: Sampler | str = Sampler.BERNOULLI,
) -> EnsembleResult:
    """All ``config.n_traj`` trajectories, in fixed chunks of ``chunk_size``.

    Chunk boundaries depend only on ``chunk_size``, never on ``workers``,
    and chunks are concatenated in index order, so output is identical for
    every pool size.
    """
    _require_normalized(initial)
    sampler = Sampler(sampler)
    chunks = [np.arange(s, min(s + chunk_size, config.n_traj)) for s in range(0, config.n_traj, chunk_size)]
    args = [(ctx, initial, config, idx, keep_records, keep_final, sampler) for idx in chunks]
    if workers > 1 and len(chunks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, args))
    else:
        parts = [_run_chunk(a) for a in args]
    return EnsembleResult.concatenate(parts)


def _require_normalized(psi: np.ndarray) -> None:
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValueError("initial state must be normalized")


def _run_chunk(args) -> EnsembleResult:
    ctx, initial, config, idx, keep_records, keep_final, sampler = args
    try:
        return _simulate_batch(
            ctx, initial, config, idx, keep_records=keep_records, keep_final=keep_final, sampler=sampler
        )
    except TrajectoryError:
        raise
    except Exception as exc:
        # the batch fails as a whole; report the first trajectory of the chunk
        raise TrajectoryError(int(idx[0]), exc) from exc


def ensemble_density_matrix(result: EnsembleResult) -> np.ndarray:
    """Average of ``|psi><psi|`` over the final states of an ensemble."""
    if result.final_psi is None:
        raise ValueError("final states were not kept; rerun with keep_final=True")
    psi = result.final_psi
    return (psi @ psi.conj().T) / psi.shape[1]


def write_trajectory_csv(path, result: EnsembleResult, k: int = 0) -> None:
    """Dump trajectory ``k`` as CSV: step, t, outcome, A, B, phi_norm_sq.

    One row per sampled step.  ``outcome`` is the click bit or current of
    that step (empty at step 0).
    """
    import csv

    stride_steps = np.rint(result.t / result.dt).astype(int)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "outcome", "A", "B", "phi_norm_sq"])
        for i, step in enumerate(stride_steps):
            outcome = ""
            if result.records is not None and step > 0:
                outcome = repr(result.records[k, step - 1].item())
            writer.writerow(
                [
                    int(step),
                    f"{result.t[i]:.17g}",
                    outcome,
                    f"{result.A[i, k]:.17g}",
                    f"{result.B[i, k]:.17g}",
                    f"{result.phi_norm_sq[i, k]:.17g}",
                ]
            )


# --- unconditional dynamics -------------------------------------------------


def liouvillian(H: sp.spmatrix, L: sp.spmatrix) -> sp.csr_matrix:
    """Superoperator of the master equation on row-major ``vec(rho)``.

    With row-major flattening ``vec(X rho Y) = (X kron Y^T) vec(rho)``.
    """
    return _two_sided_generator(H, H, L)


def _two_sided_generator(H_left, H_right, L) -> sp.csr_matrix:
    d = H_left.shape[0]
    eye = sp.identity(d, dtype=complex, format="csr")
    LdL = (L.conj().T @ L).tocsr()
    gen = (
        -1j * sp.kron(H_left, eye)
        + 1j * sp.kron(eye, H_right.T)
        + sp.kron(L, L.conj())
        - 0.5 * sp.kron(LdL, eye)
        - 0.5 * sp.kron(eye, LdL.T)
    )
    return gen.tocsr()


def rk4_propagate(generator, y0: np.ndarray, t_grid, dt: float = DEFAULT_DT, monitor=None):
    """Fixed-step RK4 for ``dy/dt = G y`` with output on ``t_grid``.

    Each interval between grid points is split into the smallest number of
    equal steps not longer than ``dt``.  ``monitor(t, y)`` is called at every
    grid point.  ``generator`` may be a sparse matrix or a callable.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        raise ValueError("empty time grid")
    if np.any(np.diff(t_grid) < 0) or t_grid[0] < 0:
        raise ValueError("time grid must be non-negative and non-decreasing")
    apply = generator if callable(generator) else generator.dot
    y = np.array(y0, dtype=complex)
    t = 0.0
    out = []
    for t_next in t_grid:
        span = t_next - t
        n_sub = int(np.ceil(span / dt - 1e-9)) if span > 0 else 0
        h = span / n_sub if n_sub else 0.0
        for _ in range(n_sub):
            k1 = apply(y)
            k2 = apply(y + 0.5 * h * k1)
            k3 = apply(y + 0.5 * h * k2)
            k4 = apply(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t_next
        if monitor is not None:
            monitor(t, y)
        out.append(y.copy())
    return out


def integrate_master(
    rho0: np.ndarray,
    space: CompositeSpace,
    params: ModelParams,
    t_grid,
    dt: float = DEFAULT_DT,
) -> np.ndarray:
    """Lindblad evolution of ``rho0``, returned on ``t_grid``.

    Raises :class:`IntegrationError` if the trace drifts by more than 1e-6.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        rho0 = np.outer(rho0, rho0.conj())
    _check_physical(rho0)
    gen = liouvillian(build_hamiltonian(space, params), build_jump_operator(space, params))
    d = space.dim

    def monitor(t, y):
        drift = abs(y.reshape(d, d).trace() - 1)
        if drift > 1e-6:
            raise IntegrationError(f"trace drifted by {drift:.2e} at t={t:.4g}")

    ys = rk4_propagate(gen, rho0.ravel(), t_grid, dt=dt, monitor=monitor)
    return np.array([y.reshape(d, d) for y in ys])


def _check_physical(rho: np.ndarray) -> None:
    if np.max(np.abs(rho - rho.conj().T)) > 1e-9:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > 1e-9:
        raise ValueError("density matrix trace differs from one")
    if np.linalg.eigvalsh(rho).min() < -1e-9:
        raise ValueError("density matrix has a negative eigenvalue")


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    diff = rho - sigma
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
