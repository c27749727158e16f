"""Acceptance gate: one test per criterion, each reporting a one-line verdict.

Run with ``pytest tests/test_acceptance.py``; the terminal summary lists
every criterion as PASS or FAIL with the numbers behind the verdict.
Ensembles are full size, so the whole file takes tens of minutes on one core.
"""

from dataclasses import replace

import numpy as np
import pytest

from spinboson_qfi import (
    CompositeSpace,
    EnsembleConfig,
    Model,
    ModelContext,
    ModelParams,
    Target,
    check_condition_I,
    check_condition_II,
    class_closure_test,
    critical_coupling,
    dicke_number_state,
    enumerate_counting_records,
    gd_meanfield_rhs,
    integrate_master,
    qfi_fd_oracle,
    qfi_system_environment,
    run_ensemble,
    spin_coherent_state,
    stationary_branches,
    tc_stationary_qfi_rates,
    trajectory_fisher,
)
from spinboson_qfi.fisher import long_time_slope
from spinboson_qfi.meanfield import locate_pitchfork
from spinboson_qfi.trajectories import trace_distance

pytestmark = pytest.mark.slow

HALF_PI = np.pi / 2
TC_CRYSTAL = ModelParams(Model.TC, omega=2.0, lam=0.5)
GD_RESONANT = ModelParams(Model.GD, omega=1.0, lam=1.0)
QFI_DT = 5e-3
HOMODYNE_DT = 2e-3


def top_state(space: CompositeSpace) -> np.ndarray:
    return dicke_number_state(space, space.total_spin, 0)


def grid(t_final: float, step: float) -> np.ndarray:
    return np.round(np.arange(0.0, t_final + step / 2, step), 12)


def saturation_summary(fs, report) -> tuple[float, float]:
    """Worst ``|F_total - F_SE| / stderr`` over ``t > 0`` and the largest ``|B|``."""
    mask = fs.t > 0
    z = np.abs(fs.F_total[mask] - fs.F_SE[mask]) / fs.stderr_total[mask]
    return float(z.max()), float(report.ensemble_max)


def gap_in_stderr(fs) -> float:
    return float((fs.F_SE[-1] - fs.F_total[-1]) / fs.stderr_total[-1])


# --- shared expensive inputs ---------------------------------------------------


@pytest.fixture(scope="module")
def tc5():
    space = CompositeSpace(5, 15)
    psi0 = top_state(space)
    t = grid(10.0, 0.5)
    F = qfi_system_environment(psi0, space, TC_CRYSTAL, Target.OMEGA, t, dt=QFI_DT)
    cond_I = check_condition_I(psi0, space, TC_CRYSTAL, Target.OMEGA, t, dt=QFI_DT)
    return space, psi0, t, F, cond_I


@pytest.fixture(scope="module")
def tc5_homodyne():
    space = CompositeSpace(5, 17)
    psi0 = top_state(space)
    t = grid(10.0, 1.0)
    F = qfi_system_environment(psi0, space, TC_CRYSTAL, Target.OMEGA, t, dt=QFI_DT)
    cond_I = check_condition_I(psi0, space, TC_CRYSTAL, Target.OMEGA, t, dt=QFI_DT)
    return space, psi0, t, F, cond_I


@pytest.fixture(scope="module")
def gd5():
    space = CompositeSpace(5, 32)
    psi0 = top_state(space)
    t = grid(10.0, 1.0)
    F = qfi_system_environment(psi0, space, GD_RESONANT, Target.LAMBDA, t, dt=QFI_DT)
    cond_I = check_condition_I(psi0, space, GD_RESONANT, Target.LAMBDA, t, dt=QFI_DT)
    return space, psi0, t, F, cond_I


# --- criteria ---------------------------------------------------------------------


@pytest.mark.acceptance(label="criterion 1")
def test_stationary_qfi_rate(record_property):
    params = ModelParams(Model.TC, omega=0.1, lam=0.5)
    space = CompositeSpace(5, 8)
    t = grid(100.0, 1.0)
    F = qfi_system_environment(top_state(space), space, params, Target.OMEGA, t, dt=QFI_DT)
    slope = long_time_slope(t, F)
    expected = tc_stationary_qfi_rates(params, 5)["rate_omega"]
    rel = abs(slope / expected - 1)
    record_property("detail", f"slope {slope:.5g} vs kappa S / lambda^2 = {expected:.5g}, rel err {rel:.2e} (< 5e-2)")
    assert expected == pytest.approx(10.0)
    assert rel < 0.05


@pytest.mark.acceptance(label="criterion 2")
def test_counting_saturates_tc_crystal(tc5, record_property):
    space, psi0, t, F, cond_I = tc5
    dt = 1e-3
    cfg = EnsembleConfig(10_000, 2002, dt=dt, t_final=10.0, sample_stride=500)
    ctx = ModelContext(space, TC_CRYSTAL, Target.OMEGA, dt, "counting")
    result = run_ensemble(psi0, ctx, cfg, sampler="waiting")
    fs = trajectory_fisher(result, F)
    z, max_B = saturation_summary(fs, check_condition_II(result))
    record_property(
        "detail",
        f"n_traj {fs.n_traj}, max |F_total - F_SE| / stderr {z:.2f} (<= 3), "
        f"max |B| {max_B:.1e} (< 1e-6), max |tr(Sx rho)| {cond_I.max():.1e} (< 1e-6)",
    )
    assert z <= 3
    assert max_B < 1e-6
    assert cond_I.max() < 1e-6


@pytest.mark.acceptance(label="criterion 3")
def test_enumerated_counting_fisher_converges(record_property):
    space = CompositeSpace(1, 2)
    psi0 = top_state(space)
    params = TC_CRYSTAL
    lines = []
    ok = True
    for target in Target:
        F = qfi_system_environment(psi0, space, params, target, [0.4], dt=1e-4)[0]
        coarse = enumerate_counting_records(psi0, space, params, target, 4, 0.1)
        fine = enumerate_counting_records(psi0, space, params, target, 8, 0.05)
        err_c, err_f = coarse.F_counting - F, fine.F_counting - F
        halving = err_c / err_f
        richardson = 2 * fine.F_counting - coarse.F_counting - F
        dev_c, dev_f = 1 - coarse.total_probability, 1 - fine.total_probability
        prob_ratio = dev_c / dev_f
        bound = fine.M * fine.dt**2
        max_B = max(np.abs(fine.B).max(), np.abs(coarse.B).max())
        ok &= 1.6 <= halving <= 2.4
        ok &= abs(richardson) < 0.5 * abs(err_f)
        ok &= abs(dev_f) <= bound and 1.6 <= prob_ratio <= 2.4
        ok &= max_B < 1e-12
        lines.append(
            f"{target.value}: F_SE {F:.6f}, err {err_f:.2e}, halving ratio {halving:.2f}, "
            f"extrapolated err {richardson:.1e}, |1-P| {abs(dev_f):.2e} (<= M dt^2 = {bound:.2e}), "
            f"ratio {prob_ratio:.2f}"
        )
    record_property("detail", "; ".join(lines))
    assert ok


@pytest.mark.acceptance(label="criterion 4")
def test_homodyne_phase_selects_saturation(tc5_homodyne, gd5, record_property):
    parts = []
    verdicts = []

    def run(space, psi0, t, F, params, target, phi_lo, n_traj, seed):
        p = replace(params, phi_lo=phi_lo)
        ctx = ModelContext(space, p, target, HOMODYNE_DT, "homodyne", homodyne_drift="exponential")
        cfg = EnsembleConfig(n_traj, seed, dt=HOMODYNE_DT, t_final=10.0, sample_stride=int(round(1.0 / HOMODYNE_DT)))
        result = run_ensemble(psi0, ctx, cfg)
        return trajectory_fisher(result, F), check_condition_II(result)

    for label, data, params, target, good, bad in (
        ("TC", tc5_homodyne, TC_CRYSTAL, Target.OMEGA, 0.0, HALF_PI),
        ("GD", gd5, GD_RESONANT, Target.LAMBDA, HALF_PI, 0.0),
    ):
        space, psi0, t, F, cond_I = data
        fs, rep = run(space, psi0, t, F, params, target, good, 10_000, 4004)
        z, max_B = saturation_summary(fs, rep)
        verdicts += [z <= 3, max_B < 1e-6, cond_I.max() < 1e-6]
        parts.append(
            f"{label} Phi={good:.3g}: max z {z:.2f} (<= 3), max |B| {max_B:.1e}, "
            f"max |tr(dH rho)| {cond_I.max():.1e}"
        )
        fs_bad, rep_bad = run(space, psi0, t, F, params, target, bad, 2000, 4005)
        gap = gap_in_stderr(fs_bad)
        verdicts += [rep_bad.ensemble_max > 1e-2, gap > 5]
        parts.append(f"{label} Phi={bad:.3g}: max |B| {rep_bad.ensemble_max:.2g} (> 1e-2), gap {gap:.1f} stderr (> 5)")
    record_property("detail", "; ".join(parts))
    assert all(verdicts)


@pytest.mark.acceptance(label="criterion 5")
def test_counting_gd_detuning_breaks_saturation(gd5, record_property):
    space, psi0, t, F, cond_I = gd5
    dt = 1e-3
    cfg = EnsembleConfig(10_000, 5005, dt=dt, t_final=10.0, sample_stride=1000)
    ctx = ModelContext(space, GD_RESONANT, Target.LAMBDA, dt, "counting")
    result = run_ensemble(psi0, ctx, cfg, sampler="waiting")
    fs = trajectory_fisher(result, F)
    z, max_B = saturation_summary(fs, check_condition_II(result))

    detuned = replace(GD_RESONANT, delta_boson=1.0)
    F_det = qfi_system_environment(psi0, space, detuned, Target.LAMBDA, t, dt=QFI_DT)
    cfg_det = replace(cfg, n_traj=2000, master_seed=5006)
    ctx_det = ModelContext(space, detuned, Target.LAMBDA, dt, "counting")
    result_det = run_ensemble(psi0, ctx_det, cfg_det, sampler="waiting")
    fs_det = trajectory_fisher(result_det, F_det)
    gap = gap_in_stderr(fs_det)
    typical_B = float(np.median(check_condition_II(result_det).per_trajectory_max))
    record_property(
        "detail",
        f"delta=0: max z {z:.2f} (<= 3), max |B| {max_B:.1e}; "
        f"delta=1: gap {gap:.1f} stderr (> 5), median per-trajectory max |B| {typical_B:.2f} (> 0.1)",
    )
    assert z <= 3 and max_B < 1e-6
    assert gap > 5
    assert typical_B > 0.1


@pytest.mark.acceptance(label="criterion 6")
def test_off_class_start_keeps_the_rate(record_property):
    params = ModelParams(Model.TC, omega=0.1, lam=0.5)
    space = CompositeSpace(5, 8)
    psi0 = spin_coherent_state(space, HALF_PI, 0.0)
    dt = 1e-3
    cfg = EnsembleConfig(20_000, 6006, dt=dt, t_final=100.0, sample_stride=2500)
    F = qfi_system_environment(psi0, space, params, Target.OMEGA, cfg.sample_steps() * dt, dt=QFI_DT)
    ctx = ModelContext(space, params, Target.OMEGA, dt, "counting")
    fs = trajectory_fisher(run_ensemble(psi0, ctx, cfg, sampler="waiting"), F)
    slope_SE = long_time_slope(fs.t, F, fraction=0.5)
    slope_T = long_time_slope(fs.t, fs.F_total, fraction=0.5)
    gap_slope = long_time_slope(fs.t, F - fs.F_total, fraction=0.5)
    rel = abs(slope_T / slope_SE - 1)
    gap = gap_in_stderr(fs)
    record_property(
        "detail",
        f"slopes F_SE {slope_SE:.4g}, F_total {slope_T:.4g}, rel diff {rel:.2e} (< 5e-2); "
        f"gap slope {gap_slope:.3g}, final gap {F[-1] - fs.F_total[-1]:.3g} ({gap:.1f} stderr)",
    )
    assert rel < 0.05
    assert gap > 3


@pytest.mark.acceptance(label="criterion 7")
def test_unravellings_reproduce_lindblad(record_property):
    sizes = (500, 2000, 8000)
    t_final = 5.0
    parts = []
    verdicts = []
    cases = (
        ("TC", CompositeSpace(3, 12), TC_CRYSTAL, 0.0),
        ("GD", CompositeSpace(3, 26), GD_RESONANT, HALF_PI),
    )
    for label, space, params, phi_lo in cases:
        psi0 = top_state(space)
        rho = integrate_master(psi0, space, params, [t_final], dt=QFI_DT)[0]
        for unravelling, dt in (("counting", 1e-3), ("homodyne", HOMODYNE_DT)):
            p = replace(params, phi_lo=phi_lo)
            kwargs = {"homodyne_drift": "exponential"} if unravelling == "homodyne" else {}
            ctx = ModelContext(space, p, Target.OMEGA, dt, unravelling, **kwargs)
            cfg = EnsembleConfig(sizes[-1], 7007, dt=dt, t_final=t_final, sample_stride=int(round(t_final / dt)))
            sampler = "waiting" if unravelling == "counting" else "bernoulli"
            psi = run_ensemble(psi0, ctx, cfg, keep_final=True, sampler=sampler).final_psi
            D = np.array([trace_distance(psi[:, :n] @ psi[:, :n].conj().T / n, rho) for n in sizes])
            slope = np.polyfit(np.log(sizes), np.log(D), 1)[0]
            verdicts += [D[1] < 0.05, bool(np.all(np.diff(D) < 0)), -0.75 <= slope <= -0.25]
            parts.append(f"{label} {unravelling}: D = {', '.join(f'{d:.3f}' for d in D)}, log-log slope {slope:.2f}")
    record_property("detail", "; ".join(parts) + " (D(2000) < 0.05, decreasing, slope in [-0.75, -0.25])")
    assert all(verdicts)


@pytest.mark.acceptance(label="criterion 8")
def test_meanfield_branches_and_pitchfork(record_property):
    parts = []
    verdicts = []
    for delta, kappa, omega in ((1.0, 1.0, 1.0), (0.5, 1.0, 1.0), (1.0, 1.0, 0.4)):
        params = ModelParams(Model.GD, omega=omega, delta_boson=delta, kappa=kappa, lam=1.0)
        lam_c = critical_coupling(params)
        residual = 0.0
        for factor in (0.5, 1.2, 2.0, 4.0):
            for br in stationary_branches(replace(params, lam=factor * lam_c)):
                residual = max(residual, float(np.max(np.abs(gd_meanfield_rhs(br.state, replace(params, lam=factor * lam_c))))))
        bisected = locate_pitchfork(params)
        verdicts += [residual < 1e-12, abs(bisected - lam_c) < 1e-6]
        parts.append(f"({delta}, {kappa}, {omega}): lambda_c {lam_c:.8f}, bisected {bisected:.8f}, max rhs {residual:.1e}")
    record_property("detail", "; ".join(parts))
    assert all(verdicts)


@pytest.mark.acceptance(label="criterion 9")
def test_saturating_class_is_closed(record_property):
    rng = np.random.default_rng(9009)
    space = CompositeSpace(5, 6)
    parts = []
    verdicts = []
    for label, params, unravelling in (
        ("TC counting", TC_CRYSTAL, "counting"),
        ("TC homodyne Phi=0", TC_CRYSTAL, "homodyne"),
        ("GD counting", GD_RESONANT, "counting"),
        ("GD homodyne Phi=pi/2", replace(GD_RESONANT, phi_lo=HALF_PI), "homodyne"),
    ):
        rep = class_closure_test(space, params, unravelling, 100, rng)
        verdicts += [rep.passed, rep.worst_violation < 1e-8, rep.negative_passed]
        parts.append(f"{label}: worst {rep.worst_violation:.1e} (< 1e-8), perturbed min {rep.negative_min_violation:.1e} (> 1e-3)")
    record_property("detail", "; ".join(parts))
    assert all(verdicts)


@pytest.mark.acceptance(label="criterion 10")
def test_derivative_propagation_matches_finite_differences(record_property):
    t = grid(5.0, 0.5)
    parts = []
    worst = 0.0
    for label, space, params in (("TC", CompositeSpace(3, 12), TC_CRYSTAL), ("GD", CompositeSpace(3, 20), GD_RESONANT)):
        psi0 = top_state(space)
        for target in Target:
            exact = qfi_system_environment(psi0, space, params, target, t, dt=QFI_DT)
            fd = qfi_fd_oracle(psi0, space, params, target, t, dt=QFI_DT)
            assert exact[0] == 0.0 and abs(fd[0]) < 1e-8
            rel = float(np.max(np.abs(fd[1:] / exact[1:] - 1)))
            worst = max(worst, rel)
            parts.append(f"{label} {target.value} {rel:.1e}")
    record_property("detail", f"max relative deviation {worst:.1e} (< 1e-4): " + ", ".join(parts))
    assert worst < 1e-4


@pytest.mark.acceptance(label="qualitative N scaling")
def test_qfi_grows_superlinearly_with_spin_number(record_property):
    t = [5.0]
    gd_critical = ModelParams(Model.GD, omega=1.0, lam=1.0, delta_boson=1.0)
    parts = []
    verdicts = []
    for label, params, target, cutoffs in (
        ("TC", TC_CRYSTAL, Target.OMEGA, (12, 15, 18)),
        ("GD", gd_critical, Target.LAMBDA, (24, 30, 36)),
    ):
        values = []
        for n_spins, n_max in zip((3, 5, 7), cutoffs):
            space = CompositeSpace(n_spins, n_max)
            values.append(qfi_system_environment(top_state(space), space, params, target, t, dt=QFI_DT)[0])
        per_spin = np.array(values) / np.array([3, 5, 7])
        verdicts.append(bool(np.all(np.diff(per_spin) > 0)))
        parts.append(f"{label}: F_SE/N at t=5 = {', '.join(f'{v:.3g}' for v in per_spin)}")
    record_property("detail", "; ".join(parts) + " (increasing)")
    assert all(verdicts)
