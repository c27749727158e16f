"""The local-oscillator phase decides whether homodyne detection is optimal.

For the Tavis-Cummings coupling the informative quadrature is the one at
Phi = 0; for the generalized Dicke coupling it is Phi = pi/2.  The script
sweeps Phi for both models at N = 3 and prints the Fisher information
reached at t = 4 next to F_SE.

Runs in a few minutes.
"""

from dataclasses import replace

import numpy as np

from spinboson_qfi import (
    CompositeSpace,
    EnsembleConfig,
    Model,
    ModelContext,
    ModelParams,
    Target,
    dicke_number_state,
    qfi_system_environment,
    run_ensemble,
    trajectory_fisher,
)

dt = 2e-3
cfg = EnsembleConfig(n_traj=800, master_seed=2, dt=dt, t_final=4.0, sample_stride=2000)
phases = np.linspace(0.0, np.pi, 5)

for label, space, params, target in (
    ("TC, sensing Omega", CompositeSpace(3, 12), ModelParams(Model.TC, omega=2.0, lam=0.5), Target.OMEGA),
    ("GD, sensing lambda", CompositeSpace(3, 26), ModelParams(Model.GD, omega=1.0, lam=1.0), Target.LAMBDA),
):
    psi0 = dicke_number_state(space, space.total_spin, 0)
    F_SE = qfi_system_environment(psi0, space, params, target, [cfg.t_final], dt=5e-3)[0]
    print(f"\n{label}: F_SE(t=4) = {F_SE:.3f}")
    print("  Phi/pi   F_total  stderr   max|Im<psi|phi>|")
    for phi_lo in phases:
        ctx = ModelContext(space, replace(params, phi_lo=phi_lo), target, dt, "homodyne", homodyne_drift="exponential")
        result = run_ensemble(psi0, ctx, cfg)
        fs = trajectory_fisher(result)
        print(f"  {phi_lo / np.pi:5.2f} {fs.F_total[-1]:9.3f} {fs.stderr_total[-1]:7.3f}   {result.max_abs_B.max():.1e}")
