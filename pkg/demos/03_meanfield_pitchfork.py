"""Superradiant pitchfork of the generalized Dicke model in mean field.

Compares the closed-form critical coupling with the value found by
bisecting on the stability of the normal point, lists the fixed points
on either side of the transition, and integrates the flow from a slightly
tilted normal state above threshold.
"""

from dataclasses import replace

import numpy as np

from spinboson_qfi import MeanFieldState, Model, ModelParams, critical_coupling, integrate_meanfield, stationary_branches
from spinboson_qfi.meanfield import locate_pitchfork

params = ModelParams(Model.GD, omega=1.0, delta_boson=1.0, kappa=1.0, lam=1.0)
lam_c = critical_coupling(params)
print(f"critical coupling: closed form {lam_c:.10f}, bisection {locate_pitchfork(params):.10f}")

for lam in (0.8 * lam_c, 1.5 * lam_c):
    print(f"\nlambda = {lam:.4f}")
    for br in stationary_branches(replace(params, lam=lam)):
        m = br.state
        print(f"  {br.label:14s} m = ({m.m_x:+.4f}, {m.m_y:+.4f}, {m.m_z:+.4f}, {m.m_q:+.4f}, {m.m_p:+.4f})  {br.stability}")

above = replace(params, lam=1.5 * lam_c)
tilt = 1e-3
start = MeanFieldState(-np.cos(tilt), 0.0, np.sin(tilt), 0.0, 0.0)
t = np.linspace(0.0, 60.0, 7)
flow = integrate_meanfield(start, above, t, dt=1e-2)
print("\nflow from a tilted normal state (t, m_x, m_z):")
for ti, m in zip(t, flow):
    print(f"  {ti:5.1f} {m[0]:+.4f} {m[2]:+.4f}")
