"""
Checking the time integrator
============================

With alpha = beta = zeta = 0 the flow vanishes and every Fourier mode of the
deviatoric part of D decays at the rate dT k^2 + 2 d dR.  Halving the step
should cut the error by four for a second-order scheme.
"""
import numpy as np

from bingham_closure import nematic

errors = []
for dt in (0.08, 0.04, 0.02, 0.01):
    cfg = nematic.SimConfig(d=2, n=16, L=15.0, dt=dt, alpha=0.0, beta=0.0, zeta=0.0,
                            init_amplitude=0.05, init_wavevectors="1 0; 0 2; 1 1")
    sim = nematic.Simulator(cfg)
    state = nematic.init_planewave(cfg, sim.grid)
    D0 = state.D_hat.copy()
    for _ in range(int(round(1.0 / dt))):
        state = sim.step(state)
    exact = D0 * np.exp(-(cfg.dT * sim.grid.k2 + 2 * cfg.d * cfg.dR) * state.t)
    for a in sim.diag_comp:
        exact[a][0, 0] = D0[a][0, 0]
    errors.append(np.max(np.abs(sim.grid.inverse(state.D_hat - exact))))
    print(f"dt = {dt:<5} max error at t = 1: {errors[-1]:.3e}")

print("observed orders:", np.round(np.log2(np.array(errors[:-1]) / np.array(errors[1:])), 3))
