"""
Quenching a mixture
===================

A mixture at phi = 0.5 (with a tiny checkerboard perturbation) sits in a
temperature field that is hot around the origin of the torus and cold
elsewhere. Where the temperature falls below theta_c = 3 the potential turns
into a double well and the mixture starts to separate.

Run from the repository root::

    python demos/plot_01_quench.py
"""

import numpy as np

from thermoch import build_periodic_unit_square_mesh
from thermoch.driver import illustration_profile, run_simulation

# A coarse mesh keeps this demo under a minute. The profile uses unit
# mobility and cross-coupling C = 1e-4.
cfg = illustration_profile(C=1e-4, mesh_n=32, tau=1e-3, t_final=0.05)
mesh = build_periodic_unit_square_mesh(cfg.mesh_n)

x, records, states = run_simulation(cfg, keep_states=True)

# The phase field is conserved while the temperature smooths out.
print(f"{'t':>6} {'mass':>12} {'min theta':>10} {'max theta':>10} {'spread phi':>11}")
for s, r in list(zip(states, records))[::10]:
    print(f"{r.time:6.3f} {r.mass:12.9f} {r.theta_min:10.4f} {r.theta_max:10.4f} {np.ptp(s.phi):11.3e}")

# Where is it cold? Count the nodes below the critical temperature.
cold = x.theta < cfg.potential.theta_c
print(f"\n{cold.mean():.0%} of the nodes are below theta_c at t = {x.time:g}")
