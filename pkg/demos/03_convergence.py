"""
Self-convergence in space and time
==================================

There is no closed-form solution, so convergence is measured between
consecutive refinements (Cauchy errors). Errors are squared norms, so first
order in the H1 norm shows up as an eoc of 2.

The default levels here are small enough for a laptop; the shipped configs
``configs/space_study.json`` and ``configs/time_study.json`` hold the larger
desk profiles, and ``configs/paper_*.json`` the full-size ones.
"""

from thermoch.driver import (
    StudyOptions,
    self_convergence_space,
    self_convergence_time,
    space_study_profile,
    time_study_profile,
)

space = space_study_profile().replace(tau=5e-4, t_final=0.01)
print("space, tau = 5e-4, T = 0.01")
print(self_convergence_space(space, levels=(3, 4, 5)).format())

time_cfg = time_study_profile().replace(mesh_n=16, t_final=0.025, study=StudyOptions(levels=(4, 5, 6, 7)))
print("\ntime, n = 16, T = 0.025")
print(self_convergence_time(time_cfg).format())
