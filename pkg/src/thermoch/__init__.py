"""Structure-preserving P1 finite elements for the non-isothermal Cahn-Hilliard system."""

from .diagnostics import DiagnosticsRecord, entropy_production
from .driver import (
    ConfigError,
    RunConfig,
    SimulationError,
    eoc,
    load_config,
    run_simulation,
    self_convergence_space,
    self_convergence_time,
)
from .fem import reference_quadrature
from .mesh import Mesh, build_periodic_unit_square_mesh, prolong_nodal
from .scheme import SchemeConfig, State, initial_state, solve_timestep
from .thermo import NonpositiveTemperature, OnsagerCoeffs, PotentialParams

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DiagnosticsRecord",
    "Mesh",
    "NonpositiveTemperature",
    "OnsagerCoeffs",
    "PotentialParams",
    "RunConfig",
    "SchemeConfig",
    "SimulationError",
    "State",
    "build_periodic_unit_square_mesh",
    "entropy_production",
    "eoc",
    "initial_state",
    "load_config",
    "prolong_nodal",
    "reference_quadrature",
    "run_simulation",
    "self_convergence_space",
    "self_convergence_time",
    "solve_timestep",
]
