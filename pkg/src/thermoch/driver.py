"""Simulation loop, self-convergence studies and file output."""

from dataclasses import asdict, dataclass, field, fields
import csv
import json
import logging
import math
import os

import numpy as np

from . import diagnostics
from .fem import norms_of_difference, reference_quadrature
from .mesh import build_periodic_unit_square_mesh, prolong_nodal
from .scheme import SchemeConfig, initial_state, solve_timestep
from .thermo import OnsagerCoeffs, PotentialParams, validate_onsager

log = logging.getLogger(__name__)

CSV_HEADER = [
    "step",
    "time",
    "mass",
    "energy",
    "entropy",
    "production",
    "energy_increment",
    "theta_min",
    "theta_max",
    "newton_iterations",
    "final_residual",
]


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    """A time step failed; carries the step index and the last accepted state."""

    def __init__(self, message, step, last_state, records, level=None):
        super().__init__(message)
        self.step = step
        self.last_state = last_state
        self.records = records
        self.level = level


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    quad_degree: int = 4


@dataclass(frozen=True)
class InitialData:
    """Initial data selector.

    ``kind="custom"`` takes ``phi`` and ``theta`` (and optionally ``mu``) as
    numbers, which is what a JSON config can express, or as callables of
    ``(x, y)`` when built from Python.
    """

    kind: str = "convergence"
    center: tuple = (0.0, 0.0)
    phi: object = None
    mu: object = None
    theta: object = None

    def __post_init__(self):
        if self.kind not in ("convergence", "illustration", "custom"):
            raise ConfigError(
                f"initial_data.kind must be 'convergence', 'illustration' or 'custom', got {self.kind!r}"
            )
        if self.kind == "custom" and (self.phi is None or self.theta is None):
            raise ConfigError("custom initial data needs 'phi' and 'theta'")
        if len(self.center) != 2:
            raise ConfigError(f"initial_data.center must have two entries, got {self.center!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class OutputOptions:
    csv: str = None
    vtk_dir: str = None
    snapshot_stride: int = 100


@dataclass(frozen=True)
class StudyOptions:
    """Refinement levels of a self-convergence study.

    Space studies run meshes ``n = 2**k``; time studies run
    ``tau = 2**-k * tau_base``. Every consecutive pair of levels yields one
    table row, so ``levels = [4, 5, 6]`` produces rows ``k = 4, 5``.
    """

    levels: tuple = (4, 5, 6)
    tau_base: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    mesh_n: int = 32
    tau: float = 1e-3
    t_final: float = 0.2
    potential: PotentialParams = field(default_factory=PotentialParams)
    onsager: OnsagerCoeffs = field(default_factory=OnsagerCoeffs)
    solver: SolverOptions = field(default_factory=SolverOptions)
    initial_data: InitialData = field(default_factory=InitialData)
    output: OutputOptions = field(default_factory=OutputOptions)
    study: StudyOptions = field(default_factory=StudyOptions)

    def __post_init__(self):
        if self.mesh_n < 2:
            raise ConfigError(f"mesh_n must be >= 2, got {self.mesh_n}")
        if not self.tau > 0 or not self.t_final > 0:
            raise ConfigError("tau and t_final must be positive")
        steps_for(self.t_final, self.tau)
        try:
            validate_onsager(self.onsager)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def n_steps(self):
        return steps_for(self.t_final, self.tau)

    def scheme_config(self):
        return SchemeConfig(
            tau=self.tau,
            potential=self.potential,
            onsager=self.onsager,
            quad=reference_quadrature(self.solver.quad_degree),
            newton_tol=self.solver.newton_tol,
            newton_max_iter=self.solver.newton_max_iter,
        )

    def replace(self, **changes):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return RunConfig(**d)

    def to_dict(self):
        return asdict(self)


def steps_for(t_final, tau):
    n = round(t_final / tau)
    if n < 1 or abs(n * tau - t_final) > 1e-9 * t_final:
        raise ConfigError(f"t_final={t_final} is not an integer multiple of tau={tau}")
    return int(n)


_SECTIONS = {
    "potential": PotentialParams,
    "onsager": OnsagerCoeffs,
    "solver": SolverOptions,
    "initial_data": InitialData,
    "output": OutputOptions,
    "study": StudyOptions,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown key(s) in config: {', '.join(unknown)}")
    kw = {}
    for key, value in data.items():
        kw[key] = _build(_SECTIONS[key], value, key) if key in _SECTIONS else value
    return RunConfig(**kw)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# profiles


def illustration_profile(C=1e-4, mesh_n=64, tau=1e-3, t_final=0.1):
    """Quenching example: perturbed mixture, unit mobility."""
    return RunConfig(
        mesh_n=mesh_n,
        tau=tau,
        t_final=t_final,
        onsager=OnsagerCoeffs(M=1.0, K=5e-2, C=C),
        initial_data=InitialData("illustration"),
    )


def space_study_profile(paper_scale=False):
    if paper_scale:
        return RunConfig(
            mesh_n=16, tau=2**-10 * 0.1, t_final=0.1, study=StudyOptions(levels=(4, 5, 6, 7, 8))
        )
    return RunConfig(mesh_n=16, tau=1e-4, t_final=0.025, study=StudyOptions(levels=(4, 5, 6)))


def time_study_profile(paper_scale=False):
    if paper_scale:
        return RunConfig(
            mesh_n=128, tau=2**-7 * 0.1, t_final=0.1, study=StudyOptions(levels=(7, 8, 9, 10, 11))
        )
    return RunConfig(
        mesh_n=64, tau=2**-5 * 0.1, t_final=0.05, study=StudyOptions(levels=(5, 6, 7, 8))
    )


# ---------------------------------------------------------------------------
# simulation


def run_simulation(cfg, keep_states=False, progress=None):
    """Run ``cfg`` to ``t_final``.

    Returns ``(final_state, records)``, plus the list of all states when
    ``keep_states`` is set. Snapshots and the CSV file are written if the
    output section asks for them.
    """
    mesh = build_periodic_unit_square_mesh(cfg.mesh_n)
    scfg = cfg.scheme_config()
    ini = cfg.initial_data
    x = initial_state(mesh, ini.kind, center=ini.center, phi=ini.phi, theta=ini.theta, mu=ini.mu)
    rec = diagnostics.initial_record(x, mesh, scfg)
    records = [rec]
    states = [x] if keep_states else None
    out = cfg.output
    if out.vtk_dir:
        os.makedirs(out.vtk_dir, exist_ok=True)
        write_vtk_snapshot(mesh, x, os.path.join(out.vtk_dir, "state_000000.vtk"))

    for k in range(1, cfg.n_steps + 1):
        try:
            x_new, stats = solve_timestep(mesh, x, scfg)
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            if out.csv:
                write_csv(records, out.csv)
            raise SimulationError(f"step {k} failed: {exc}", k, x, records) from exc
        # keep the time grid exact instead of accumulating round-off
        x_new = type(x_new)(x_new.phi, x_new.mu, x_new.theta, k * cfg.tau)
        rec = diagnostics.record_step(rec, x_new, x, stats, mesh, scfg)
        records.append(rec)
        x = x_new
        if keep_states:
            states.append(x)
        if out.vtk_dir and out.snapshot_stride > 0 and k % out.snapshot_stride == 0:
            write_vtk_snapshot(mesh, x, os.path.join(out.vtk_dir, f"state_{k:06d}.vtk"))
        if progress is not None:
            progress(k, rec)

    if out.csv:
        write_csv(records, out.csv)
    if keep_states:
        return x, records, states
    return x, records


# ---------------------------------------------------------------------------
# convergence studies


def eoc(err_coarse, err_fine):
    """Experimental order ``log2(err_coarse / err_fine)``."""
    if not (err_coarse > 0 and err_fine > 0):
        raise ValueError(f"errors must be positive, got {err_coarse!r}, {err_fine!r}")
    return math.log2(err_coarse / err_fine)


ERROR_NAMES = ("grad_phi", "grad_mu", "theta", "grad_theta")


@dataclass
class ConvergenceRow:
    k: int
    errors: dict
    eocs: dict


@dataclass
class ConvergenceTable:
    kind: str
    rows: list

    def column(self, name):
        return [r.errors[name] for r in self.rows]

    def format(self):
        head = f"{'k':>3} " + " ".join(f"{'err(' + n + ')':>16} {'eoc':>6}" for n in ERROR_NAMES)
        lines = [head]
        for r in self.rows:
            cells = []
            for n in ERROR_NAMES:
                e = r.eocs.get(n)
                cells.append(f"{r.errors[n]:16.4e} {'--' if e is None else f'{e:6.2f}':>6}")
            lines.append(f"{r.k:>3} " + " ".join(cells))
        return "\n".join(lines)

    def to_dict(self):
        return {"kind": self.kind, "rows": [asdict(r) for r in self.rows]}


def _finish_table(kind, ks, errs):
    rows = []
    for i, (k, e) in enumerate(zip(ks, errs)):
        eocs = {}
        if i > 0:
            for n in ERROR_NAMES:
                prev = errs[i - 1][n]
                eocs[n] = eoc(prev, e[n]) if prev > 0 and e[n] > 0 else None
        rows.append(ConvergenceRow(k, e, eocs))
    return ConvergenceTable(kind, rows)


def _pair_errors(mesh, quad, coarse_states, fine_states, tau, prolong=None):
    max_phi = max_theta = 0.0
    sum_mu = sum_theta = 0.0
    for n, (xc, xf) in enumerate(zip(coarse_states, fine_states)):
        if prolong is not None:
            xc = [prolong(xc.phi), prolong(xc.mu), prolong(xc.theta)]
        else:
            xc = [xc.phi, xc.mu, xc.theta]
        _, h1_phi = norms_of_difference(mesh, quad, xf.phi, xc[0])
        _, h1_mu = norms_of_difference(mesh, quad, xf.mu, xc[1])
        l2_th, h1_th = norms_of_difference(mesh, quad, xf.theta, xc[2])
        max_phi = max(max_phi, h1_phi)
        max_theta = max(max_theta, l2_th)
        if n >= 1:
            sum_mu += h1_mu
            sum_theta += h1_th
    return {
        "grad_phi": max_phi,
        "grad_mu": tau * sum_mu,
        "theta": max_theta,
        "grad_theta": tau * sum_theta,
    }


def _run_level(cfg, level):
    try:
        _, _, states = run_simulation(cfg, keep_states=True)
    except SimulationError as exc:
        exc.level = level
        raise
    return states


def self_convergence_space(cfg, levels=None, on_level=None):
    """Cauchy errors between meshes ``n = 2**k`` and ``2**(k+1)`` at fixed ``cfg.tau``.

    ``on_level(k, states)`` is called after each level's run, if given.
    """
    levels = tuple(levels if levels is not None else cfg.study.levels)
    if len(levels) < 2 or any(b != a + 1 for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be consecutive integers, got {levels}")
    base = cfg.replace(output=OutputOptions())
    quad = reference_quadrature(cfg.solver.quad_degree)
    ks, errs = [], []
    prev_states = prev_mesh = None
    for k in levels:
        level_cfg = base.replace(mesh_n=2**k)
        log.info("space study: level k=%d (n=%d)", k, 2**k)
        states = _run_level(level_cfg, k)
        if on_level is not None:
            on_level(k, states)
        mesh = build_periodic_unit_square_mesh(2**k)
        if prev_states is not None:
            coarse_mesh = prev_mesh
            errs.append(
                _pair_errors(
                    mesh,
                    quad,
                    prev_states,
                    states,
                    cfg.tau,
                    prolong=lambda u, cm=coarse_mesh, fm=mesh: prolong_nodal(cm, fm, u),
                )
            )
            ks.append(k - 1)
        prev_states, prev_mesh = states, mesh
    return _finish_table("space", ks, errs)


def self_convergence_time(cfg, levels=None, on_level=None):
    """Cauchy errors between ``tau_k = 2**-k tau_base`` and ``tau_{k+1}`` on a fixed mesh.

    ``on_level(k, states)`` is called after each level's run, if given.
    """
    levels = tuple(levels if levels is not None else cfg.study.levels)
    if len(levels) < 2 or any(b != a + 1 for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be consecutive integers, got {levels}")
    base = cfg.replace(output=OutputOptions())
    quad = reference_quadrature(cfg.solver.quad_degree)
    mesh = build_periodic_unit_square_mesh(cfg.mesh_n)
    ks, errs = [], []
    prev_states = prev_tau = None
    for k in levels:
        tau = 2.0**-k * cfg.study.tau_base
        log.info("time study: level k=%d (tau=%g)", k, tau)
        states = _run_level(base.replace(tau=tau), k)
        if on_level is not None:
            on_level(k, states)
        if prev_states is not None:
            errs.append(_pair_errors(mesh, quad, prev_states, states[::2], prev_tau))
            ks.append(k - 1)
        prev_states, prev_tau = states, tau
    return _finish_table("time", ks, errs)


# ---------------------------------------------------------------------------
# structural checks


def check_structure(cfg, records=None, states=None):
    """Per-step structural identities of a run; returns ``[(name, ok, detail)]``."""
    if records is None or states is None:
        _, records, states = run_simulation(cfg, keep_states=True)
    scfg = cfg.scheme_config()
    mesh = build_periodic_unit_square_mesh(cfg.mesh_n)
    tol = scfg.newton_tol
    mass_dev = max(abs(r.mass - records[0].mass) for r in records)
    dS = [b.entropy - a.entropy for a, b in zip(records, records[1:])]
    dE = [b.energy - a.energy for a, b in zip(records, records[1:])]
    ident = [
        abs(r.production - dS[i] / cfg.tau) for i, r in enumerate(records[1:])
    ]
    expanded = [
        abs(
            diagnostics.entropy_production_expanded(states[i + 1], states[i], mesh, scfg.quad, cfg.onsager)
            - r.production
        )
        for i, r in enumerate(records[1:])
    ]
    theta_min = min(r.theta_min for r in records)
    return [
        ("mass conservation", mass_dev <= 1e-10, f"max |mass - mass0| = {mass_dev:.3e}"),
        ("entropy production", min(dS, default=0.0) >= -10 * tol, f"min dS = {min(dS, default=0.0):.3e}"),
        ("energy dissipation", max(dE, default=0.0) <= 10 * tol, f"max dE = {max(dE, default=0.0):.3e}"),
        ("entropy identity", max(ident, default=0.0) <= 1e-10, f"max |D_h - dS/tau| = {max(ident, default=0.0):.3e}"),
        ("production two-path", max(expanded, default=0.0) <= 1e-13 * max(1.0, max((r.production for r in records), default=1.0)),
         f"max |quadratic - expanded| = {max(expanded, default=0.0):.3e}"),
        ("temperature positivity", theta_min > 0, f"min theta = {theta_min:.6g}"),
    ]


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(records, path):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in records:
                w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = {"step", "newton_iterations"}
    return [
        diagnostics.DiagnosticsRecord(**{k: (int(v) if k in ints else float(v)) for k, v in row.items()})
        for row in rows
    ]


def write_vtk_snapshot(mesh, state, path):
    """Legacy ASCII VTK unstructured grid with point scalars phi, mu, theta.

    Cells use the representative node indices, so triangles crossing the
    periodic seam are drawn folded back across the domain.
    """
    N, E = mesh.num_nodes, mesh.num_elements
    lines = [
        "# vtk DataFile Version 2.0",
        f"thermoch state t={_fmt(state.time)}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {N} double",
    ]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {E} {4 * E}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    lines.append(f"CELL_TYPES {E}")
    lines += ["5"] * E
    lines.append(f"POINT_DATA {N}")
    for name in ("phi", "mu", "theta"):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [_fmt(v) for v in getattr(state, name)]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK {path}: {exc}") from exc
