"""Fully discrete time step for the non-isothermal Cahn-Hilliard system.

Unknowns per step are the nodal vectors of phase field ``phi``, chemical
potential ``mu`` and temperature ``theta``, stacked as ``[phi, mu, theta]``.
The three residual blocks are tested with P1 functions ``psi``, ``xi`` and
``omega``:

* phase:   <(phi - phi_o)/tau, psi> - <F, grad psi>,
           F = (M mu_o - C)/(theta theta_o) grad theta - (M/theta) grad mu
* potential: <mu, xi> - gamma <theta grad phi, grad xi>
           - gamma <grad phi_o . grad theta, xi> - <f_phi, xi>
* entropy: <(s - s_o)/tau, omega> - <Q/theta^2, omega>
           + <A/(theta_o theta), grad omega> - gamma <(phi - phi_o)/tau grad phi_o, grad omega>

where ``A = p grad theta + q grad mu`` and ``Q = A . grad theta / theta_o
+ (r grad theta + M grad mu) . grad mu`` with

    p = (K - 2 C mu_o + M mu_o^2)/theta_o,  q = C - M mu_o,  r = q/theta_o.

Subscript ``o`` marks the previous time level; every lagged coefficient is
taken there.
"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np

from . import thermo
from .fem import (
    AssemblyPlan,
    BilinearDensity,
    QuadPointData,
    local_matrices,
    local_vectors,
    lu_factorize,
    reference_quadrature,
)
from .thermo import NonpositiveTemperature, OnsagerCoeffs, PotentialParams

log = logging.getLogger(__name__)


class NewtonDiverged(RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class State:
    phi: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    time: float = 0.0

    def pack(self):
        return np.concatenate([self.phi, self.mu, self.theta])

    @classmethod
    def unpack(cls, x, time=0.0):
        N = x.size // 3
        return cls(x[:N].copy(), x[N : 2 * N].copy(), x[2 * N :].copy(), time)


@dataclass(frozen=True)
class SchemeConfig:
    tau: float
    potential: PotentialParams = field(default_factory=PotentialParams)
    onsager: OnsagerCoeffs = field(default_factory=OnsagerCoeffs)
    quad: object = field(default_factory=reference_quadrature)
    newton_tol: float = 1e-12
    newton_max_iter: int = 25
    max_halvings: int = 10

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"time step must be positive, got {self.tau}")
        if not self.newton_tol > 0:
            raise ValueError(f"Newton tolerance must be positive, got {self.newton_tol}")
        thermo.validate_onsager(self.onsager)


@dataclass(frozen=True)
class StepStats:
    newton_iterations: int
    final_residual_norm: float
    theta_min: float
    theta_max: float
    residual_history: tuple = ()


def _dot(u, v):
    return np.einsum("...d,...d->...", u, v)


def _check_qp_theta(theta):
    bad = ~(theta > 0)
    if np.any(bad):
        e, q = np.argwhere(bad)[0]
        raise NonpositiveTemperature(
            f"non-positive temperature {theta[e, q]!r} at element {e}, quadrature point {q}",
            element=int(e),
            point=int(q),
        )


class _StepForms:
    """Quadrature-point quantities shared by the residual and the Jacobian."""

    def __init__(self, mesh, new, old, cfg):
        if np.any(~(np.asarray(new.theta) > 0)):
            i = int(np.flatnonzero(~(np.asarray(new.theta) > 0))[0])
            raise NonpositiveTemperature(f"non-positive nodal temperature at node {i}")
        d = QuadPointData(
            mesh,
            cfg.quad,
            phi=new.phi,
            mu=new.mu,
            theta=new.theta,
            phi_o=old.phi,
            mu_o=old.mu,
            theta_o=old.theta,
        )
        self.mesh, self.cfg, self.data = mesh, cfg, d
        self.phi, self.gphi = d["phi"]
        self.mu, self.gmu = d["mu"]
        self.theta, self.gtheta = d["theta"]
        self.phi_o, self.gphi_o = d["phi_o"]
        self.mu_o = d.value("mu_o")
        self.theta_o = d.value("theta_o")
        _check_qp_theta(self.theta)
        _check_qp_theta(self.theta_o)

        c = cfg.onsager
        self.alpha = (c.M * self.mu_o - c.C) / (self.theta * self.theta_o)
        self.p = (c.K - 2 * c.C * self.mu_o + c.M * self.mu_o**2) / self.theta_o
        self.q = c.C - c.M * self.mu_o
        self.r = self.q / self.theta_o
        self.A = self.p[..., None] * self.gtheta + self.q[..., None] * self.gmu
        gt2 = _dot(self.gtheta, self.gtheta)
        self.Q = self.p * gt2 / self.theta_o + 2 * self.r * _dot(self.gtheta, self.gmu) + c.M * _dot(
            self.gmu, self.gmu
        )

    def residual_blocks(self):
        cfg, pp, c = self.cfg, self.cfg.potential, self.cfg.onsager
        tau = cfg.tau
        th, tho = self.theta, self.theta_o
        flux = self.alpha[..., None] * self.gtheta - (c.M / th)[..., None] * self.gmu
        r_phi = ((self.phi - self.phi_o) / tau, -flux)

        fphi = thermo.split_coefficients(self.phi, self.phi_o, th, pp)
        r_mu = (
            self.mu - pp.gamma * _dot(self.gphi_o, self.gtheta) - fphi,
            -pp.gamma * th[..., None] * self.gphi,
        )

        s_new = thermo.entropy_density(self.phi, self.gphi, th, pp)
        s_old = thermo.entropy_density(self.phi_o, self.gphi_o, tho, pp)
        dphi_dt = (self.phi - self.phi_o) / tau
        r_s = (
            (s_new - s_old) / tau - self.Q / th**2,
            self.A / (tho * th)[..., None] - pp.gamma * dphi_dt[..., None] * self.gphi_o,
        )
        return r_phi, r_mu, r_s

    def jacobian_blocks(self):
        cfg, pp, c = self.cfg, self.cfg.potential, self.cfg.onsager
        tau = cfg.tau
        th, tho = self.theta, self.theta_o
        gt, gm = self.gtheta, self.gmu
        col = lambda a: a[..., None]  # noqa: E731

        # phase block
        j_pp = BilinearDensity(vv=1.0 / tau)
        j_pm = BilinearDensity(gg=c.M / th)
        j_pt = BilinearDensity(
            vg=col(self.alpha / th) * gt - col(c.M / th**2) * gm,
            gg=-self.alpha,
        )

        # potential block
        j_mp = BilinearDensity(
            vv=-thermo.d2fvex_dphi2(self.phi, th, pp),
            gg=-pp.gamma * th,
        )
        j_mm = BilinearDensity(vv=1.0)
        j_mt = BilinearDensity(
            vv=-thermo.split_dtheta(self.phi, self.phi_o, th, pp),
            gv=-pp.gamma * self.gphi_o,
            vg=-pp.gamma * self.gphi,
        )

        # entropy block
        j_sp = BilinearDensity(
            vv=-thermo.d2f_dphi_dtheta(self.phi, th, pp) / tau,
            gv=-pp.gamma * self.gphi / tau,
            vg=-pp.gamma * self.gphi_o / tau,
        )
        j_sm = BilinearDensity(
            gv=-(2 * col(self.r) * gt + 2 * c.M * gm) / col(th**2),
            gg=self.q / (tho * th),
        )
        j_st = BilinearDensity(
            vv=pp.b / th / tau + 2 * self.Q / th**3,
            gv=-(2 * col(self.p / tho) * gt + 2 * col(self.r) * gm) / col(th**2),
            vg=-self.A / col(tho * th**2),
            gg=self.p / (tho * th),
        )
        return [[j_pp, j_pm, j_pt], [j_mp, j_mm, j_mt], [j_sp, j_sm, j_st]]


def residual(mesh, x_new, x_old, cfg):
    """Assembled residual of one step, length ``3 N``."""
    forms = _StepForms(mesh, x_new, x_old, cfg)
    el = mesh.elements.ravel()
    N = mesh.num_nodes
    out = []
    for c0, c1 in forms.residual_blocks():
        loc = local_vectors(mesh, cfg.quad, c0, c1)
        out.append(np.bincount(el, weights=loc.ravel(), minlength=N))
    return np.concatenate(out)


_PLANS = {}


def _plan(mesh):
    key = id(mesh)
    plan = _PLANS.get(key)
    if plan is None or plan.mesh is not mesh:
        plan = AssemblyPlan(mesh, nblocks=3)
        _PLANS.clear()
        _PLANS[key] = plan
    return plan


def jacobian(mesh, x_new, x_old, cfg):
    """Analytic Jacobian of :func:`residual` with respect to ``[phi, mu, theta]``."""
    forms = _StepForms(mesh, x_new, x_old, cfg)
    dens = forms.jacobian_blocks()
    blocks = [[local_matrices(mesh, cfg.quad, d) for d in row] for row in dens]
    return _plan(mesh).build(blocks)


def solve_timestep(mesh, x_old, cfg, guess=None):
    """Advance ``x_old`` by one step with Newton's method.

    Returns ``(state, stats)``. Iterates that would make a nodal temperature
    non-positive are halved (at most ``cfg.max_halvings`` times).

    Besides ``max|R| <= newton_tol`` the summed entropy rows must also be
    within ``newton_tol``: that sum is exactly ``dS/tau - D_h``, and
    nodewise slack adds up over the mesh. One extra iteration is spent on
    this at most; below that the sum is at round-off.
    """
    if np.any(~(np.asarray(x_old.theta) > 0)):
        raise NonpositiveTemperature("previous state has non-positive nodal temperature")
    t_new = x_old.time + cfg.tau
    N = mesh.num_nodes
    x = (guess if guess is not None else x_old).pack().astype(float)
    history = []
    polished = False
    for it in range(cfg.newton_max_iter + 1):
        cur = State.unpack(x, t_new)
        R = residual(mesh, cur, x_old, cfg)
        rnorm = float(np.max(np.abs(R)))
        history.append(rnorm)
        if not np.isfinite(rnorm):
            raise NewtonDiverged(f"non-finite residual at Newton iteration {it}", it, rnorm)
        balanced = abs(float(R[2 * N :].sum())) <= cfg.newton_tol
        if rnorm <= cfg.newton_tol and (balanced or polished):
            stats = StepStats(
                newton_iterations=it,
                final_residual_norm=rnorm,
                theta_min=float(cur.theta.min()),
                theta_max=float(cur.theta.max()),
                residual_history=tuple(history),
            )
            return cur, stats
        if it == cfg.newton_max_iter:
            break
        polished = rnorm <= cfg.newton_tol
        J = jacobian(mesh, cur, x_old, cfg)
        dx = lu_factorize(J).solve(-R)
        step = 1.0
        for _ in range(cfg.max_halvings + 1):
            trial = x + step * dx
            if np.all(trial[2 * N :] > 0):
                break
            step *= 0.5
        else:
            raise NonpositiveTemperature(
                f"Newton update keeps temperature non-positive after {cfg.max_halvings} halvings"
            )
        if step < 1.0:
            log.debug("Newton iteration %d damped to step %g", it, step)
        x = trial
    raise NewtonDiverged(
        f"Newton did not reach tolerance {cfg.newton_tol:g} in {cfg.newton_max_iter} "
        f"iterations (residual {history[-1]:.3e})",
        cfg.newton_max_iter,
        history[-1],
    )


# ---------------------------------------------------------------------------
# initial data


def trans(z):
    """Smooth step from 0 to 1: ``(clip(tanh z, -1, 1) + 1)/2``."""
    return (np.clip(np.tanh(z), -1.0, 1.0) + 1.0) / 2.0


def theta0(x, y, center=(0.0, 0.0)):
    """Quenching temperature profile shared by both experiments.

    Distances to ``center`` use the nearest periodic image, so the profile
    is continuous on the torus.
    """
    dx = (np.asarray(x) - center[0] + 0.5) % 1.0 - 0.5
    dy = (np.asarray(y) - center[1] + 0.5) % 1.0 - 0.5
    z = (np.sqrt(0.3 * dx**2 + 0.3 * dy**2) - 0.2) / np.sqrt(0.001)
    return -5.9 * trans(z) + 6.0


def phi0_illustration(x, y):
    return 0.5 + 0.01 * np.sin(211 * np.pi * np.asarray(x)) * np.sin(211 * np.pi * np.asarray(y))


def initial_state(mesh, initial_data="convergence", center=(0.0, 0.0), phi=None, theta=None, mu=None):
    """Nodal interpolant of the chosen initial data.

    ``initial_data`` is ``"convergence"`` (``phi = 0.6``), ``"illustration"``
    (small sine perturbation of 0.5) or ``"custom"``, in which case ``phi``
    and ``theta`` are constants or callables of ``(x, y)``. ``mu`` defaults
    to zero and may be given the same way for custom data.
    """
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]

    def nodal(g):
        v = g(x, y) if callable(g) else g
        return np.broadcast_to(np.asarray(v, dtype=float), x.shape).copy()

    if initial_data == "convergence":
        ph = np.full(mesh.num_nodes, 0.6)
        th = theta0(x, y, center)
    elif initial_data == "illustration":
        ph = phi0_illustration(x, y)
        th = theta0(x, y, center)
    elif initial_data == "custom":
        if phi is None or theta is None:
            raise ValueError("custom initial data needs both phi and theta")
        ph, th = nodal(phi), nodal(theta)
    else:
        raise ValueError(f"unknown initial data {initial_data!r}")
    m = np.zeros(mesh.num_nodes) if mu is None else nodal(mu)
    return State(ph, m, th, 0.0)


def with_time(state, time):
    return replace(state, time=time)
