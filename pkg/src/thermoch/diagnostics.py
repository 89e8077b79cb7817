"""Structural functionals: mass, internal energy, entropy, entropy production.

Everything is integrated with the scheme's own quadrature rule so the
discrete balance laws hold up to the Newton tolerance.
"""

from dataclasses import dataclass, fields

import numpy as np

from . import thermo
from .fem import QuadPointData, _weights


@dataclass(frozen=True)
class DiagnosticsRecord:
    step: int
    time: float
    mass: float
    energy: float
    entropy: float
    production: float
    energy_increment: float
    theta_min: float
    theta_max: float
    newton_iterations: int
    final_residual: float

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _integral(mesh, quad, density):
    return float(np.sum(_weights(mesh, quad) * density))


def total_mass(state, mesh, quad):
    d = QuadPointData(mesh, quad, phi=state.phi)
    return _integral(mesh, quad, d.value("phi"))


def total_internal_energy(state, mesh, quad, p):
    d = QuadPointData(mesh, quad, phi=state.phi, theta=state.theta)
    return _integral(mesh, quad, thermo.internal_energy_density(d.value("phi"), d.value("theta"), p))


def total_entropy(state, mesh, quad, p):
    d = QuadPointData(mesh, quad, phi=state.phi, theta=state.theta)
    phi, gphi = d["phi"]
    return _integral(mesh, quad, thermo.entropy_density(phi, gphi, d.value("theta"), p))


def _production_vectors(x_new, x_old, mesh, quad):
    d = QuadPointData(mesh, quad, mu=x_new.mu, theta=x_new.theta, mu_o=x_old.mu, theta_o=x_old.theta)
    mu, gmu = d["mu"]
    theta, gtheta = d["theta"]
    mu_o, theta_o = d.value("mu_o"), d.value("theta_o")
    for t in (theta, theta_o):
        if np.any(~(t > 0)):
            raise thermo.NonpositiveTemperature("non-positive temperature at a quadrature point")
    v1 = gtheta / (theta * theta_o)[..., None]
    v2 = (mu_o / (theta * theta_o))[..., None] * gtheta - gmu / theta[..., None]
    return d, v1, v2


def _coeffs(onsager):
    # accept a scheme config as well as bare coefficients
    return getattr(onsager, "onsager", onsager)


def production_density(x_new, x_old, mesh, quad, onsager):
    """Pointwise quadratic form ``(v1, v2) L (v1, v2)`` at the quadrature points."""
    _, v1, v2 = _production_vectors(x_new, x_old, mesh, quad)
    c = _coeffs(onsager)
    dot = lambda a, b: np.einsum("...d,...d->...", a, b)  # noqa: E731
    return c.K * dot(v1, v1) - 2 * c.C * dot(v1, v2) + c.M * dot(v2, v2)


def entropy_production(x_new, x_old, mesh, quad, onsager):
    """Discrete entropy production of the step ``x_old -> x_new``."""
    return _integral(mesh, quad, production_density(x_new, x_old, mesh, quad, onsager))


def entropy_production_expanded(x_new, x_old, mesh, quad, onsager):
    """Same quantity assembled term by term from the scalar products.

    Expands ``K|grad(1/theta)|^2 - 2 C grad(mu/theta).grad(1/theta) +
    M|grad(mu/theta)|^2`` with the lagged weights of the scheme instead of
    forming the two flux vectors first.
    """
    d = QuadPointData(mesh, quad, mu=x_new.mu, theta=x_new.theta, mu_o=x_old.mu, theta_o=x_old.theta)
    mu, gmu = d["mu"]
    theta, gt = d["theta"]
    mu_o, th_o = d.value("mu_o"), d.value("theta_o")
    c = _coeffs(onsager)
    tt = np.einsum("...d,...d->...", gt, gt)
    tm = np.einsum("...d,...d->...", gt, gmu)
    mm = np.einsum("...d,...d->...", gmu, gmu)
    th2 = theta**2
    kk = c.K * tt / (th2 * th_o**2)
    cc = -2 * c.C * (mu_o * tt / (th2 * th_o**2) - tm / (th2 * th_o))
    m2 = c.M * (mu_o**2 * tt / (th2 * th_o**2) - 2 * mu_o * tm / (th2 * th_o) + mm / th2)
    return _integral(mesh, quad, kk) + _integral(mesh, quad, cc) + _integral(mesh, quad, m2)


def production_lower_bound(x_new, x_old, mesh, quad, onsager):
    """``lambda_0 * int(|v1|^2 + |v2|^2)``, a lower bound for the production."""
    lam0 = thermo.validate_onsager(_coeffs(onsager))
    _, v1, v2 = _production_vectors(x_new, x_old, mesh, quad)
    dens = np.einsum("...d,...d->...", v1, v1) + np.einsum("...d,...d->...", v2, v2)
    return lam0 * _integral(mesh, quad, dens)


def initial_record(state, mesh, cfg):
    """Record for step 0; production and energy increment are zero by convention."""
    q, p = cfg.quad, cfg.potential
    return DiagnosticsRecord(
        step=0,
        time=float(state.time),
        mass=total_mass(state, mesh, q),
        energy=total_internal_energy(state, mesh, q, p),
        entropy=total_entropy(state, mesh, q, p),
        production=0.0,
        energy_increment=0.0,
        theta_min=float(np.min(state.theta)),
        theta_max=float(np.max(state.theta)),
        newton_iterations=0,
        final_residual=0.0,
    )


def record_step(prev, x_new, x_old, stats, mesh, cfg):
    """Diagnostics of ``x_new``, the state reached from ``x_old`` in one step."""
    q, p = cfg.quad, cfg.potential
    energy = total_internal_energy(x_new, mesh, q, p)
    return DiagnosticsRecord(
        step=prev.step + 1,
        time=float(x_new.time),
        mass=total_mass(x_new, mesh, q),
        energy=energy,
        entropy=total_entropy(x_new, mesh, q, p),
        production=entropy_production(x_new, x_old, mesh, q, cfg.onsager),
        energy_increment=energy - prev.energy,
        theta_min=float(np.min(x_new.theta)),
        theta_max=float(np.max(x_new.theta)),
        newton_iterations=int(stats.newton_iterations),
        final_residual=float(stats.final_residual_norm),
    )
