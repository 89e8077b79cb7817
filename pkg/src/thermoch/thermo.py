"""Driving potential, its convex-concave split, and derived densities.

The potential is

    f(phi, theta) = a (2 phi^4 - 4 phi^3 + (r + 3) phi^2 - (r + 1) phi + (r + 1)/4)
                    - b (theta log(theta/theta_c) + theta - theta_c),

with ``r = (theta - theta_c)/d``. All functions accept numpy arrays and
reject non-positive temperatures instead of clamping them.
"""

from dataclasses import dataclass

import numpy as np


class NonpositiveTemperature(ValueError):
    """A temperature value at a node or quadrature point is not positive."""

    def __init__(self, message, element=None, point=None):
        super().__init__(message)
        self.element = element
        self.point = point


@dataclass(frozen=True)
class PotentialParams:
    a: float = 0.01
    b: float = 1.0
    d: float = 1.0
    theta_c: float = 3.0
    gamma: float = 1e-3

    def __post_init__(self):
        for name in ("a", "b", "d", "theta_c", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"potential parameter {name} must be positive")


@dataclass(frozen=True)
class OnsagerCoeffs:
    """Scalar isotropic Onsager coefficients, each multiplying the identity."""

    M: float = 1e-2
    K: float = 5e-2
    C: float = 1e-4


def _check_theta(theta):
    theta = np.asarray(theta, dtype=float)
    if np.any(~(theta > 0)):
        bad = np.flatnonzero(~(theta > 0).ravel())
        raise NonpositiveTemperature(
            f"non-positive temperature {theta.ravel()[bad[0]]!r} "
            f"({bad.size} offending value(s))"
        )
    return theta


def _ret(x):
    return float(x) if np.ndim(x) == 0 else x


def f_value(phi, theta, p):
    theta = _check_theta(theta)
    phi = np.asarray(phi, dtype=float)
    r = (theta - p.theta_c) / p.d
    poly = 2 * phi**4 - 4 * phi**3 + (r + 3) * phi**2 - (r + 1) * phi + 0.25 * (r + 1)
    heat = theta * np.log(theta / p.theta_c) + theta - p.theta_c
    return _ret(p.a * poly - p.b * heat)


def df_dphi(phi, theta, p):
    theta = _check_theta(theta)
    phi = np.asarray(phi, dtype=float)
    r = (theta - p.theta_c) / p.d
    return _ret(p.a * (8 * phi**3 - 12 * phi**2 + 2 * (r + 3) * phi - (r + 1)))


def df_dtheta(phi, theta, p):
    theta = _check_theta(theta)
    phi = np.asarray(phi, dtype=float)
    return _ret(p.a / p.d * (phi**2 - phi + 0.25) - p.b * (np.log(theta / p.theta_c) + 2))


def d2f_dtheta2(phi, theta, p):
    theta = _check_theta(theta)
    return _ret(-p.b / theta + 0.0 * np.asarray(phi, dtype=float))


def d2f_dphi_dtheta(phi, theta, p):
    _check_theta(theta)
    return _ret(p.a / p.d * (2 * np.asarray(phi, dtype=float) - 1))


# ---------------------------------------------------------------------------
# convex-concave split in phi
#
# With c = a (theta - theta_c)/d the phi-quadratic coefficient a (r + 3) is
# 3a + c. The constant 3a goes to the convex part together with the positive
# part of c; the negative part of c and all terms at most linear in phi go
# to the concave part.


def _c(theta, p):
    return p.a * (theta - p.theta_c) / p.d


def f_vex(phi, theta, p):
    theta = _check_theta(theta)
    phi = np.asarray(phi, dtype=float)
    c = _c(theta, p)
    return _ret(p.a * (2 * phi**4 - 4 * phi**3 + 3 * phi**2) + np.maximum(c, 0.0) * phi**2)


def f_cav(phi, theta, p):
    """Concave part; ``f_vex + f_cav == f`` including the theta-only terms."""
    theta = _check_theta(theta)
    phi = np.asarray(phi, dtype=float)
    c = _c(theta, p)
    heat = theta * np.log(theta / p.theta_c) + theta - p.theta_c
    return _ret(np.minimum(c, 0.0) * phi**2 - (c + p.a) * phi + 0.25 * (c + p.a) - p.b * heat)


def dfvex_dphi(phi, theta, p):
    theta = _check_theta(theta)
    phi = np.asarray(phi, dtype=float)
    c = _c(theta, p)
    return _ret(p.a * (8 * phi**3 - 12 * phi**2 + 6 * phi) + 2 * np.maximum(c, 0.0) * phi)


def dfcav_dphi(phi, theta, p):
    theta = _check_theta(theta)
    phi = np.asarray(phi, dtype=float)
    c = _c(theta, p)
    return _ret(2 * np.minimum(c, 0.0) * phi - (c + p.a))


def d2fvex_dphi2(phi, theta, p):
    theta = _check_theta(theta)
    phi = np.asarray(phi, dtype=float)
    c = _c(theta, p)
    return _ret(6 * p.a * (2 * phi - 1) ** 2 + 2 * np.maximum(c, 0.0))


def d2fcav_dphi2(phi, theta, p):
    theta = _check_theta(theta)
    c = _c(theta, p)
    return _ret(2 * np.minimum(c, 0.0) + 0.0 * np.asarray(phi, dtype=float))


def split_coefficients(phi_new, phi_old, theta_new, p):
    """Implicit-convex / explicit-concave approximation of ``df/dphi``."""
    return _ret(
        np.asarray(dfvex_dphi(phi_new, theta_new, p)) + dfcav_dphi(phi_old, theta_new, p)
    )


def split_dtheta(phi_new, phi_old, theta_new, p):
    """Derivative of :func:`split_coefficients` in ``theta_new``.

    At ``theta == theta_c`` the kink of ``max(c, 0)`` is resolved by giving
    the full slope to the concave (``phi_old``) side.
    """
    theta = _check_theta(theta_new)
    hot = (_c(theta, p) > 0).astype(float)
    phi_new = np.asarray(phi_new, dtype=float)
    phi_old = np.asarray(phi_old, dtype=float)
    return _ret(p.a / p.d * (2 * hot * phi_new + 2 * (1 - hot) * phi_old - 1))


# ---------------------------------------------------------------------------
# thermodynamic densities


def free_energy_density(phi, grad_phi, theta, p):
    """Helmholtz free energy ``(gamma theta / 2)|grad phi|^2 + f``."""
    g2 = np.sum(np.asarray(grad_phi, dtype=float) ** 2, axis=-1)
    return _ret(0.5 * p.gamma * np.asarray(theta) * g2 + f_value(phi, theta, p))


def entropy_density(phi, grad_phi, theta, p):
    g2 = np.sum(np.asarray(grad_phi, dtype=float) ** 2, axis=-1)
    return _ret(-0.5 * p.gamma * g2 - df_dtheta(phi, theta, p))


def internal_energy_density(phi, theta, p):
    theta = _check_theta(theta)
    return _ret(f_value(phi, theta, p) - theta * df_dtheta(phi, theta, p))


def validate_onsager(c):
    """Smallest eigenvalue of ``[[K, -C], [-C, M]]``; raises unless positive."""
    if not (c.M > 0 and c.K > 0):
        raise ValueError(f"mobility and heat conductivity must be positive, got M={c.M}, K={c.K}")
    lam0 = 0.5 * (c.K + c.M) - np.hypot(0.5 * (c.K - c.M), c.C)
    if not lam0 > 0 or c.K * c.M - c.C**2 <= 0:
        raise ValueError(
            f"Onsager matrix is not positive definite: K*M - C^2 = {c.K * c.M - c.C**2:.3e}"
        )
    return float(lam0)
