import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import jacobian_fd_error, random_interior_state
from thermoch import thermo
from thermoch.fem import mass_matrix, stiffness_matrix
from thermoch.mesh import build_periodic_unit_square_mesh
from thermoch.scheme import (
    SchemeConfig,
    State,
    initial_state,
    jacobian,
    residual,
    solve_timestep,
    theta0,
    trans,
)
from thermoch.thermo import NonpositiveTemperature, OnsagerCoeffs


@pytest.fixture(scope="module")
def mesh():
    return build_periodic_unit_square_mesh(4)


def _constant_state(mesh, phi, theta, cfg):
    N = mesh.num_nodes
    mu = thermo.df_dphi(phi, theta, cfg.potential)
    return State(np.full(N, phi), np.full(N, mu), np.full(N, theta))


def test_constant_state_is_stationary(mesh):
    cfg = SchemeConfig(tau=1e-2)
    for phi, theta in ((0.6, 4.0), (0.3, 2.0), (0.5, 3.0)):
        x = _constant_state(mesh, phi, theta, cfg)
        assert np.abs(residual(mesh, x, x, cfg)).max() <= 1e-13


def test_phase_block_sums_to_mass_increment(mesh):
    rng = np.random.default_rng(0)
    cfg = SchemeConfig(tau=0.05)
    old = random_interior_state(mesh, rng)
    new = random_interior_state(mesh, rng)
    N = mesh.num_nodes
    R = residual(mesh, new, old, cfg)
    Mm = mass_matrix(mesh, cfg.quad)
    inc = np.ones(N) @ (Mm @ (new.phi - old.phi)) / cfg.tau
    assert R[:N].sum() == pytest.approx(inc, abs=1e-13)


def test_mu_perturbation_gives_mass_column(mesh):
    rng = np.random.default_rng(1)
    cfg = SchemeConfig(tau=0.05)
    old = random_interior_state(mesh, rng)
    new = random_interior_state(mesh, rng)
    N = mesh.num_nodes
    Mm = mass_matrix(mesh, cfg.quad).toarray()
    delta, node = 0.37, 5
    mu2 = new.mu.copy()
    mu2[node] += delta
    d = residual(mesh, State(new.phi, mu2, new.theta), old, cfg) - residual(mesh, new, old, cfg)
    np.testing.assert_allclose(d[N : 2 * N], Mm[:, node] * delta, atol=1e-15)


def test_jacobian_mu_block_is_mass_matrix(mesh):
    rng = np.random.default_rng(2)
    cfg = SchemeConfig(tau=0.05)
    old = random_interior_state(mesh, rng)
    new = random_interior_state(mesh, rng)
    N = mesh.num_nodes
    J = jacobian(mesh, new, old, cfg)
    Mm = mass_matrix(mesh, cfg.quad)
    assert abs(J[N : 2 * N, N : 2 * N] - Mm).max() <= 1e-15


def test_jacobian_entropy_temperature_block_at_constant_state(mesh):
    cfg = SchemeConfig(tau=0.02)
    x = _constant_state(mesh, 0.6, 4.0, cfg)
    N = mesh.num_nodes
    J = jacobian(mesh, x, x, cfg)
    # heat capacity term plus the conduction term, whose weight p/theta^2 does not vanish
    c, mu, th = cfg.onsager, float(x.mu[0]), 4.0
    p = (c.K - 2 * c.C * mu + c.M * mu**2) / th
    ref = (cfg.potential.b / th) * mass_matrix(mesh, cfg.quad) / cfg.tau + p / th**2 * stiffness_matrix(
        mesh, cfg.quad
    )
    assert abs(J[2 * N :, 2 * N :] - ref).max() <= 1e-13
    # the capacity part alone is recovered against constant vectors
    ones = np.ones(N)
    np.testing.assert_allclose(J[2 * N :, 2 * N :] @ ones, ref @ ones, atol=1e-13)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("C", [1e-4, 0.0])
def test_jacobian_matches_finite_differences(mesh, seed, C):
    rng = np.random.default_rng(seed)
    cfg = SchemeConfig(tau=0.01, onsager=OnsagerCoeffs(C=C))
    old = random_interior_state(mesh, rng)
    new = random_interior_state(mesh, rng)
    assert jacobian_fd_error(mesh, new, old, cfg) <= 1e-5


def test_constant_state_newton(mesh):
    cfg = SchemeConfig(tau=1e-3)
    x = _constant_state(mesh, 0.6, 4.0, cfg)
    out, stats = solve_timestep(mesh, x, cfg)
    assert stats.newton_iterations <= 2
    assert stats.final_residual_norm <= cfg.newton_tol
    for a, b in ((out.phi, x.phi), (out.mu, x.mu), (out.theta, x.theta)):
        assert np.abs(a - b).max() <= 1e-12
    assert out.time == pytest.approx(1e-3)


def test_step_conserves_mass_and_produces_entropy():
    m = build_periodic_unit_square_mesh(8)
    cfg = SchemeConfig(tau=1e-3)
    x = initial_state(m, "convergence", center=(0.5, 0.5))
    out, stats = solve_timestep(m, x, cfg)
    assert stats.final_residual_norm <= cfg.newton_tol
    Mm = mass_matrix(m, cfg.quad)
    assert abs(np.sum(Mm @ (out.phi - x.phi))) <= 1e-12 * cfg.tau
    # Newton converges quadratically: final ratios shrink
    h = stats.residual_history
    assert h[-1] < h[-2] < h[0]
    assert stats.theta_min > 0


def test_entropy_rows_are_balanced_at_exit():
    # with 1024 nodes a nodewise residual of 5e-13 used to sum to 1e-10 here
    m = build_periodic_unit_square_mesh(32)
    cfg = SchemeConfig(tau=1e-3, onsager=OnsagerCoeffs(M=1.0))
    N = m.num_nodes
    x = initial_state(m, "illustration")
    for _ in range(12):
        out, stats = solve_timestep(m, x, cfg)
        R = residual(m, out, x, cfg)
        assert np.abs(R).max() <= cfg.newton_tol
        assert abs(R[2 * N :].sum()) <= cfg.newton_tol
        x = out


def test_solve_is_deterministic():
    m = build_periodic_unit_square_mesh(8)
    cfg = SchemeConfig(tau=1e-3)
    x = initial_state(m, "convergence")
    a, _ = solve_timestep(m, x, cfg)
    b, _ = solve_timestep(m, x, cfg)
    assert np.array_equal(a.pack(), b.pack())


def test_rejects_nonpositive_temperature(mesh):
    cfg = SchemeConfig(tau=0.01)
    x = _constant_state(mesh, 0.6, 4.0, cfg)
    th = x.theta.copy()
    th[3] = -0.1
    bad = State(x.phi, x.mu, th)
    with pytest.raises(NonpositiveTemperature):
        residual(mesh, bad, x, cfg)
    with pytest.raises(NonpositiveTemperature):
        jacobian(mesh, bad, x, cfg)
    with pytest.raises(NonpositiveTemperature):
        solve_timestep(mesh, bad, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(tau=0.0)
    with pytest.raises(ValueError):
        SchemeConfig(tau=1e-3, newton_tol=-1.0)
    with pytest.raises(ValueError):
        SchemeConfig(tau=1e-3, onsager=OnsagerCoeffs(C=3e-2))


def test_initial_data_examples():
    assert trans(0.0) == 0.5
    assert theta0(0.0, 0.0) == pytest.approx(6.0 - 5.9 * trans(-0.2 / np.sqrt(0.001)))
    assert theta0(0.0, 0.0) == pytest.approx(5.99998, abs=1e-5)
    assert theta0(0.5, 0.5) == pytest.approx(0.1, abs=1e-4)
    assert theta0(0.5, 0.5) > 0.1
    # the profile is continuous across the periodic seam
    assert theta0(1.0 - 1e-9, 0.3) == pytest.approx(theta0(0.0, 0.3), abs=1e-6)
    assert theta0(0.5, 0.5, center=(0.5, 0.5)) == pytest.approx(theta0(0.0, 0.0))

    m = build_periodic_unit_square_mesh(8)
    x = initial_state(m, "convergence")
    assert np.all(x.phi == 0.6) and np.all(x.mu == 0.0)
    assert x.theta.min() >= 0.1 and x.theta.max() <= 6.0
    ill = initial_state(m, "illustration")
    assert np.abs(ill.phi - 0.5).max() <= 0.01 + 1e-15
    cus = initial_state(m, "custom", phi=lambda x, y: x, theta=lambda x, y: 1.0 + y)
    np.testing.assert_allclose(cus.theta, 1.0 + m.nodes[:, 1])
    with pytest.raises(ValueError):
        initial_state(m, "custom")
    with pytest.raises(ValueError):
        initial_state(m, "bogus")


def test_state_pack_roundtrip():
    rng = np.random.default_rng(3)
    x = random_interior_state(build_periodic_unit_square_mesh(3), rng, time=0.25)
    y = State.unpack(x.pack(), x.time)
    assert np.array_equal(x.pack(), y.pack()) and y.time == 0.25


@settings(max_examples=25, deadline=None)
@given(
    phi=st.floats(-0.3, 1.3),
    theta=st.floats(0.2, 6.0),
    tau=st.floats(1e-4, 1.0),
)
def test_constants_are_stationary_property(phi, theta, tau):
    m = build_periodic_unit_square_mesh(3)
    cfg = SchemeConfig(tau=tau)
    x = _constant_state(m, phi, theta, cfg)
    R = residual(m, x, x, cfg)
    assert np.abs(R).max() <= 1e-12 * max(1.0, abs(float(x.mu[0])))
