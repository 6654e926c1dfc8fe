import numpy as np
import pytest

from sbiwss.fem.evaluate import (
    LocationError,
    compute_wss,
    discrete_wall_samples,
    evaluate_pressure,
    evaluate_velocity,
    evaluate_velocity_gradient,
    wall_traction_terms,
)
from sbiwss.fem.navier_stokes import (
    FlowSolution,
    FluidProps,
    NavierStokesProblem,
    inflow_profile,
    read_solution,
    reynolds_to_theta,
    solve_steady_ns,
    theta_to_reynolds,
    write_solution,
)
from sbiwss.geometry import BoundaryTag, GeometrySpec
from sbiwss.metrics import build_gamma
from sbiwss.quadrature import gauss_legendre

MU = 1060 * 2.83e-6


def test_inflow_profile_examples():
    th = 3.7
    np.testing.assert_allclose(inflow_profile([0.3, -0.3], th, 0.3), [[0, 0], [0, 0]], atol=1e-15)
    np.testing.assert_allclose(inflow_profile(0.0, th, 0.3), [th, 0])
    np.testing.assert_allclose(inflow_profile(0.15, th, 0.3), [0.75 * th, 0], rtol=1e-15)


def test_reynolds_to_theta(stenosis, props):
    assert reynolds_to_theta(1000, stenosis, props) == pytest.approx(47.1666666667, rel=1e-10)
    assert reynolds_to_theta(100, stenosis, props) == pytest.approx(4.71666666667, rel=1e-10)
    wide = GeometrySpec(B0=0.6)
    assert reynolds_to_theta(1000, wide, props) == pytest.approx(
        0.5 * reynolds_to_theta(1000, stenosis, props), rel=1e-15
    )
    assert theta_to_reynolds(47.1666666667, stenosis, props) == pytest.approx(1000, rel=1e-10)
    with pytest.raises(ValueError):
        reynolds_to_theta(0, stenosis, props)


def test_fluid_props():
    assert FluidProps().mu_dyn == pytest.approx(MU, rel=1e-15)
    with pytest.raises(ValueError):
        FluidProps(rho0=-1)


def test_poiseuille_exact(poiseuille, channel):
    sol = poiseuille
    th = sol.theta
    exact = inflow_profile(sol.space.mesh.nodes[:, 1], th, channel.B0)
    assert np.abs(sol.velocity - exact).max() / th < 1e-10
    # pressure linear in x1 with slope -2 nu theta / B0^2 (cm units), zero at the outflow
    nu = sol.props.nu_cgs
    x = sol.space.pressure_nodes[:, 0]
    p_exact = 2 * nu * th / channel.B0**2 * (6.0 - x)
    assert np.abs(sol.pressure - p_exact).max() < 1e-9 * p_exact.max()


def test_poiseuille_point_evaluation(poiseuille, channel):
    th = poiseuille.theta
    pts = np.array([[0.7, 0.0], [2.31, 0.0], [5.2, 0.0]])
    np.testing.assert_allclose(evaluate_velocity(poiseuille, pts), [[th, 0]] * 3, rtol=1e-10, atol=1e-10)
    wall = np.array([[1.3, channel.B0], [4.4, channel.B0]])
    G = evaluate_velocity_gradient(poiseuille, wall)
    np.testing.assert_allclose(G[:, 0, 1], -2 * th / channel.B0, rtol=1e-10)


def test_poiseuille_wss(poiseuille, channel):
    gam = build_gamma(channel, (0.0, 6.0, -1, 1), 40)
    w = compute_wss(poiseuille, gam).wss
    want = MU * 2 * poiseuille.theta / channel.B0
    assert want == pytest.approx(0.9433, abs=1e-4)
    np.testing.assert_allclose(w, want, rtol=1e-8)


def test_zero_flow(coarse_space, props):
    sol = solve_steady_ns(coarse_space, props, 0.0)
    assert np.abs(sol.velocity).max() == 0
    assert np.abs(sol.pressure).max() < 1e-12
    gam = build_gamma(coarse_space.geom, (1.5, 4.5, -1, 1), 20)
    assert np.abs(compute_wss(sol, gam).wss).max() == 0


def test_gradient_matches_finite_differences(coarse_re100):
    rng = np.random.default_rng(3)
    g = coarse_re100.space.geom
    x = rng.uniform(0.5, 5.5, 12)
    y = rng.uniform(-0.6, 0.6, 12) * g.y(x) * 0.9
    p = np.column_stack([x, y])
    h = 1e-5
    G = evaluate_velocity_gradient(coarse_re100, p)
    for j, e in enumerate(np.eye(2)):
        fd = (evaluate_velocity(coarse_re100, p + h * e) - evaluate_velocity(coarse_re100, p - h * e)) / (2 * h)
        # O(h^2) truncation, plus round-off of order eps*|u|/h
        assert np.abs(fd - G[:, :, j]).max() < 1e-5 * np.abs(G).max()


def test_constant_velocity_has_zero_gradient(coarse_space, props):
    n = coarse_space.n_nodes
    U = np.tile([1.5, -0.5], (n, 1))
    sol = FlowSolution(coarse_space, props, U, np.zeros(coarse_space.n_pressure), 0.0, 0.0)
    G = evaluate_velocity_gradient(sol, [[1.0, 0.1], [3.0, -0.15], [5.0, 0.0]])
    assert np.abs(G).max() < 1e-12


def test_location_error(coarse_re100):
    with pytest.raises(LocationError):
        evaluate_velocity(coarse_re100, [[3.0, 0.29]])  # above the throat wall


def test_boundary_conditions_hold(coarse_re100):
    sol = coarse_re100
    sp = sol.space
    assert np.abs(sol.velocity[sp.wall_nodes]).max() == 0
    want = sp.geom.inflow_velocity(sp.mesh.nodes[sp.inflow_nodes], sol.theta)
    np.testing.assert_array_equal(sol.velocity[sp.inflow_nodes], want)


def test_residual_below_tolerance(coarse_re100, props):
    pb = NavierStokesProblem(coarse_re100.space, props)
    R = pb.residual(coarse_re100.X, coarse_re100.theta)
    assert np.linalg.norm(R) <= 1e-12 * pb.residual_scale(coarse_re100.theta)


def _edge_flux(sol, tag):
    """Integral of u1 along the straight end edges with the given tag."""
    m = sol.space.mesh
    xg, wg = gauss_legendre(6)
    tn = np.array([0, 1 / 3, 2 / 3, 1])
    C = np.linalg.inv(np.vander(tn, 4, increasing=True))
    B = np.vander(xg, 4, increasing=True) @ C
    total = 0.0
    for row in m.boundary_edges[m.boundary_tags == tag]:
        r = row[[0, 2, 3, 1]]
        u = B @ sol.velocity[r, 0]
        dy = m.nodes[r[-1], 1] - m.nodes[r[0], 1]
        total += abs(dy) * (wg @ u)
    return total


def test_net_flux_vanishes(coarse_re100):
    q_in = _edge_flux(coarse_re100, BoundaryTag.INFLOW)
    q_out = _edge_flux(coarse_re100, BoundaryTag.OUTFLOW)
    # the inlet is slightly narrower than 2 B0 (Gaussian tail of the bump), and
    # the corner nodes carry no-slip values
    a, B0, th = float(coarse_re100.space.geom.y(0.0)), 0.3, coarse_re100.theta
    assert q_in == pytest.approx(th * (2 * a - 2 * a**3 / (3 * B0**2)), rel=1e-5)
    assert abs(q_out - q_in) <= 1e-8 * q_in


def test_traction_identity_and_pressure_invariance(coarse_re100, stenosis):
    gam = discrete_wall_samples(coarse_re100.space, build_gamma(stenosis, (1.5, 4.5, -1, 1), 60))
    full, noslip = wall_traction_terms(coarse_re100, gam.points, gam.normals)
    assert np.linalg.norm(full - noslip) / np.linalg.norm(full) < 1e-8
    w0 = compute_wss(coarse_re100, gam).wss
    shifted = FlowSolution(
        coarse_re100.space, coarse_re100.props, coarse_re100.velocity,
        coarse_re100.pressure + 123.4, coarse_re100.theta, 0.0,
    )
    w1 = compute_wss(shifted, gam).wss
    np.testing.assert_allclose(w1, w0, rtol=1e-12, atol=1e-14 * w0.max())


def test_stenosis_re1000(coarse_space, stenosis, props):
    th = reynolds_to_theta(1000, stenosis, props)
    sol = solve_steady_ns(coarse_space, props, th, tol=1e-12)
    assert sol.peak_speed > th
    gam = build_gamma(stenosis, (1.5, 4.5, -1, 1), 200)
    w = compute_wss(sol, gam).wss
    x_peak = gam.points[np.argmax(w), 0]
    assert abs(x_peak - stenosis.c) < stenosis.sigma_g


def test_solution_round_trip_and_determinism(coarse_re100, coarse_space, props, tmp_path):
    f = tmp_path / "sol.txt"
    write_solution(coarse_re100, f)
    back = read_solution(f, coarse_space)
    np.testing.assert_array_equal(back.velocity, coarse_re100.velocity)
    np.testing.assert_array_equal(back.pressure, coarse_re100.pressure)
    assert back.theta == coarse_re100.theta
    again = solve_steady_ns(coarse_space, props, coarse_re100.theta, tol=1e-12)
    np.testing.assert_array_equal(again.X, coarse_re100.X)


def test_pressure_evaluation(poiseuille, channel):
    nu = poiseuille.props.nu_cgs
    p = evaluate_pressure(poiseuille, [[1.0, 0.1], [4.0, -0.2]])
    want = 2 * nu * poiseuille.theta / channel.B0**2 * (6.0 - np.array([1.0, 4.0]))
    np.testing.assert_allclose(p, want, rtol=1e-9)
