import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbiwss.fem.navier_stokes import inflow_profile
from sbiwss.metrics import build_gamma
from sbiwss.mri_synth import PsfOperator, VoxelData, VoxelGrid, sample_psf
from sbiwss.mri_wss import (
    BilinearField,
    ProbeError,
    bilinear_reconstruct,
    delta_rule,
    mri_wss_profile,
    normal_velocity_derivative,
    tangential_part,
)
from sbiwss.profile import WallSamples

MU = 1060 * 2.83e-6


def full_grid(nx=12, ny=8, dx=0.05, dy=0.04):
    g = VoxelGrid(nx, ny, dx, dy, 1.0, -0.2)
    return g.with_mask(np.ones(g.n, bool))


def linear_data(g, A, b):
    return VoxelData(g, g.centroids @ A.T + b)


def direct_poiseuille(geom, vpd, theta):
    """Voxel data that samples the parabola at the centroids, without blur."""
    g = VoxelGrid.for_vessel(geom, vpd, (1.5, 4.5, -0.4, 0.4))
    c = g.centroids
    v = inflow_profile(c[:, 1], theta, geom.B0)
    v[np.abs(c[:, 1]) > geom.B0] = 0.0
    return VoxelData(g, v)


class Profile1D(BilinearField):
    """Probe field that returns a prescribed function of the wall distance."""

    def __init__(self, x, n, f):
        self.x, self.n, self.f = np.asarray(x, float), np.asarray(n, float), f

    def __call__(self, p):
        r = (self.x - np.atleast_2d(p)) @ self.n
        return self.f(r), np.zeros(len(r), bool)


def test_delta_rule_examples():
    assert delta_rule(0.2 / 3, 0.2 / 3) == pytest.approx(0.072, abs=1e-15)
    assert delta_rule(0.04, 0.04) == pytest.approx(0.048, abs=1e-15)
    assert delta_rule(0.02, 0.03) == pytest.approx(0.024, abs=1e-15)


def test_exact_at_centroids():
    g = full_grid()
    rng = np.random.default_rng(0)
    d = VoxelData(g, rng.standard_normal((g.n, 2)))
    np.testing.assert_array_equal(bilinear_reconstruct(d, g.centroids), d.values)


def test_midpoint_average():
    g = full_grid()
    rng = np.random.default_rng(1)
    vals = np.repeat(rng.standard_normal((g.nx, 2))[None], g.ny, axis=0).reshape(-1, 2)
    d = VoxelData(g, vals)
    c = g.centroids
    i = 3 * g.nx + 5
    mid = 0.5 * (c[i] + c[i + 1])
    np.testing.assert_allclose(bilinear_reconstruct(d, mid)[0], 0.5 * (vals[i] + vals[i + 1]), rtol=1e-13)


def test_linear_reproduction():
    g = full_grid()
    A = np.array([[1.3, -0.7], [0.4, 2.1]])
    b = np.array([0.25, -1.0])
    d = linear_data(g, A, b)
    rng = np.random.default_rng(2)
    c = g.centroids
    p = rng.uniform(c.min(0), c.max(0), size=(200, 2))
    np.testing.assert_allclose(bilinear_reconstruct(d, p), p @ A.T + b, rtol=0, atol=1e-12)


def test_empty_cell_raises_and_flags():
    g = VoxelGrid(6, 6, 0.1, 0.1, 0.0, 0.0)
    mask = np.zeros((6, 6), bool)
    mask[:2, :2] = mask[4:, 4:] = True
    g = g.with_mask(mask.ravel())
    d = VoxelData(g, np.ones((g.n, 2)))
    with pytest.raises(ProbeError):
        bilinear_reconstruct(d, [[0.3, 0.3]])
    v, bad = BilinearField(d)([[0.3, 0.3], [0.1, 0.1]])
    assert list(bad) == [True, False]
    assert np.all(v[0] == 0)
    # probes beyond the hull of masked centroids are clamped onto it
    np.testing.assert_array_equal(bilinear_reconstruct(d, [[-5.0, -5.0]]), [[1.0, 1.0]])


def test_quadratic_profile_exact():
    x = np.array([[2.0, 0.3]])
    n = np.array([[0.6, 0.8]])
    a, b = np.array([3.0, -1.2]), np.array([5.0, 0.7])
    f = lambda r: a[None] * r[:, None] + b[None] * r[:, None] ** 2  # noqa: E731
    for delta in (0.01, 0.05, 0.2):
        d, flags = normal_velocity_derivative(Profile1D(x[0], n[0], f), x, n, delta)
        np.testing.assert_allclose(d[0], a, rtol=1e-12)
        assert not flags.any()


def test_zero_data_gives_zero(stenosis, props):
    g = VoxelGrid.for_vessel(stenosis, 9, (1.5, 4.5, -0.4, 0.4))
    d = VoxelData(g, np.zeros((g.n, 2)))
    w = mri_wss_profile(d, build_gamma(stenosis, g.region, 40), props)
    assert np.all(w.wss == 0)
    assert not w.flags.any()


def test_tangential_projection_kills_normal():
    rng = np.random.default_rng(5)
    t = rng.uniform(0, 2 * np.pi, 30)
    n = np.column_stack([np.cos(t), np.sin(t)])
    v = rng.standard_normal((30, 2))
    c = rng.standard_normal(30)[:, None]
    np.testing.assert_allclose(tangential_part(v + c * n, n), tangential_part(v, n), atol=1e-14)
    assert np.abs(np.einsum("ni,ni->n", tangential_part(v, n), n)).max() < 1e-15


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
def test_scaling_by_data(a):
    g = full_grid(24, 16, 0.05, 0.05)
    rng = np.random.default_rng(7)
    d = VoxelData(g, rng.standard_normal((g.n, 2)))
    pts = g.centroids[[5 * 24 + 8, 9 * 24 + 11]] + 0.013
    s = WallSamples(np.array([0.0, 1.0]), pts, np.array([[0.0, 1.0], [0.6, 0.8]]))

    class P:
        mu_dyn = MU

    w1 = mri_wss_profile(d, s, P, delta=0.06).wss
    w2 = mri_wss_profile(VoxelData(g, a * d.values), s, P, delta=0.06).wss
    np.testing.assert_allclose(w2, abs(a) * w1, rtol=1e-12)


def test_poiseuille_derivative_sign(channel, poiseuille):
    th = poiseuille.theta
    d = direct_poiseuille(channel, 28, th)
    x = np.array([[3.0, channel.B0]])
    n = np.array([[0.0, 1.0]])
    der, _ = normal_velocity_derivative(d, x, n, delta_rule(d.grid.dx, d.grid.dy))
    # derivative with respect to the inward distance from the wall
    assert der[0, 0] == pytest.approx(2 * th / channel.B0, rel=0.02)
    assert abs(der[0, 1]) < 1e-12


@pytest.mark.parametrize("vpd", [15, 28])
def test_poiseuille_direct_sampling(channel, poiseuille, props, vpd):
    d = direct_poiseuille(channel, vpd, poiseuille.theta)
    w = mri_wss_profile(d, build_gamma(channel, d.grid.region, 60), props)
    want = MU * 2 * poiseuille.theta / channel.B0
    np.testing.assert_allclose(w.wss, want, rtol=0.05)
    assert np.ptp(w.wss) < 1e-12
    assert not w.flags.any()


def test_poiseuille_blurred_underestimates(channel_space, channel, poiseuille, props):
    want = MU * 2 * poiseuille.theta / channel.B0
    got = []
    for vpd in (15, 28):
        g = VoxelGrid.for_vessel(channel, vpd, (1.5, 4.5, -0.4, 0.4))
        d = sample_psf(poiseuille, PsfOperator(channel_space.mesh, g))
        w = mri_wss_profile(d, build_gamma(channel, g.region, 30), props)
        assert np.ptp(w.wss) < 1e-8 * want
        got.append(w.wss.mean())
    # blurring across the no-slip wall flattens the near-wall profile
    assert all(0.6 * want < v < want for v in got)
