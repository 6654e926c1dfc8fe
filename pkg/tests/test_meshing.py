import math

import numpy as np
import pytest
from scipy import integrate

from sbiwss.geometry import BoundaryTag, GeometrySpec
from sbiwss.meshing import (
    check_jacobians,
    elevate_order,
    generate_mesh,
    mesh_from_geometry,
    read_mesh,
    write_mesh,
)

from conftest import H_COARSE, H_FINE, H_MEDIUM


@pytest.fixture(scope="module")
def linear_coarse(stenosis):
    return generate_mesh(stenosis, H_COARSE)


@pytest.fixture(scope="module")
def cubic_coarse(coarse_space):
    return coarse_space.mesh


def test_quality_and_orientation(linear_coarse):
    assert linear_coarse.quality().min() >= 0.5
    assert linear_coarse.p_geo == 1
    v = linear_coarse.nodes[linear_coarse.elements]
    a, b = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    assert (cross > 0).all()


def test_straight_channel_quality(channel):
    m = generate_mesh(channel, channel.B0 / 2)
    assert m.quality().min() >= 0.8


def test_element_counts_match_reference_meshes(stenosis):
    counts = [generate_mesh(stenosis, h).n_elements for h in (H_COARSE, H_MEDIUM, H_FINE)]
    # the reference meshes have 368, 766 and 1590 elements; ratios near 1:2:4
    assert counts[0] < counts[1] < counts[2]
    assert abs(counts[2] / 1590 - 1) <= 0.10
    assert 1.6 <= counts[1] / counts[0] <= 2.8
    assert 1.6 <= counts[2] / counts[1] <= 2.8


def test_halving_h_quadruples_elements(stenosis):
    n1 = generate_mesh(stenosis, 0.12).n_elements
    n2 = generate_mesh(stenosis, 0.06).n_elements
    assert 3.0 <= n2 / n1 <= 5.0


def test_h_must_resolve_throat(stenosis):
    with pytest.raises(ValueError):
        generate_mesh(stenosis, 0.2)


def test_boundary_tags_partition(linear_coarse, stenosis):
    m = linear_coarse
    assert len(m.boundary_tags) == len(m.boundary_edges)
    mid = 0.5 * (m.nodes[m.boundary_edges[:, 0]] + m.nodes[m.boundary_edges[:, -1]])
    inflow = m.boundary_tags == BoundaryTag.INFLOW
    outflow = m.boundary_tags == BoundaryTag.OUTFLOW
    np.testing.assert_allclose(mid[inflow, 0], 0.0, atol=1e-12)
    np.testing.assert_allclose(mid[outflow, 0], 6.0, atol=1e-12)
    # each end spans the full diameter
    L_in = np.abs(np.diff(m.nodes[m.boundary_edges[inflow][:, [0, -1]], 1], axis=1)).sum()
    assert L_in == pytest.approx(2 * stenosis.y(0.0), rel=1e-12)


def test_cubic_wall_nodes_on_curve(cubic_coarse, stenosis):
    m = cubic_coarse
    wall = m.boundary_edges[m.boundary_tags == BoundaryTag.WALL].ravel()
    p = m.nodes[np.unique(wall)]
    assert np.abs(np.abs(p[:, 1]) - stenosis.y(p[:, 0])).max() < 1e-10


def test_cubic_jacobians_positive(cubic_coarse):
    check_jacobians(cubic_coarse)


def test_area_converges(stenosis):
    want = integrate.quad(lambda x: 2 * float(stenosis.y(x)), 0, 6, epsabs=1e-13)[0]
    lin = generate_mesh(stenosis, H_COARSE)
    assert abs(lin.element_areas().sum() / want - 1) < 5e-3
    cub = elevate_order(lin, stenosis)
    assert abs(cub.element_areas().sum() / want - 1) < 1e-6


def test_boundary_arc_length(cubic_coarse, stenosis):
    m = cubic_coarse
    f = lambda x: math.sqrt(1 + float(stenosis.dy(x)) ** 2)  # noqa: E731
    want = 2 * integrate.quad(f, 0, 6, epsabs=1e-12, limit=200)[0]
    from sbiwss.quadrature import gauss_legendre
    from sbiwss.fem.basis import lagrange_basis

    xg, wg = gauss_legendre(8)
    # cubic edge interpolation through the 4 edge nodes, equispaced in t
    tn = np.array([0, 1 / 3, 2 / 3, 1])
    V = np.vander(tn, 4, increasing=True)
    C = np.linalg.solve(V, np.eye(4))
    dV = np.column_stack([np.zeros_like(xg), np.ones_like(xg), 2 * xg, 3 * xg**2])
    total = 0.0
    for row in m.boundary_edges[m.boundary_tags == BoundaryTag.WALL]:
        X = m.nodes[row[[0, 2, 3, 1]]]  # endpoints first, then interior nodes
        d = dV @ C @ X
        total += wg @ np.linalg.norm(d, axis=1)
    assert total == pytest.approx(want, rel=1e-3)
    assert lagrange_basis(3).size == 10


def test_straight_elevation_is_affine(channel):
    lin = generate_mesh(channel, 0.15)
    cub = elevate_order(lin, channel)
    from sbiwss.meshing import P3_REF_NODES

    v = lin.nodes[lin.elements]
    aff = v[:, :1] + np.einsum("qk,ekj->eqj", P3_REF_NODES, v[:, 1:] - v[:, :1])
    np.testing.assert_allclose(cub.nodes[cub.elements], aff, atol=1e-13)


def test_conforming_shared_edges(cubic_coarse):
    m = cubic_coarse
    # local edge node sequences of the P3 layout
    edges = [(0, 3, 4, 1), (1, 5, 6, 2), (2, 7, 8, 0)]
    seen = {}
    for el in m.elements:
        for e in edges:
            seq = tuple(el[list(e)])
            key = frozenset((seq[0], seq[-1]))
            if key in seen:
                assert seen[key] == seq[::-1]
            else:
                seen[key] = seq


def test_round_trip_lossless(cubic_coarse, tmp_path):
    f = tmp_path / "mesh.txt"
    write_mesh(cubic_coarse, f)
    m2 = read_mesh(f)
    np.testing.assert_array_equal(m2.nodes, cubic_coarse.nodes)
    np.testing.assert_array_equal(m2.elements, cubic_coarse.elements)
    np.testing.assert_array_equal(m2.boundary_edges, cubic_coarse.boundary_edges)
    np.testing.assert_array_equal(m2.boundary_tags, cubic_coarse.boundary_tags)
    assert m2.p_geo == 3


def test_generation_is_deterministic(stenosis):
    a = mesh_from_geometry(stenosis, H_COARSE)
    b = mesh_from_geometry(GeometrySpec(), H_COARSE)
    np.testing.assert_array_equal(a.nodes, b.nodes)
