"""Unstructured triangle meshes: generation, P3 curving and plain-text I/O.

Linear meshes come from a DistMesh-style force-equilibrium iteration driven by
the geometry's signed distance.  ``elevate_order`` turns them into cubic
(10-node) meshes whose wall nodes sit on the exact wall.

Local node order of a cubic triangle: vertices 0, 1, 2; two nodes on each of
the edges 0->1, 1->2, 2->0 (in that direction); one interior node.
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy.spatial import Delaunay

from .geometry import BoundaryTag
from .quadrature import triangle_rule

log = logging.getLogger(__name__)

LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class MeshingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh of geometric order ``p_geo`` (1 or 3).

    ``boundary_edges`` rows hold the p_geo + 1 nodes of each boundary edge:
    the two endpoints, then the interior nodes starting from the first one; ``boundary_elements`` holds the owning element and
    its local edge index.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    boundary_elements: np.ndarray
    p_geo: int = 1

    def __post_init__(self):
        for name in ("nodes", "elements", "boundary_edges", "boundary_tags", "boundary_elements"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_vertices(self):
        return int(self.elements[:, :3].max()) + 1

    @property
    def vertices(self):
        return self.elements[:, :3]

    def element_areas(self, order=8):
        """Exact (isoparametric) element areas."""
        pts, w = triangle_rule(order)
        return (jacobian_dets(self, pts) * w).sum(axis=1)

    def edge_lengths(self):
        v = self.nodes[self.vertices]
        return np.linalg.norm(v[:, [1, 2, 0]] - v, axis=2)

    def quality(self):
        return radius_ratio(self.nodes, self.vertices)


# -- basic triangle measures -------------------------------------------------------


def radius_ratio(p, t):
    """2 r_in / r_circ per triangle (1 for equilateral)."""
    a = np.linalg.norm(p[t[:, 1]] - p[t[:, 2]], axis=1)
    b = np.linalg.norm(p[t[:, 2]] - p[t[:, 0]], axis=1)
    c = np.linalg.norm(p[t[:, 0]] - p[t[:, 1]], axis=1)
    return (b + c - a) * (c + a - b) * (a + b - c) / (a * b * c)


def _signed_area(p, t):
    d1 = p[t[:, 1]] - p[t[:, 0]]
    d2 = p[t[:, 2]] - p[t[:, 0]]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


# -- linear mesh generation --------------------------------------------------------


def _boundary_edges(t):
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    owner = np.tile(np.arange(len(t)), 3)
    local = np.repeat(np.arange(3), len(t))
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    once = counts[inv] == 1
    return e[once], owner[once], local[once]


def _hex_lattice(bbox, h):
    """Staggered lattice whose rows and columns fit the box exactly."""
    x0, x1, y0, y1 = bbox
    nx = max(1, int(round((x1 - x0) / h)))
    ny = max(1, int(round((y1 - y0) / (h * np.sqrt(3) / 2))))
    hx = (x1 - x0) / nx
    ys = np.linspace(y0, y1, ny + 1)
    pts = []
    for j, yv in enumerate(ys):
        xs = x0 + hx * np.arange(nx + 1)
        if j % 2:
            xs = xs[:-1] + 0.5 * hx
        pts.append(np.column_stack([xs, np.full_like(xs, yv)]))
    return np.vstack(pts)


def _distmesh(geom, h, max_iter, sizing=None):
    fd = geom.signed_distance
    geps = 1e-3 * h
    x0, x1, y0, y1 = geom.bbox
    pfix = np.asarray(geom.corners, dtype=float)
    p = _hex_lattice((x0, x1, y0, y1), h)
    p = p[fd(p) < geps]
    if sizing is not None:
        # rejection with a deterministic stream
        r0 = 1.0 / sizing(p) ** 2
        rng = np.random.default_rng(12345)
        p = p[rng.random(len(p)) < r0 / r0.max()]
    nfix = len(pfix)
    for _ in range(5):
        # free points crowding the fixed points produce slivers at corners
        if nfix:
            dfix = np.min(np.linalg.norm(p[:, None] - pfix[None], axis=2), axis=1)
            p = p[dfix > 0.5 * h]
        p = _distmesh_relax(fd, np.vstack([pfix, p]), nfix, h, max_iter, sizing)[nfix:]
        dfix = np.min(np.linalg.norm(p[:, None] - pfix[None], axis=2), axis=1)
        if not np.any(dfix <= 0.5 * h):
            break
    p = np.vstack([pfix, p])
    t = Delaunay(p).simplices
    t = t[fd(p[t].mean(axis=1)) < -geps]
    return p, t, nfix


def _distmesh_relax(fd, p, nfix, h, max_iter, sizing):
    dptol, ttol, Fscale, deltat = 1e-3, 0.1, 1.2, 0.2
    geps = 1e-3 * h
    deps = np.sqrt(np.finfo(float).eps) * h
    pold = np.full_like(p, np.inf)
    for it in range(max_iter):
        if np.max(np.linalg.norm(p - pold, axis=1)) / h > ttol:
            pold = p.copy()
            t = Delaunay(p).simplices
            pmid = p[t].mean(axis=1)
            t = t[fd(pmid) < -geps]
            bars = np.unique(
                np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1), axis=0
            )
        barvec = p[bars[:, 0]] - p[bars[:, 1]]
        L = np.linalg.norm(barvec, axis=1)
        hbars = np.ones(len(bars)) if sizing is None else sizing(0.5 * (p[bars[:, 0]] + p[bars[:, 1]]))
        L0 = hbars * Fscale * np.sqrt(np.sum(L**2) / np.sum(hbars**2))
        F = np.maximum(L0 - L, 0.0)
        Fvec = (F / L)[:, None] * barvec
        Ftot = np.zeros_like(p)
        np.add.at(Ftot, bars[:, 0], Fvec)
        np.add.at(Ftot, bars[:, 1], -Fvec)
        Ftot[:nfix] = 0.0
        p = p + deltat * Ftot
        d = fd(p)
        ix = d > 0
        if ix.any():
            q = p[ix]
            dgx = (fd(q + [deps, 0]) - d[ix]) / deps
            dgy = (fd(q + [0, deps]) - d[ix]) / deps
            g2 = dgx**2 + dgy**2
            p[ix] = q - (d[ix] / g2)[:, None] * np.column_stack([dgx, dgy])
        move = np.sqrt(np.sum((deltat * Ftot[d < -geps]) ** 2, axis=1))
        if move.size == 0 or np.max(move) / h < dptol:
            break
    else:
        log.info("distmesh reached max_iter=%d", max_iter)
    return p


def _snap_boundary_vertices(geom, p, t):
    """Place boundary vertices exactly on the boundary."""
    bedges, _, _ = _boundary_edges(t)
    bnodes = np.unique(bedges)
    corners = np.asarray(geom.corners)
    q = p[bnodes]
    is_corner = np.min(np.linalg.norm(q[:, None] - corners[None], axis=2), axis=1) < 1e-12
    x0, x1, _, _ = geom.bbox
    q_new = q.copy()
    # straight inflow/outflow planes for the stenosis; polyline snapping via
    # nearest segment
    if hasattr(geom, "B0"):
        on_in = np.abs(q[:, 0] - x0) < 1e-6 * (x1 - x0)
        on_out = np.abs(q[:, 0] - x1) < 1e-6 * (x1 - x0)
        q_new[on_in, 0] = x0
        q_new[on_out, 0] = x1
        wall = ~(on_in | on_out | is_corner)
        if wall.any():
            q_new[wall] = geom.snap(q[wall])
    else:
        q_new[~is_corner] = geom._closest(q[~is_corner])[0]
    p = p.copy()
    p[bnodes] = q_new
    return p


def generate_mesh(geom, h, max_iter=2000, min_quality=0.5, sizing=None):
    """Linear triangle mesh of ``geom`` with target edge length ``h`` (cm)."""
    if hasattr(geom, "throat_half_width") and not h < geom.throat_half_width:
        raise ValueError("h must be smaller than the throat half-width")
    p, t, _ = _distmesh(geom, h, max_iter, sizing=sizing)
    p = _snap_boundary_vertices(geom, p, t)
    # drop unused nodes, orient counter-clockwise
    used = np.unique(t)
    remap = -np.ones(len(p), dtype=int)
    remap[used] = np.arange(len(used))
    p = p[used]
    t = remap[t]
    neg = _signed_area(p, t) < 0
    t[neg] = t[neg][:, [0, 2, 1]]
    q = radius_ratio(p, t)
    if q.min() < min_quality:
        raise MeshingError(
            f"mesh quality {q.min():.3f} below threshold {min_quality} "
            f"(element {int(np.argmin(q))})"
        )
    bedges, owner, local = _boundary_edges(t)
    tags = geom.classify(0.5 * (p[bedges[:, 0]] + p[bedges[:, 1]]))
    order = np.lexsort((local, owner))
    return Mesh(
        nodes=p,
        elements=t,
        boundary_edges=bedges[order],
        boundary_tags=np.asarray(tags, dtype=int)[order],
        boundary_elements=np.column_stack([owner, local])[order],
        p_geo=1,
    )


# -- cubic elevation -------------------------------------------------------------


P3_REF_NODES = np.array(
    [
        [0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
        [1 / 3, 0.0], [2 / 3, 0.0],
        [2 / 3, 1 / 3], [1 / 3, 2 / 3],
        [0.0, 2 / 3], [0.0, 1 / 3],
        [1 / 3, 1 / 3],
    ]
)


def _edge_table(tri):
    """Unique edges of a linear connectivity and, per element edge, the edge id
    and whether the element traverses it in the stored direction."""
    e = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1)  # (ne,3,2)
    key = np.sort(e.reshape(-1, 2), axis=1)
    edges, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(len(tri), 3)
    forward = e[:, :, 0] < e[:, :, 1]
    return edges, inv, forward


def elevate_order(mesh, geom, p_geo=3):
    """Cubic mesh with wall edge nodes projected onto the exact wall."""
    if p_geo == 1:
        return mesh
    if p_geo != 3:
        raise ValueError("only p_geo in {1, 3} is supported")
    if mesh.p_geo != 1:
        raise ValueError("input must be a linear mesh")
    tri = mesh.elements
    p = mesh.nodes
    nv = len(p)
    edges, inv, forward = _edge_table(tri)
    ne = len(edges)
    a, b = p[edges[:, 0]], p[edges[:, 1]]
    edge_nodes = np.stack([a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0], axis=1)  # (ne,2,2)

    # wall edges get their nodes projected onto the wall
    wall = mesh.boundary_tags == BoundaryTag.WALL
    bkey = np.sort(mesh.boundary_edges[:, :2], axis=1)
    bid = np.searchsorted(edges[:, 0] * (nv + 1) + edges[:, 1], bkey[:, 0] * (nv + 1) + bkey[:, 1])
    wall_ids = bid[wall]
    if wall_ids.size:
        flat = edge_nodes[wall_ids].reshape(-1, 2)
        edge_nodes[wall_ids] = geom.snap(flat).reshape(-1, 2, 2)

    nodes = np.vstack([p, edge_nodes.reshape(-1, 2)])
    elems = np.empty((len(tri), 10), dtype=int)
    elems[:, :3] = tri
    for k in range(3):
        first = nv + 2 * inv[:, k]
        second = first + 1
        elems[:, 3 + 2 * k] = np.where(forward[:, k], first, second)
        elems[:, 4 + 2 * k] = np.where(forward[:, k], second, first)

    # interior node reproducing quadratic element maps
    X = nodes[elems[:, :9]]
    centre = 0.25 * X[:, 3:9].sum(axis=1) - X[:, :3].sum(axis=1) / 6.0
    elems[:, 9] = len(nodes) + np.arange(len(tri))
    nodes = np.vstack([nodes, centre])

    bedges = np.empty((len(mesh.boundary_edges), 4), dtype=int)
    for i, (el, k) in enumerate(mesh.boundary_elements):
        loc = LOCAL_EDGES[k]
        bedges[i] = [elems[el, loc[0]], elems[el, loc[1]], elems[el, 3 + 2 * k], elems[el, 4 + 2 * k]]
    curved = Mesh(
        nodes=nodes,
        elements=elems,
        boundary_edges=bedges,
        boundary_tags=mesh.boundary_tags.copy(),
        boundary_elements=mesh.boundary_elements.copy(),
        p_geo=3,
    )
    check_jacobians(curved)
    return curved


def jacobian_dets(mesh, ref_pts):
    from .fem.basis import lagrange_basis

    basis = lagrange_basis(mesh.p_geo)
    _, dphi = basis.eval(ref_pts)  # (nq, nloc, 2)
    X = mesh.nodes[mesh.elements]  # (ne, nloc, 2)
    J = np.einsum("eai,qaj->eqij", X, dphi)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def check_jacobians(mesh, order=6):
    pts, _ = triangle_rule(order)
    det = jacobian_dets(mesh, np.vstack([pts, P3_REF_NODES]))
    bad = np.flatnonzero(det.min(axis=1) <= 0)
    if bad.size:
        raise MeshingError(
            f"non-positive Jacobian after curving in element(s) {bad[:10].tolist()}"
        )


def mesh_from_geometry(geom, h, p_geo=3, **kw):
    return elevate_order(generate_mesh(geom, h, **kw), geom, p_geo)


# -- serialization ----------------------------------------------------------------


def write_mesh(mesh, path):
    """Plain-text mesh with 17-significant-digit coordinates (lossless)."""
    with open(path, "w") as fh:
        fh.write("sbiwss-mesh 1\n")
        fh.write(f"{len(mesh.nodes)} {len(mesh.elements)} {len(mesh.boundary_edges)} {mesh.p_geo}\n")
        fh.write("nodes\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write("elements\n")
        for row in mesh.elements:
            fh.write(" ".join(map(str, row)) + "\n")
        fh.write("boundary\n")
        for tag, (el, k), row in zip(mesh.boundary_tags, mesh.boundary_elements, mesh.boundary_edges):
            fh.write(f"{BoundaryTag(tag).name} {el} {k} " + " ".join(map(str, row)) + "\n")


def read_mesh(path):
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    if not next(lines).startswith("sbiwss-mesh"):
        raise ValueError(f"{path}: not a mesh file")
    nn, nel, nb, p_geo = map(int, next(lines).split())
    assert next(lines) == "nodes"
    nodes = np.array([[float(v) for v in next(lines).split()] for _ in range(nn)])
    assert next(lines) == "elements"
    elems = np.array([[int(v) for v in next(lines).split()] for _ in range(nel)], dtype=int)
    assert next(lines) == "boundary"
    tags, owners, bedges = [], [], []
    for _ in range(nb):
        parts = next(lines).split()
        tags.append(int(BoundaryTag[parts[0]]))
        owners.append((int(parts[1]), int(parts[2])))
        bedges.append([int(v) for v in parts[3:]])
    return Mesh(
        nodes=nodes.reshape(nn, 2),
        elements=elems.reshape(nel, -1),
        boundary_edges=np.array(bedges, dtype=int).reshape(nb, -1),
        boundary_tags=np.array(tags, dtype=int),
        boundary_elements=np.array(owners, dtype=int).reshape(nb, 2),
        p_geo=p_geo,
    )
