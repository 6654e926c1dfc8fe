"""Synthetic MRI voxel data: voxel grid, point-spread sampling and noise.

A voxel ``i`` with centroid (X_i, Y_i) measures the velocity field through the
weight

    w_i(p) = Psi(p1, X_i, dx) Psi(p2, Y_i, dy) / (integral of the same over the domain)
    Psi(s, c, ds) = sinc((s - c)/ds) * chi(s, c, 4 ds)

where chi is a logistic-smoothed box.  The weight is truncated to
``|s - c| <= 2 ds`` in each direction.  Integrals over the domain use Gauss
quadrature on the mesh elements cut along the voxel lattice, so sampling a
nodal field is a sparse matrix-vector product.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .fem.basis import lagrange_basis
from .quadrature import triangle_rule

SUPPORT = 2.0  # half-width of the truncated support, in voxel spacings
MASK_THRESHOLD = 1e-6  # minimum normalization integral, relative to dx*dy


class GridError(ValueError):
    pass


def smoothed_box(s, s0, omega, gamma):
    """Logistic-smoothed indicator of [s0 - omega/2, s0 + omega/2]."""
    if not (omega > 0 and gamma > 0):
        raise ValueError("omega and gamma must be positive")
    s = np.asarray(s, dtype=float)
    # expit saturates instead of overflowing for large arguments
    return expit((s - (s0 - 0.5 * omega)) / gamma) - expit((s - (s0 + 0.5 * omega)) / gamma)


def psf_profile(s, c, ds, gamma, truncate=True):
    """One-dimensional factor sinc((s-c)/ds) * chi(s, c, 4 ds, gamma)."""
    s = np.asarray(s, dtype=float)
    z = (s - c) / ds
    val = np.sinc(z) * smoothed_box(s, c, 4.0 * ds, gamma)
    if truncate:
        val = np.where(np.abs(z) <= SUPPORT, val, 0.0)
    return val


@dataclass(frozen=True)
class VoxelGrid:
    """Uniform voxel lattice over a scan rectangle.

    Voxel ``i = iy * nx + ix`` has centroid ``(x0 + (ix + 1/2) dx, y0 + (iy + 1/2) dy)``.
    ``mask`` marks voxels that see the flow domain.
    """

    nx: int
    ny: int
    dx: float
    dy: float
    x0: float
    y0: float
    mask: np.ndarray = field(default=None, compare=False, repr=False)
    vpd: float = None

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise GridError("need at least 2 voxels per direction")
        if not (self.dx > 0 and self.dy > 0):
            raise GridError("voxel spacings must be positive")
        if self.mask is None:
            object.__setattr__(self, "mask", np.ones(self.nx * self.ny, dtype=bool))
        m = np.asarray(self.mask, dtype=bool).copy()
        if m.shape != (self.nx * self.ny,):
            raise GridError("mask length does not match the grid")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def for_vessel(cls, geom, vpd, region=None):
        """Grid with ``vpd`` voxels across the vessel diameter and square voxels.

        ``region`` is ``(x0, x1, y0, y1)``; the lattice is centred in it and
        the voxel mask is set from the geometry.
        """
        if not vpd > 0:
            raise GridError("voxels per diameter must be positive")
        if region is None:
            region = geom.bbox
        x0, x1, y0, y1 = map(float, region)
        if not (x1 > x0 and y1 > y0):
            raise GridError(f"degenerate scan region {region}")
        d = geom.diameter / vpd
        nx = max(2, int(round((x1 - x0) / d)))
        ny = max(2, int(round((y1 - y0) / d)))
        gx = 0.5 * (x0 + x1) - 0.5 * nx * d
        gy = 0.5 * (y0 + y1) - 0.5 * ny * d
        grid = cls(nx, ny, d, d, gx, gy, vpd=float(vpd))
        return grid.with_mask(grid.intersection_mask(geom))

    @property
    def n(self):
        return self.nx * self.ny

    @property
    def region(self):
        return (self.x0, self.x0 + self.nx * self.dx, self.y0, self.y0 + self.ny * self.dy)

    @property
    def xc(self):
        return self.x0 + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def yc(self):
        return self.y0 + (np.arange(self.ny) + 0.5) * self.dy

    @property
    def centroids(self):
        X, Y = np.meshgrid(self.xc, self.yc)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def gamma(self):
        return 0.1 * min(self.dx, self.dy)

    def intersection_mask(self, geom):
        c = self.centroids
        return geom.rect_intersects(
            c[:, 0] - 0.5 * self.dx, c[:, 0] + 0.5 * self.dx,
            c[:, 1] - 0.5 * self.dy, c[:, 1] + 0.5 * self.dy,
        )

    def with_mask(self, mask):
        return VoxelGrid(self.nx, self.ny, self.dx, self.dy, self.x0, self.y0, mask, self.vpd)

    def same_lattice(self, other):
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(
            [self.dx, self.dy, self.x0, self.y0], [other.dx, other.dy, other.x0, other.y0],
            rtol=0, atol=1e-14,
        )


def psf_weight(p, i, grid):
    """Unnormalized weight of voxel ``i`` at points ``p``."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    X, Y = grid.centroids[i]
    return psf_profile(p[:, 0], X, grid.dx, grid.gamma) * psf_profile(p[:, 1], Y, grid.dy, grid.gamma)


def _clip(poly, axis, value):
    """Split a convex polygon (k, 2) by the line x[axis] = value into (lower, upper)."""
    d = poly[:, axis] - value
    lo, hi = [], []
    k = len(poly)
    for a in range(k):
        b = (a + 1) % k
        pa, da, db = poly[a], d[a], d[b]
        if da <= 0:
            lo.append(pa)
        if da >= 0:
            hi.append(pa)
        if (da < 0 < db) or (db < 0 < da):
            t = da / (da - db)
            q = pa + t * (poly[b] - pa)
            q[axis] = value
            lo.append(q)
            hi.append(q)
    return (np.array(lo) if len(lo) >= 3 else None), (np.array(hi) if len(hi) >= 3 else None)


def _cut_lines(lo, hi, origin, step):
    j0 = math.floor((lo - origin) / step) + 1
    j1 = math.ceil((hi - origin) / step) - 1
    return origin + step * np.arange(j0, j1 + 1)


class PsfOperator:
    """Point-spread sampling of fields on a cubic mesh.

    Each element is cut along the lattice lines through voxel centroids and
    voxel faces, so the weights (whose kinks and logistic edges sit on those
    lines) are smooth on every quadrature piece.

    Parameters
    ----------
    mesh : Mesh
        Mesh with geometric order 3; nodal fields live on its nodes.
    grid : VoxelGrid
        Voxels with ``mask`` False are skipped.  Voxels whose normalization
        integral falls below ``MASK_THRESHOLD * dx * dy`` are removed from
        the mask of ``self.grid``.
    order : int
        Collapsed Gauss order on each piece (``order**2`` points).
    curved_subdiv : int
        Reference subdivision of curved elements before cutting; the cut
        lines are placed with the affine map of each sub-triangle.
    """

    def __init__(self, mesh, grid, order=8, curved_subdiv=4):
        if mesh.p_geo != 3:
            raise ValueError("PSF sampling needs a cubic mesh")
        self.mesh = mesh
        self.order = order
        self.curved_subdiv = curved_subdiv
        self._basis = lagrange_basis(3)
        self._curved = self._find_curved()
        rows, cols, vals, norm = self._build(grid)
        n = grid.n
        S = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(mesh.nodes)))
        keep = grid.mask & (norm >= MASK_THRESHOLD * grid.dx * grid.dy)
        self.grid = grid.with_mask(keep)
        self.dropped = np.flatnonzero(grid.mask & ~keep)
        self.norm = norm
        scale = np.zeros(n)
        scale[keep] = 1.0 / norm[keep]
        self.matrix = (sp.diags(scale) @ S).tocsr()  # rows outside the mask are zero

    def _find_curved(self):
        X = self.mesh.nodes[self.mesh.elements]
        lin, _ = lagrange_basis(1).eval(self._basis.nodes)
        affine = np.einsum("ab,ebi->eai", lin, X[:, :3])
        dev = np.abs(X - affine).max(axis=(1, 2))
        return dev > 1e-12 * np.ptp(self.mesh.nodes)

    def _pieces(self, grid, e):
        """Reference-space quadrature points and weights for element ``e``."""
        Xe = self.mesh.nodes[self.mesh.elements[e]]
        m = self.curved_subdiv if self._curved[e] else 1
        h = 1.0 / m
        subs = []
        for i in range(m):
            for j in range(m - i):
                v = np.array([[i, j], [i + 1, j], [i, j + 1]], float) * h
                subs.append(v)
                if i + j < m - 1:
                    subs.append(np.array([[i + 1, j + 1], [i, j + 1], [i + 1, j]], float) * h)
        lin, _ = self._basis.eval(np.vstack(subs))
        phys = (lin @ Xe).reshape(-1, 3, 2)
        tris = []
        for r, P in zip(subs, phys):
            M = np.column_stack([P[1] - P[0], P[2] - P[0]])
            T = np.column_stack([r[1] - r[0], r[2] - r[0]])
            to_ref = T @ np.linalg.inv(M)
            strips = [P]
            for xv in _cut_lines(P[:, 0].min(), P[:, 0].max(), grid.x0, 0.5 * grid.dx):
                nxt = []
                for poly in strips:
                    lo, hi = _clip(poly, 0, xv)
                    nxt += [q for q in (lo, hi) if q is not None]
                strips = nxt
            for poly in strips:
                cells = [poly]
                for yv in _cut_lines(poly[:, 1].min(), poly[:, 1].max(), grid.y0, 0.5 * grid.dy):
                    nxt = []
                    for c in cells:
                        lo, hi = _clip(c, 1, yv)
                        nxt += [q for q in (lo, hi) if q is not None]
                    cells = nxt
                for c in cells:
                    cr = r[0] + (c - P[0]) @ to_ref.T
                    for k in range(1, len(cr) - 1):
                        tris.append((cr[0], cr[k], cr[k + 1]))
        tris = np.array(tris)  # (nt, 3, 2)
        e1 = tris[:, 1] - tris[:, 0]
        e2 = tris[:, 2] - tris[:, 0]
        area2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        ok = area2 > 1e-14
        tris, e1, e2, area2 = tris[ok], e1[ok], e2[ok], area2[ok]
        qp, qw = triangle_rule(self.order)
        pts = tris[:, None, 0] + qp[None, :, :1] * e1[:, None] + qp[None, :, 1:] * e2[:, None]
        w = area2[:, None] * qw[None, :]
        return pts.reshape(-1, 2), w.ravel()

    def _element_weights(self, grid, e):
        """Voxel ids and the (n_vox, n_q) weight matrix with det and quadrature weights."""
        Xe = self.mesh.nodes[self.mesh.elements[e]]
        lo = Xe.min(axis=0)
        hi = Xe.max(axis=0)
        ix = np.arange(
            max(0, int(math.floor((lo[0] - grid.x0) / grid.dx - 0.5 - SUPPORT))),
            min(grid.nx, int(math.ceil((hi[0] - grid.x0) / grid.dx - 0.5 + SUPPORT)) + 1),
        )
        iy = np.arange(
            max(0, int(math.floor((lo[1] - grid.y0) / grid.dy - 0.5 - SUPPORT))),
            min(grid.ny, int(math.ceil((hi[1] - grid.y0) / grid.dy - 0.5 + SUPPORT)) + 1),
        )
        if len(ix) == 0 or len(iy) == 0:
            return None, None, None, None
        vox = (iy[:, None] * grid.nx + ix[None, :]).ravel()
        sel = grid.mask[vox]
        if not sel.any():
            return None, None, None, None
        ref, w = self._pieces(grid, e)
        phi, dphi = self._basis.eval(ref)
        x = phi @ Xe
        J = np.einsum("ai,qaj->qij", Xe, dphi)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        g = grid.gamma
        px = psf_profile(x[None, :, 0], grid.xc[ix][:, None], grid.dx, g)  # (nix, nq)
        py = psf_profile(x[None, :, 1], grid.yc[iy][:, None], grid.dy, g)  # (niy, nq)
        W = (py[:, None, :] * px[None, :, :]).reshape(-1, len(w)) * (w * det)[None, :]
        W = W[sel]
        vox = vox[sel]
        nz = np.any(W != 0.0, axis=1)
        return vox[nz], W[nz], phi, x

    def _build(self, grid):
        rows, cols, vals = [], [], []
        norm = np.zeros(grid.n)
        for e in range(len(self.mesh.elements)):
            vox, W, phi, _ = self._element_weights(grid, e)
            if vox is None or len(vox) == 0:
                continue
            Se = W @ phi  # (n_vox, 10)
            nodes = self.mesh.elements[e]
            rows.append(np.repeat(vox, len(nodes)))
            cols.append(np.tile(nodes, len(vox)))
            vals.append(Se.ravel())
            np.add.at(norm, vox, W.sum(axis=1))
        if not rows:
            return np.array([], int), np.array([], int), np.array([]), norm
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), norm

    # -- sampling -------------------------------------------------------------

    def apply(self, nodal):
        """Voxel values (N, k) of nodal values (n_nodes, k); zero outside the mask."""
        return self.matrix @ nodal

    def sample_field(self, f):
        """Voxel values of a callable field ``f(points) -> (n, k)`` by the same quadrature."""
        grid = self.grid
        out = None
        for e in range(len(self.mesh.elements)):
            vox, W, _, x = self._element_weights(grid, e)
            if vox is None or len(vox) == 0:
                continue
            fx = np.asarray(f(x), dtype=float)
            fx = fx.reshape(len(x), -1)
            if out is None:
                out = np.zeros((grid.n, fx.shape[1]))
            np.add.at(out, vox, W @ fx)
        if out is None:
            return np.zeros((grid.n, 2))
        out[grid.mask] /= self.norm[grid.mask, None]
        out[~grid.mask] = 0.0
        return out

    def sample_solution(self, sol):
        return self.apply(sol.velocity)


@dataclass
class VoxelData:
    """Voxel velocities (N, 2) in cm/s with the noise level and seed that made them."""

    grid: VoxelGrid
    values: np.ndarray
    kappa: float = 0.0
    seed: int = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n, 2):
            raise GridError(f"expected {self.grid.n} x 2 voxel values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise GridError("voxel values must be finite")

    @property
    def mask(self):
        return self.grid.mask

    def image(self, component=0):
        """(ny, nx) array of one velocity component, NaN outside the mask."""
        v = np.where(self.mask, self.values[:, component], np.nan)
        return v.reshape(self.grid.ny, self.grid.nx)

    def write(self, path):
        g = self.grid
        with open(path, "w") as fh:
            fh.write("sbiwss-voxels 1\n")
            fh.write(f"nx {g.nx} ny {g.ny}\n")
            fh.write(f"dx {g.dx:.17g} dy {g.dy:.17g}\n")
            fh.write("region " + " ".join(f"{v:.17g}" for v in g.region) + "\n")
            fh.write(f"kappa {self.kappa:.17g}\n")
            fh.write(f"seed {'none' if self.seed is None else self.seed}\n")
            for (u, v), a in zip(self.values, g.mask):
                fh.write(f"{u:.17g} {v:.17g} {int(a)}\n")

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            if fh.readline().split() != ["sbiwss-voxels", "1"]:
                raise GridError(f"{path}: not a voxel file")
            t = fh.readline().split()
            nx, ny = int(t[1]), int(t[3])
            t = fh.readline().split()
            dx, dy = float(t[1]), float(t[3])
            region = [float(v) for v in fh.readline().split()[1:]]
            kappa = float(fh.readline().split()[1])
            s = fh.readline().split()[1]
            rows = np.loadtxt(fh, ndmin=2)
        grid = VoxelGrid(nx, ny, dx, dy, region[0], region[2], rows[:, 2] > 0.5)
        return cls(grid, rows[:, :2], kappa, None if s == "none" else int(s))

    def to_csv(self, path):
        g = self.grid
        c = g.centroids
        iy, ix = np.divmod(np.arange(g.n), g.nx)
        with open(path, "w") as fh:
            fh.write("ix,iy,x,y,u,v,alpha\n")
            for k in range(g.n):
                fh.write(
                    f"{ix[k]},{iy[k]},{c[k, 0]:.17g},{c[k, 1]:.17g},"
                    f"{self.values[k, 0]:.17g},{self.values[k, 1]:.17g},{int(g.mask[k])}\n"
                )


def sample_psf(field, grid_or_operator, mesh=None):
    """Clean voxel data of a flow solution or callable field."""
    op = grid_or_operator
    if not isinstance(op, PsfOperator):
        op = PsfOperator(mesh if mesh is not None else field.mesh, op)
    if callable(field):
        vals = op.sample_field(field)
    else:
        vals = op.sample_solution(field)
    return VoxelData(op.grid, vals)


def add_noise(clean, kappa, seed, peak_speed):
    """Add i.i.d. Gaussian noise of std ``kappa * peak_speed`` to each masked component.

    The draws are taken for every voxel in index order from a counter-based
    Philox stream, so the noise at a voxel does not depend on the mask.
    """
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    if kappa == 0:
        return VoxelData(clean.grid, clean.values.copy(), 0.0, seed)
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.standard_normal((clean.grid.n, 2)) * (kappa * peak_speed)
    values = clean.values.copy()
    m = clean.grid.mask
    values[m] += noise[m]
    return VoxelData(clean.grid, values, float(kappa), seed)
