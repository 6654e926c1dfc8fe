"""Wall shear stress computed directly from voxel data.

The voxel values are interpolated bilinearly between centroids; at each wall
point a quadratic in the inward normal direction through the no-slip value
and two probe values gives the wall-normal derivative of the velocity.
"""

import numpy as np

from .profile import Method, WssProfile
from .units import shear_stress_pa

DELTA_CAP = 0.06  # cm


class ProbeError(ValueError):
    pass


def delta_rule(dx, dy, cap=DELTA_CAP):
    """Probe increment 1.2 min(dx, dy, cap), in cm."""
    return 1.2 * min(dx, dy, cap)


class BilinearField:
    """Bilinear interpolant of voxel values on the centroid lattice.

    Voxels outside the mask count as zero velocity.  Points beyond the
    lattice of masked centroids are clamped onto its bounding rectangle.
    Cells whose four voxels are all outside the mask cannot be reconstructed;
    such points are flagged and return zero.
    """

    def __init__(self, data):
        g = data.grid
        self.grid = g
        v = np.where(g.mask[:, None], data.values, 0.0)
        self.values = v.reshape(g.ny, g.nx, 2)
        self.mask = g.mask.reshape(g.ny, g.nx)
        iy, ix = np.nonzero(self.mask)
        if len(ix) == 0:
            raise ProbeError("voxel data has an empty mask")
        self.ix_range = (max(0, ix.min()), min(g.nx - 1, ix.max()))
        self.iy_range = (max(0, iy.min()), min(g.ny - 1, iy.max()))
        if self.ix_range[0] == self.ix_range[1]:
            self.ix_range = (max(0, self.ix_range[0] - 1), min(g.nx - 1, self.ix_range[0] + 1))
        if self.iy_range[0] == self.iy_range[1]:
            self.iy_range = (max(0, self.iy_range[0] - 1), min(g.ny - 1, self.iy_range[0] + 1))

    def __call__(self, p):
        """Values (n, 2) and a flag per point for unreconstructible cells."""
        g = self.grid
        p = np.atleast_2d(np.asarray(p, dtype=float))
        # continuous lattice coordinates, clamped to the masked hull
        u = (p[:, 0] - g.x0) / g.dx - 0.5
        w = (p[:, 1] - g.y0) / g.dy - 0.5
        # snap round-off so that centroids return their own values exactly
        u = np.where(np.abs(u - np.rint(u)) < 1e-9, np.rint(u), u)
        w = np.where(np.abs(w - np.rint(w)) < 1e-9, np.rint(w), w)
        u = np.clip(u, *self.ix_range)
        w = np.clip(w, *self.iy_range)
        i0 = np.minimum(np.floor(u).astype(int), self.ix_range[1] - 1)
        j0 = np.minimum(np.floor(w).astype(int), self.iy_range[1] - 1)
        i0 = np.maximum(i0, self.ix_range[0])
        j0 = np.maximum(j0, self.iy_range[0])
        a = (u - i0)[:, None]
        b = (w - j0)[:, None]
        V = self.values
        out = (
            (1 - a) * (1 - b) * V[j0, i0]
            + a * (1 - b) * V[j0, i0 + 1]
            + (1 - a) * b * V[j0 + 1, i0]
            + a * b * V[j0 + 1, i0 + 1]
        )
        M = self.mask
        valid = M[j0, i0] | M[j0, i0 + 1] | M[j0 + 1, i0] | M[j0 + 1, i0 + 1]
        out[~valid] = 0.0
        return out, ~valid


def bilinear_reconstruct(data, p):
    """Bilinear velocity reconstruction v_N at points ``p``; raises for empty cells."""
    v, bad = BilinearField(data)(p)
    if bad.any():
        raise ProbeError(f"no valid voxel around point(s) {np.flatnonzero(bad).tolist()}")
    return v


def normal_velocity_derivative(field, x, n, delta):
    """Derivative at the wall of the quadratic through 0, v(x - delta n), v(x - 2 delta n).

    ``field`` is a ``BilinearField`` (or VoxelData).  Returns the derivative
    (n, 2) with respect to the inward distance and a flag array (n, 2) that
    marks failing probes (first and second).
    """
    if not isinstance(field, BilinearField):
        field = BilinearField(field)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = np.atleast_2d(np.asarray(n, dtype=float))
    v1, f1 = field(x - delta * n)
    v2, f2 = field(x - 2.0 * delta * n)
    d = (2.0 / delta) * v1 - (0.5 / delta) * v2
    return d, np.column_stack([f1, f2])


def tangential_part(vec, n):
    """(I - n n^T) vec, row-wise."""
    return vec - np.einsum("ni,ni->n", vec, n)[:, None] * n


def mri_wss_profile(data, samples, props, delta=None):
    """WSS profile (Pa) from voxel data at exact wall points and normals."""
    field = BilinearField(data)
    if delta is None:
        delta = delta_rule(data.grid.dx, data.grid.dy)
    d, flags = normal_velocity_derivative(field, samples.points, samples.normals, delta)
    tau = shear_stress_pa(props.mu_dyn, tangential_part(d, np.asarray(samples.normals)))
    return WssProfile(
        s=samples.s,
        points=samples.points,
        normals=samples.normals,
        wss=np.linalg.norm(tau, axis=1),
        method=Method.MRI,
        flags=flags.any(axis=1),
    )
