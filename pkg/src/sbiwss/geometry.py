"""Channel geometries: the Gaussian-bump stenotic vessel and user polylines.

Both geometry classes expose the same small surface used by the mesher, the
flow solver and the MRI tools:

* ``signed_distance(p)``  negative inside, positive outside
* ``classify(p)``  boundary tag of boundary points (edge midpoints)
* ``snap(p)``  closest point on the wall
* ``inflow_velocity(p, theta)``  parabolic inflow on the inflow boundary
* ``rect_intersects(x0, x1, y0, y1)``  voxel-mask test
* ``wall_samples(x0, x1, n, side)``  arc-length-uniform wall points
"""

from dataclasses import dataclass, field
from enum import IntEnum
import math

import numpy as np
from scipy.optimize import brentq

from .quadrature import gauss_legendre


class GeometryError(ValueError):
    """Raised for points outside the channel extent or invalid parameters."""


class ProjectionError(ArithmeticError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class BoundaryTag(IntEnum):
    WALL = 1
    INFLOW = 2
    OUTFLOW = 3


_SIDES = {"top": 1.0, "bottom": -1.0}


def _side_sign(side):
    try:
        return _SIDES[side]
    except KeyError:
        raise GeometryError(f"side must be 'top' or 'bottom', got {side!r}") from None


@dataclass(frozen=True)
class GeometrySpec:
    """Stenotic vessel |x2| <= y(x1), x1 in [x_min, x_max] (lengths in cm)."""

    B0: float = 0.3
    c: float = 3.0
    sigma_g: float = 0.6
    A: float = 0.18
    x_min: float = 0.0
    x_max: float = 6.0

    def __post_init__(self):
        if not self.B0 > 0:
            raise GeometryError("B0 must be positive")
        if not self.sigma_g > 0:
            raise GeometryError("sigma_g must be positive")
        if self.A < 0:
            raise GeometryError("A must be non-negative")
        if not self.x_min < self.x_max:
            raise GeometryError("x_min must be smaller than x_max")
        if self.B0 - self.bump_height <= 0:
            raise GeometryError("bump closes the channel: y(c) <= 0")

    @property
    def bump_height(self):
        return self.A / math.sqrt(2.0 * math.pi * self.sigma_g**2)

    @property
    def throat_half_width(self):
        return self.B0 - self.bump_height

    @property
    def diameter(self):
        return 2.0 * self.B0

    @property
    def name(self):
        return "stenosis"

    # -- analytic wall ---------------------------------------------------

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        tol = 1e-12 * (self.x_max - self.x_min)
        if np.any(x < self.x_min - tol) or np.any(x > self.x_max + tol):
            raise GeometryError(
                f"x outside channel extent [{self.x_min}, {self.x_max}]"
            )
        return x

    def _gauss(self, x):
        z = (x - self.c) / self.sigma_g
        return self.bump_height * np.exp(-0.5 * z * z)

    def y(self, x):
        return self.B0 - self._gauss(x)

    def dy(self, x):
        return self._gauss(x) * (x - self.c) / self.sigma_g**2

    def d2y(self, x):
        s2 = self.sigma_g**2
        return self._gauss(x) * (1.0 / s2 - (x - self.c) ** 2 / s2**2)

    # -- mesher / solver interface ------------------------------------------

    @property
    def bbox(self):
        return (self.x_min, self.x_max, -self.B0, self.B0)

    @property
    def corners(self):
        ya = float(self.y(self.x_min))
        yb = float(self.y(self.x_max))
        return np.array(
            [[self.x_min, -ya], [self.x_max, -yb], [self.x_max, yb], [self.x_min, ya]]
        )

    @property
    def area(self):
        x, w = gauss_legendre(40)
        nseg = 24
        edges = np.linspace(self.x_min, self.x_max, nseg + 1)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            total += (b - a) * np.dot(w, 2.0 * self.y(a + (b - a) * x))
        return total

    def _closest_x(self, px, py_abs, x0=None):
        # minimize 0.5 ((x - px)^2 + (y(x) - py)^2); convex for points within
        # the curvature radius of the wall
        x = np.array(px if x0 is None else x0, dtype=float, copy=True)
        lo, hi = self.x_min, self.x_max
        for _ in range(60):
            yx = self.y(x)
            d1 = self.dy(x)
            g = (x - px) + (yx - py_abs) * d1
            h = 1.0 + d1 * d1 + (yx - py_abs) * self.d2y(x)
            h = np.where(h > 0.1, h, 0.1)
            step = g / h
            x = np.clip(x - step, lo, hi)
            if np.all(np.abs(step) <= 1e-15 * max(1.0, abs(hi))):
                break
        return x

    def project_to_wall(self, p, side=None):
        """Closest point on the wall curve.

        Returns ``(q, s)`` with ``q`` the wall point(s) and ``s`` the arc length
        from ``x_min`` along the chosen wall.  The side defaults to the sign
        of the point's x2 coordinate.
        """
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        P = np.atleast_2d(p)
        if side is None:
            sgn = np.where(P[:, 1] >= 0.0, 1.0, -1.0)
        else:
            sgn = np.full(len(P), _side_sign(side))
        xs = self._closest_x(P[:, 0], sgn * P[:, 1])
        q = np.column_stack([xs, sgn * self.y(xs)])
        # first-order optimality residual, interior solutions only
        t = np.column_stack([np.ones_like(xs), sgn * self.dy(xs)])
        t /= np.linalg.norm(t, axis=1)[:, None]
        res = np.abs(np.einsum("ij,ij->i", P - q, t))
        interior = (xs > self.x_min) & (xs < self.x_max)
        scale = max(self.B0, 1.0)
        if np.any(res[interior] > 1e-10 * scale):
            raise ProjectionError("wall projection did not converge", res[interior].max())
        s = self.arc_length(self.x_min, xs)
        if single:
            return q[0], float(s[0])
        return q, s

    def arc_length(self, x0, x1):
        """Arc length of one wall between x0 and x1 (vectorized in x1)."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        xg, wg = gauss_legendre(20)
        out = np.empty_like(x1)
        for k, b in enumerate(x1):
            nseg = max(1, int(math.ceil(abs(b - x0) / (0.25 * self.sigma_g))))
            edges = np.linspace(x0, b, nseg + 1)
            total = 0.0
            for lo, hi in zip(edges[:-1], edges[1:]):
                xx = lo + (hi - lo) * xg
                total += (hi - lo) * np.dot(wg, np.sqrt(1.0 + self.dy(xx) ** 2))
            out[k] = total
        return out

    def signed_distance(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        xc = np.clip(p[:, 0], self.x_min, self.x_max)
        d_wall = np.empty(len(p))
        for sgn in (1.0, -1.0):
            xs = self._closest_x(xc, sgn * p[:, 1])
            dist = np.hypot(p[:, 0] - xs, sgn * p[:, 1] - self.y(xs))
            outside = sgn * p[:, 1] > self.y(xc)
            signed = np.where(outside, dist, -dist)
            if sgn > 0:
                d_wall = signed
            else:
                d_wall = np.maximum(d_wall, signed)
        return np.maximum.reduce([d_wall, self.x_min - p[:, 0], p[:, 0] - self.x_max])

    def contains(self, p, tol=0.0):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        xc = np.clip(p[:, 0], self.x_min, self.x_max)
        inx = (p[:, 0] >= self.x_min - tol) & (p[:, 0] <= self.x_max + tol)
        return inx & (np.abs(p[:, 1]) <= self.y(xc) + tol)

    def classify(self, p, tol=1e-9):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        tags = np.full(len(p), int(BoundaryTag.WALL))
        L = self.x_max - self.x_min
        tags[np.abs(p[:, 0] - self.x_min) <= tol * L] = BoundaryTag.INFLOW
        tags[np.abs(p[:, 0] - self.x_max) <= tol * L] = BoundaryTag.OUTFLOW
        return tags

    def snap(self, p):
        q, _ = self.project_to_wall(np.atleast_2d(p))
        return q

    def inflow_velocity(self, p, theta):
        """Parabolic x1-velocity profile peaking at ``theta`` on the centerline."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x2 = p[:, 1]
        shape = (self.B0 - x2) * (self.B0 + x2) / self.B0**2
        return np.column_stack([shape * theta, np.zeros_like(x2)])

    def rect_intersects(self, x0, x1, y0, y1):
        """True where the closed rectangle(s) meet the closed domain."""
        x0, x1, y0, y1 = np.broadcast_arrays(*map(np.asarray, (x0, x1, y0, y1)))
        a = np.maximum(x0, self.x_min)
        b = np.minimum(x1, self.x_max)
        ok = a <= b
        a = np.where(ok, a, self.x_min)
        b = np.where(ok, b, self.x_min)
        # y(x) is decreasing then increasing, so its maximum over [a, b] is
        # attained at an endpoint
        ymax = np.maximum(self.y(a), self.y(b))
        ymin_abs = np.where((y0 <= 0) & (y1 >= 0), 0.0, np.minimum(np.abs(y0), np.abs(y1)))
        return ok & (ymin_abs <= ymax)

    def wall_samples(self, x0, x1, n, side="top"):
        """``n`` arc-length-uniform points on one wall between x0 and x1.

        Returns ``(s, points, normals)`` with ``s`` measured from ``x0``.
        """
        x0 = float(self._check(x0))
        x1 = float(self._check(x1))
        sgn = _side_sign(side)
        total = float(self.arc_length(x0, [x1])[0])
        s = np.linspace(0.0, total, n)
        xs = np.empty(n)
        xs[0], xs[-1] = x0, x1
        for k in range(1, n - 1):
            xs[k] = brentq(
                lambda x: self.arc_length(x0, [x])[0] - s[k], x0, x1, xtol=1e-14, rtol=1e-15
            )
        pts = np.column_stack([xs, sgn * self.y(xs)])
        return s, pts, wall_normal(xs, side, self)


def half_width(x, spec):
    """Vessel half-width y(x) in cm; strictly positive for a valid spec."""
    x = spec._check(x)
    out = spec.y(x)
    return float(out) if out.ndim == 0 else out


def half_width_slope(x, spec):
    x = spec._check(x)
    out = spec.dy(x)
    return float(out) if out.ndim == 0 else out


def wall_tangent(x, side, spec):
    """Unit tangent of the wall curve (x, +-y(x)), oriented toward +x1."""
    sgn = _side_sign(side)
    x = spec._check(x)
    d = sgn * spec.dy(x)
    norm = np.sqrt(1.0 + d * d)
    return np.stack([1.0 / norm, d / norm], axis=-1)


def wall_normal(x, side, spec):
    """Outward unit normal of the wall curve (x, +-y(x))."""
    sgn = _side_sign(side)
    x = spec._check(x)
    d = spec.dy(x)
    norm = np.sqrt(1.0 + d * d)
    return np.stack([-d / norm, sgn / norm], axis=-1)


def project_to_wall(p, spec, side=None):
    return spec.project_to_wall(p, side=side)


# -- user-supplied polylines ---------------------------------------------------


@dataclass(frozen=True)
class PolylineGeometry:
    """Closed polygon with tagged segments, read from a plain-text file.

    Segment ``k`` joins vertex ``k`` to vertex ``k + 1`` (cyclically).  The
    inflow must consist of a single straight segment; the parabolic inflow is
    directed along its inward normal.
    """

    vertices: np.ndarray
    tags: np.ndarray
    name: str = "polyline"
    _path: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        t = np.asarray(self.tags, dtype=int)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polyline needs at least three 2D vertices")
        if len(t) != len(v):
            raise GeometryError("one tag per segment is required")
        # orient counter-clockwise
        x, y = v[:, 0], v[:, 1]
        if 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0:
            v = v[::-1].copy()
            t = np.roll(t[::-1], -1)
        if np.count_nonzero(t == BoundaryTag.INFLOW) != 1:
            raise GeometryError("polyline must have exactly one inflow segment")
        from matplotlib.path import Path

        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "tags", t)
        object.__setattr__(self, "_path", Path(np.vstack([v, v[:1]]), closed=True))

    @classmethod
    def read(cls, path):
        """Parse ``x y`` vertex lines, then a ``[tags]`` section of
        ``segment_index tag_name`` lines (unlisted segments are walls)."""
        verts, tag_lines = [], []
        section = "vertices"
        with open(path) as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if line.lower() == "[tags]":
                    section = "tags"
                    continue
                if section == "vertices":
                    x, y = line.split()
                    verts.append((float(x), float(y)))
                else:
                    k, name = line.split()
                    tag_lines.append((int(k), BoundaryTag[name.upper()]))
        tags = np.full(len(verts), int(BoundaryTag.WALL))
        for k, tag in tag_lines:
            tags[k] = tag
        return cls(np.array(verts), tags, name=str(path))

    @property
    def segments(self):
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    @property
    def bbox(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return (lo[0], hi[0], lo[1], hi[1])

    @property
    def corners(self):
        # vertices where the tag changes, plus sharp turns
        a, b = self.segments
        t_prev = np.roll(self.tags, 1)
        d_in = self.vertices - np.roll(self.vertices, 1, axis=0)
        d_out = b - a
        cosang = np.einsum("ij,ij->i", d_in, d_out) / (
            np.linalg.norm(d_in, axis=1) * np.linalg.norm(d_out, axis=1)
        )
        keep = (t_prev != self.tags) | (cosang < np.cos(np.deg2rad(30)))
        return self.vertices[keep]

    @property
    def area(self):
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)

    @property
    def inflow_segment(self):
        k = int(np.flatnonzero(self.tags == BoundaryTag.INFLOW)[0])
        a, b = self.segments
        return a[k], b[k]

    @property
    def diameter(self):
        a, b = self.inflow_segment
        return float(np.linalg.norm(b - a))

    def _closest(self, p, mask=None):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        a, b = self.segments
        if mask is not None:
            a, b = a[mask], b[mask]
        ab = b - a
        t = np.einsum("pkj,kj->pk", p[:, None, :] - a[None], ab) / np.einsum("kj,kj->k", ab, ab)
        t = np.clip(t, 0.0, 1.0)
        q = a[None] + t[..., None] * ab[None]
        d = np.linalg.norm(p[:, None, :] - q, axis=2)
        k = np.argmin(d, axis=1)
        idx = np.arange(len(p))
        return q[idx, k], d[idx, k], k

    def contains(self, p, tol=0.0):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        inside = self._path.contains_points(p)
        if tol > 0:
            _, d, _ = self._closest(p)
            inside |= d <= tol
        return inside

    def signed_distance(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        _, d, _ = self._closest(p)
        return np.where(self._path.contains_points(p), -d, d)

    def classify(self, p, tol=1e-9):
        _, _, k = self._closest(p)
        return self.tags[k].copy()

    def snap(self, p):
        q, _, _ = self._closest(p, mask=self.tags == BoundaryTag.WALL)
        return q

    def inflow_velocity(self, p, theta):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        a, b = self.inflow_segment
        L = np.linalg.norm(b - a)
        s = np.clip(np.einsum("ij,j->i", p - a, b - a) / L**2, 0.0, 1.0)
        tangent = (b - a) / L
        inward = np.array([-tangent[1], tangent[0]])  # CCW orientation
        shape = 4.0 * s * (1.0 - s)
        return (shape * theta)[:, None] * inward[None, :]

    def rect_intersects(self, x0, x1, y0, y1, samples=8):
        x0, x1, y0, y1 = np.broadcast_arrays(*map(np.asarray, (x0, x1, y0, y1)))
        out = np.zeros(x0.shape, dtype=bool)
        g = np.linspace(0.0, 1.0, samples + 1)
        for idx in np.ndindex(x0.shape):
            gx = x0[idx] + (x1[idx] - x0[idx]) * g
            gy = y0[idx] + (y1[idx] - y0[idx]) * g
            X, Y = np.meshgrid(gx, gy)
            pts = np.column_stack([X.ravel(), Y.ravel()])
            hit = self._path.contains_points(pts).any()
            if not hit:
                # polygon vertices inside the rectangle
                v = self.vertices
                hit = np.any(
                    (v[:, 0] >= x0[idx]) & (v[:, 0] <= x1[idx])
                    & (v[:, 1] >= y0[idx]) & (v[:, 1] <= y1[idx])
                )
            out[idx] = hit
        return out

    def wall_samples(self, x0, x1, n, side=None):
        """Arc-length-uniform samples on the wall segments with x in [x0, x1].

        Uses the longest connected run of wall segments in that x-range;
        ``side`` is accepted for interface compatibility.
        """
        a, b = self.segments
        mid = 0.5 * (a + b)
        sel = (self.tags == BoundaryTag.WALL) & (mid[:, 0] >= x0) & (mid[:, 0] <= x1)
        if not sel.any():
            raise GeometryError("no wall segment inside the requested x-range")
        runs, cur = [], []
        for k in range(len(sel)):
            if sel[k]:
                cur.append(k)
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            if runs and runs[0][0] == 0 and sel[-1]:
                runs[0] = cur + runs[0]
            else:
                runs.append(cur)
        run = max(runs, key=len)
        seg_len = np.linalg.norm(b[run] - a[run], axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        s = np.linspace(0.0, cum[-1], n)
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(run) - 1)
        t = (s - cum[k]) / seg_len[k]
        ids = np.array(run)[k]
        pts = a[ids] + t[:, None] * (b[ids] - a[ids])
        d = (b[ids] - a[ids]) / seg_len[k][:, None]
        normals = np.column_stack([d[:, 1], -d[:, 0]])  # outward for CCW
        return s, pts, normals
