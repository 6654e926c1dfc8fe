"""Point evaluation of finite-element fields and wall shear stress."""

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import BoundaryTag
from ..profile import Method, WssProfile
from ..units import pressure_pa, shear_stress_pa
from .basis import lagrange_basis


class LocationError(LookupError):
    pass


# reference-edge parametrizations t -> (xi, eta) for local edges 0, 1, 2
_EDGE_MAPS = (
    (np.array([0.0, 0.0]), np.array([1.0, 0.0])),
    (np.array([1.0, 0.0]), np.array([-1.0, 1.0])),
    (np.array([0.0, 1.0]), np.array([0.0, -1.0])),
)


def _map(space, elements, ref):
    basis = space.vbasis
    phi, dphi = basis.eval(ref)
    X = space.mesh.nodes[space.mesh.elements[elements]]
    x = np.einsum("na,nai->ni", phi, X)
    J = np.einsum("nai,naj->nij", X, dphi)
    return x, J, phi, dphi


class PointLocator:
    """Finds (element, reference coordinates) for physical points."""

    def __init__(self, space, candidates=12):
        self.space = space
        centres = space._map_points(np.array([[1 / 3, 1 / 3]]))[:, 0]
        self.tree = cKDTree(centres)
        self.k = min(candidates, len(centres))

    def locate(self, points, tol=1e-9):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        _, cand = self.tree.query(points, k=self.k)
        cand = np.atleast_2d(cand).reshape(n, -1)
        best_el = np.full(n, -1)
        best_ref = np.zeros((n, 2))
        best_viol = np.full(n, np.inf)
        for k in range(cand.shape[1]):
            todo = best_viol > tol
            if not todo.any():
                break
            els = cand[todo, k]
            ref = self._invert(els, points[todo])
            lam = np.column_stack([1 - ref[:, 0] - ref[:, 1], ref])
            viol = np.maximum(0.0, -lam.min(axis=1))
            idx = np.flatnonzero(todo)
            better = viol < best_viol[idx]
            best_viol[idx[better]] = viol[better]
            best_el[idx[better]] = els[better]
            best_ref[idx[better]] = ref[better]
        missing = best_viol > tol
        if missing.any():
            raise LocationError(
                f"{int(missing.sum())} point(s) outside the mesh, e.g. {points[missing][0].tolist()}"
            )
        return best_el, best_ref

    def _invert(self, els, pts):
        ref = np.full((len(els), 2), 1.0 / 3.0)
        for _ in range(30):
            x, J, _, _ = _map(self.space, els, ref)
            r = pts - x
            step = np.linalg.solve(J, r[..., None])[..., 0]
            ref = ref + step
            ref = np.clip(ref, -2.0, 3.0)
            if np.all(np.abs(step) < 1e-15):
                break
        return ref


def _locator(space):
    loc = getattr(space, "_locator", None)
    if loc is None:
        loc = PointLocator(space)
        space._locator = loc
    return loc


def _eval_at(sol, els, ref):
    space = sol.space
    x, J, phi, dphi = _map(space, els, ref)
    invJ = np.linalg.inv(J)
    grads = np.einsum("nak,nkj->naj", dphi, invJ)
    Ue = sol.velocity[space.mesh.elements[els]]  # (n,10,2)
    u = np.einsum("na,nai->ni", phi, Ue)
    G = np.einsum("naj,nai->nij", grads, Ue)
    psi, _ = space.pbasis.eval(ref)
    p = np.einsum("nb,nb->n", psi, sol.pressure[space.pmap[els]])
    return u, G, p


def evaluate_velocity(sol, points):
    """Velocity (n, 2) of the finite-element field at physical points."""
    els, ref = _locator(sol.space).locate(points)
    u, _, _ = _eval_at(sol, els, ref)
    return u


def evaluate_velocity_gradient(sol, points):
    """Velocity gradient (n, 2, 2), entry [i, j] = d u_i / d x_j."""
    els, ref = _locator(sol.space).locate(points)
    _, G, _ = _eval_at(sol, els, ref)
    return G


def evaluate_pressure(sol, points):
    els, ref = _locator(sol.space).locate(points)
    _, _, p = _eval_at(sol, els, ref)
    return p


class WallProbe:
    """Closest points on the discrete (curved) wall for a set of wall points.

    Stores the owning element, the reference coordinates on its wall edge and
    the discrete outward normal there.
    """

    def __init__(self, space, points):
        self.space = space
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = space.mesh
        wall = np.flatnonzero(m.boundary_tags == BoundaryTag.WALL)
        owners = m.boundary_elements[wall]
        mids = np.array([self._edge_point(el, k, np.array([0.5]))[0][0] for el, k in owners])
        tree = cKDTree(mids)
        _, cand = tree.query(points, k=min(4, len(wall)))
        n = len(points)
        self.elements = np.empty(n, dtype=int)
        self.ref = np.empty((n, 2))
        self.normals = np.empty((n, 2))
        self.distance = np.full(n, np.inf)
        for i, p in enumerate(points):
            for c in np.atleast_1d(cand[i]):
                el, k = owners[c]
                t, x, tang = self._closest_on_edge(el, k, p)
                d = np.linalg.norm(x - p)
                if d < self.distance[i]:
                    a, b = _EDGE_MAPS[k]
                    self.distance[i] = d
                    self.elements[i] = el
                    self.ref[i] = a + t * b
                    tn = tang / np.linalg.norm(tang)
                    self.normals[i] = [tn[1], -tn[0]]  # CCW edge -> outward normal

    def _edge_point(self, el, k, t):
        a, b = _EDGE_MAPS[k]
        ref = a[None] + np.atleast_1d(t)[:, None] * b[None]
        x, J, _, _ = _map(self.space, np.full(len(ref), el), ref)
        tang = J @ b
        return x, tang

    def _closest_on_edge(self, el, k, p):
        t = 0.5
        for _ in range(50):
            x, tang = self._edge_point(el, k, np.array([t]))
            x, tang = x[0], tang[0]
            # second derivative by differencing the tangent
            h = 1e-6
            _, tang2 = self._edge_point(el, k, np.array([t + h]))
            dtang = (tang2[0] - tang) / h
            g = np.dot(x - p, tang)
            H = np.dot(tang, tang) + np.dot(x - p, dtang)
            step = g / H
            t_new = min(1.0, max(0.0, t - step))
            if abs(t_new - t) < 1e-15:
                t = t_new
                break
            t = t_new
        x, tang = self._edge_point(el, k, np.array([t]))
        return t, x[0], tang[0]

    def fields(self, sol):
        return _eval_at(sol, self.elements, self.ref)


def _probe(space, points):
    key = np.asarray(points, dtype=float).tobytes()
    cache = space.__dict__.setdefault("_wall_probes", {})
    probe = cache.get(key)
    if probe is None:
        probe = WallProbe(space, points)
        cache[key] = probe
    return probe


def wall_traction_terms(sol, points, normals):
    """Tangential wall traction two ways, both in Pa.

    Returns ``(tau_full, tau_noslip)``: the tangential part of ``sigma n`` with
    ``sigma = 2 mu eps - P I`` and the no-slip shortcut ``mu (I - n n^T) grad(v) n``.
    """
    probe = _probe(sol.space, points)
    _, G, p = probe.fields(sol)
    n = np.atleast_2d(np.asarray(normals, dtype=float))
    mu = sol.props.mu_dyn
    strain2 = G + np.transpose(G, (0, 2, 1))
    P = pressure_pa(p, sol.props.rho0)
    t = shear_stress_pa(mu, np.einsum("nij,nj->ni", strain2, n)) - P[:, None] * n
    tau_full = t - np.einsum("ni,ni->n", t, n)[:, None] * n
    gn = np.einsum("nij,nj->ni", G, n)
    gn_t = gn - np.einsum("ni,ni->n", gn, n)[:, None] * n
    tau_noslip = shear_stress_pa(mu, gn_t)
    return tau_full, tau_noslip


def compute_wss(sol, samples, method=Method.TRUTH):
    """WSS profile of a flow solution at the given wall samples."""
    tau, _ = wall_traction_terms(sol, samples.points, samples.normals)
    return WssProfile(
        s=samples.s,
        points=samples.points,
        normals=samples.normals,
        wss=np.linalg.norm(tau, axis=1),
        method=method,
    )


def discrete_wall_samples(space, samples):
    """The same samples moved onto the discrete wall, with discrete normals."""
    from ..profile import WallSamples

    probe = _probe(space, samples.points)
    x, _, _, _ = _map(space, probe.elements, probe.ref)
    return WallSamples(samples.s, x, probe.normals.copy(), samples.side)
