"""Taylor-Hood P3/P2 discretization data on an isoparametric cubic mesh.

Unknown layout: ``[u1 (n_nodes), u2 (n_nodes), p (n_pressure)]`` where the
velocity nodes are the cubic mesh nodes and the pressure nodes are the mesh
vertices followed by one node per edge.
"""

import numpy as np
import scipy.sparse as sp

from ..geometry import BoundaryTag
from ..meshing import _edge_table
from ..quadrature import triangle_rule
from .basis import lagrange_basis


def geometric_factors(mesh, ref_pts, elements=None):
    """Jacobians, determinants and inverse Jacobians at reference points.

    Returns ``(x, det, invJ)`` with shapes (ne, nq, 2), (ne, nq), (ne, nq, 2, 2).
    """
    basis = lagrange_basis(mesh.p_geo)
    phi, dphi = basis.eval(ref_pts)
    els = mesh.elements if elements is None else mesh.elements[elements]
    X = mesh.nodes[els]
    x = np.einsum("qa,eai->eqi", phi, X)
    J = np.einsum("eai,qaj->eqij", X, dphi)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    invJ = np.empty_like(J)
    invJ[..., 0, 0] = J[..., 1, 1] / det
    invJ[..., 0, 1] = -J[..., 0, 1] / det
    invJ[..., 1, 0] = -J[..., 1, 0] / det
    invJ[..., 1, 1] = J[..., 0, 0] / det
    return x, det, invJ


class FlowSpace:
    """Everything about the discretization that does not depend on the flow."""

    def __init__(self, mesh, geom, quad_order=5):
        if mesh.p_geo != 3:
            raise ValueError("the flow space needs a cubic (p_geo=3) mesh")
        self.mesh = mesh
        self.geom = geom
        self.vbasis = lagrange_basis(3)
        self.pbasis = lagrange_basis(2)
        self.n_nodes = len(mesh.nodes)

        tri = mesh.elements[:, :3]
        nv = int(tri.max()) + 1
        _, edge_id, _ = _edge_table(tri)
        self.pmap = np.concatenate([tri, nv + edge_id], axis=1)  # (ne, 6)
        self.n_pressure = nv + int(edge_id.max()) + 1
        self.n_dofs = 2 * self.n_nodes + self.n_pressure
        # pressure node coordinates (vertices, then straight-edge midpoints
        # mapped through the curved element)
        self.pressure_nodes = np.zeros((self.n_pressure, 2))
        pn = self._map_points(self.pbasis.nodes)  # (ne, 6, 2)
        self.pressure_nodes[self.pmap.ravel()] = pn.reshape(-1, 2)

        # element dofs: 10 u1, 10 u2, 6 p
        els = mesh.elements
        self.edofs = np.concatenate([els, els + self.n_nodes, self.pmap + 2 * self.n_nodes], axis=1)

        # quadrature
        self.qpts, self.qw = triangle_rule(quad_order)
        self.phi, dphi_ref = self.vbasis.eval(self.qpts)  # (nq,10), (nq,10,2)
        self.psi, _ = self.pbasis.eval(self.qpts)  # (nq,6)
        self.xq, det, invJ = geometric_factors(mesh, self.qpts)
        if np.any(det <= 0):
            raise ValueError("mesh has non-positive Jacobians")
        self.wdet = det * self.qw[None, :]
        self.dphi = np.einsum("qak,eqkj->eqaj", dphi_ref, invJ)  # (ne,nq,10,2)

        self._setup_boundary()
        self._setup_pattern()

    def _map_points(self, ref_pts):
        phi, _ = self.vbasis.eval(ref_pts)
        return np.einsum("qa,eai->eqi", phi, self.mesh.nodes[self.mesh.elements])

    def _setup_boundary(self):
        m = self.mesh
        tags = m.boundary_tags
        wall_nodes = np.unique(m.boundary_edges[tags == BoundaryTag.WALL])
        inflow_nodes = np.unique(m.boundary_edges[tags == BoundaryTag.INFLOW])
        # no-slip wins at wall/inflow corners
        inflow_nodes = np.setdiff1d(inflow_nodes, wall_nodes)
        self.wall_nodes = wall_nodes
        self.inflow_nodes = inflow_nodes
        dir_nodes = np.concatenate([wall_nodes, inflow_nodes])
        self.dirichlet = np.concatenate([dir_nodes, dir_nodes + self.n_nodes])
        self.is_dirichlet = np.zeros(self.n_dofs, dtype=bool)
        self.is_dirichlet[self.dirichlet] = True
        # inflow values per unit theta
        self.inflow_unit = self.geom.inflow_velocity(m.nodes[inflow_nodes], 1.0)
        self.inflow_dofs = np.concatenate([inflow_nodes, inflow_nodes + self.n_nodes])
        self.inflow_values_unit = np.concatenate([self.inflow_unit[:, 0], self.inflow_unit[:, 1]])

    def _setup_pattern(self):
        """CSR pattern of the full element blocks with a scatter map."""
        nl = self.edofs.shape[1]
        rows = np.repeat(self.edofs, nl, axis=1).ravel()
        cols = np.tile(self.edofs, (1, nl)).ravel()
        n = self.n_dofs
        # identity entries so Dirichlet rows always have a diagonal
        diag = np.arange(n)
        rows = np.concatenate([rows, diag])
        cols = np.concatenate([cols, diag])
        key = rows.astype(np.int64) * n + cols
        ukey, inv = np.unique(key, return_inverse=True)
        self._scatter = inv.ravel()
        self._n_block = len(key) - n
        urow = ukey // n
        ucol = ukey % n
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(urow, minlength=n))])
        self._indices = ucol.astype(np.int32)
        self._nnz = len(ukey)
        self._diag_pos = inv[self._n_block:]
        self._keep = ~self.is_dirichlet[urow]
        self._urow = urow

    def assemble(self, blocks, dirichlet_rows=True):
        """CSR matrix from element blocks of shape (ne, 26, 26)."""
        vals = np.concatenate([blocks.ravel(), np.zeros(self.n_dofs)])
        data = np.bincount(self._scatter, weights=vals, minlength=self._nnz)
        if dirichlet_rows:
            data *= self._keep
            data[self._diag_pos[self.dirichlet]] = 1.0
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n_dofs, self.n_dofs))

    def scatter_vector(self, elvec):
        return np.bincount(self.edofs.ravel(), weights=elvec.ravel(), minlength=self.n_dofs)

    # -- convenience -------------------------------------------------------

    def split(self, X):
        n = self.n_nodes
        return np.column_stack([X[:n], X[n : 2 * n]]), X[2 * n :]

    def join(self, U, P):
        return np.concatenate([U[:, 0], U[:, 1], P])

    def velocity_at_quadrature(self, U):
        return np.einsum("qa,eai->eqi", self.phi, U[self.mesh.elements])

    def integrate(self, f_q):
        """Integral of values given at the quadrature points (ne, nq, ...)."""
        return np.einsum("eq,eq...->...", self.wdet, f_q)
