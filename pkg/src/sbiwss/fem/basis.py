"""Lagrange bases on the reference triangle (0,0), (1,0), (0,1)."""

from functools import lru_cache

import numpy as np

P2_REF_NODES = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]
)


class LagrangeBasis:
    """Nodal basis of total degree ``order`` built from a monomial Vandermonde."""

    def __init__(self, order, nodes):
        self.order = order
        self.nodes = np.asarray(nodes, dtype=float)
        self.powers = [(i, j) for d in range(order + 1) for i in range(d, -1, -1) for j in [d - i]]
        V = self._mono(self.nodes)
        self.coef = np.linalg.inv(V)  # (nmono, nnode)

    @property
    def size(self):
        return len(self.nodes)

    def _mono(self, x):
        x = np.atleast_2d(x)
        return np.stack([x[:, 0] ** i * x[:, 1] ** j for i, j in self.powers], axis=1)

    def _mono_grad(self, x):
        x = np.atleast_2d(x)
        gx, gy = [], []
        for i, j in self.powers:
            gx.append(i * x[:, 0] ** max(i - 1, 0) * x[:, 1] ** j if i else np.zeros(len(x)))
            gy.append(j * x[:, 0] ** i * x[:, 1] ** max(j - 1, 0) if j else np.zeros(len(x)))
        return np.stack(gx, axis=1), np.stack(gy, axis=1)

    def eval(self, x):
        """Values (nq, nnode) and reference gradients (nq, nnode, 2)."""
        phi = self._mono(x) @ self.coef
        gx, gy = self._mono_grad(x)
        dphi = np.stack([gx @ self.coef, gy @ self.coef], axis=2)
        return phi, dphi


@lru_cache(maxsize=None)
def lagrange_basis(order):
    if order == 1:
        return LagrangeBasis(1, P2_REF_NODES[:3])
    if order == 2:
        return LagrangeBasis(2, P2_REF_NODES)
    if order == 3:
        from ..meshing import P3_REF_NODES

        return LagrangeBasis(3, P3_REF_NODES)
    raise ValueError(f"unsupported order {order}")
