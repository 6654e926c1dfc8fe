"""Steady incompressible Navier-Stokes on Taylor-Hood P3/P2 elements.

Weak form (kinematic pressure p, viscosity nu in cm^2/s)::

    nu (grad u, grad w) + ((u . grad) u, w) - (p, div w) = 0
    -(q, div u) = 0

with no-slip walls, a parabolic inflow scaled by ``theta`` and the natural
"do-nothing" condition (nu grad u - p I) n = 0 at the outflow, which also fixes
the pressure level.  Dirichlet rows of the residual read ``u - g``.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.sparse.linalg import splu

from ..units import kinematic_viscosity_cgs

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    def __init__(self, message, stage=None, residual=None):
        super().__init__(message)
        self.stage = stage
        self.residual = residual


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class FluidProps:
    rho0: float = 1060.0  # kg/m^3
    nu: float = 2.83e-6  # m^2/s

    def __post_init__(self):
        if not (self.rho0 > 0 and self.nu > 0):
            raise ValueError("rho0 and nu must be positive")

    @property
    def mu_dyn(self):
        """Dynamic viscosity in Pa s."""
        return self.rho0 * self.nu

    @property
    def nu_cgs(self):
        return kinematic_viscosity_cgs(self.nu)


def inflow_profile(x2, theta, B0):
    """Parabolic inflow velocity (cm/s) at cross-channel coordinate ``x2``."""
    x2 = np.asarray(x2, dtype=float)
    shape = (B0 - x2) * (B0 + x2) / B0**2
    return np.stack([shape * theta, np.zeros_like(shape)], axis=-1)


def reynolds_to_theta(Re, geom, props):
    """Peak inflow speed (cm/s) giving ``Re = D theta / nu`` with D = 2 B0."""
    if not Re > 0:
        raise ValueError("Re must be positive")
    return Re * props.nu_cgs / geom.diameter


def theta_to_reynolds(theta, geom, props):
    return theta * geom.diameter / props.nu_cgs


@dataclass(eq=False)
class FlowSolution:
    space: object
    props: FluidProps
    velocity: np.ndarray  # (n_nodes, 2) cm/s
    pressure: np.ndarray  # (n_pressure,) kinematic, cm^2/s^2
    theta: float
    residual_norm: float
    newton_iterations: int = 0
    _lu: object = field(default=None, repr=False)

    @property
    def mesh(self):
        return self.space.mesh

    @property
    def X(self):
        return self.space.join(self.velocity, self.pressure)

    @property
    def peak_speed(self):
        """Largest nodal and quadrature-point speed."""
        uq = self.space.velocity_at_quadrature(self.velocity)
        return float(
            max(np.linalg.norm(self.velocity, axis=1).max(), np.linalg.norm(uq, axis=2).max())
        )


class NavierStokesProblem:
    """Residual, Jacobian and parameter sensitivity for one mesh and fluid."""

    def __init__(self, space, props):
        self.space = space
        self.props = props
        self.nu = props.nu_cgs
        s = space
        ne = len(s.mesh.elements)
        # Stokes blocks
        visc = self.nu * np.einsum("eq,eqaj,eqbj->eab", s.wdet, s.dphi, s.dphi)
        div = -np.einsum("eq,qb,eqai->eiab", s.wdet, s.psi, s.dphi)  # (ne,2,10,6)
        K = np.zeros((ne, 26, 26))
        K[:, :10, :10] = visc
        K[:, 10:20, 10:20] = visc
        K[:, :10, 20:] = div[:, 0]
        K[:, 10:20, 20:] = div[:, 1]
        K[:, 20:, :10] = div[:, 0].transpose(0, 2, 1)
        K[:, 20:, 10:20] = div[:, 1].transpose(0, 2, 1)
        self.stokes_blocks = K
        self.stokes_raw = s.assemble(K, dirichlet_rows=False)
        self._phiphi = (s.phi[:, :, None] * s.phi[:, None, :]).reshape(len(s.qw), 100)
        self.dR_dtheta = np.zeros(s.n_dofs)
        self.dR_dtheta[s.inflow_dofs] = -s.inflow_values_unit

    # -- pieces -------------------------------------------------------------

    def dirichlet_values(self, theta):
        g = np.zeros(self.space.n_dofs)
        g[self.space.inflow_dofs] = theta * self.space.inflow_values_unit
        return g

    def lift(self, theta):
        return self.dirichlet_values(theta)

    def _fields(self, X):
        s = self.space
        U, _ = s.split(X)
        Ue = U[s.mesh.elements]  # (ne, 10, 2)
        Uq = np.matmul(s.phi, Ue)  # (ne, nq, 2)
        G = np.matmul(Ue.transpose(0, 2, 1)[:, None], s.dphi)  # G[..., i, j] = du_i/dx_j
        return Uq, G

    def residual(self, X, theta):
        s = self.space
        Uq, G = self._fields(X)
        conv = np.matmul(G, Uq[..., None])[..., 0]  # (ne, nq, 2)
        rc = np.matmul((s.wdet[..., None] * conv).transpose(0, 2, 1), s.phi)  # (ne, 2, 10)
        el = np.zeros((len(s.mesh.elements), 26))
        el[:, :20] = rc.reshape(-1, 20)
        R = self.stokes_raw @ X + s.scatter_vector(el)
        d = s.dirichlet
        R[d] = X[d] - self.dirichlet_values(theta)[d]
        return R

    def jacobian(self, X):
        s = self.space
        ne, nq = s.wdet.shape
        Uq, G = self._fields(X)
        adv = np.matmul(s.dphi, Uq[:, :, :, None])[..., 0]  # (ne, nq, 10)
        A1 = np.matmul(s.phi.T, s.wdet[..., None] * adv)  # (ne, 10, 10)
        wG = (s.wdet[..., None, None] * G).reshape(ne, nq, 4).transpose(0, 2, 1)
        A2 = np.matmul(wG, self._phiphi).reshape(ne, 2, 2, 10, 10)
        B = self.stokes_blocks.copy()
        B[:, :10, :10] += A1 + A2[:, 0, 0]
        B[:, 10:20, 10:20] += A1 + A2[:, 1, 1]
        B[:, :10, 10:20] += A2[:, 0, 1]
        B[:, 10:20, :10] += A2[:, 1, 0]
        return s.assemble(B)

    def factorize(self, X):
        J = self.jacobian(X)
        try:
            return splu(J.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularSystemError(f"sparse LU failed: {exc}") from exc

    def residual_scale(self, theta):
        return float(np.linalg.norm(self.residual(self.lift(theta), theta)))


def newton_solve(
    problem, theta, X0=None, tol=1e-10, max_iter=40, lu=None, stage=None, chord_rate=0.25
):
    """Newton iteration for R(X; theta) = 0.

    ``lu`` may hold a factorization from a nearby state; it is used as a
    chord preconditioner and refreshed whenever the contraction is poor.
    Returns ``(X, residual_norm, lu, iterations)``; ``lu`` is the last
    factorization used.
    """
    s = problem.space
    X = problem.lift(theta) if X0 is None else X0.copy()
    X[s.dirichlet] = problem.dirichlet_values(theta)[s.dirichlet]
    scale = problem.residual_scale(theta)
    target = tol * scale
    R = problem.residual(X, theta)
    rnorm = float(np.linalg.norm(R))
    it = 0
    while rnorm > target:
        if it >= max_iter:
            raise NewtonError(
                f"Newton did not converge in {max_iter} iterations", stage=stage, residual=rnorm
            )
        it += 1
        fresh = lu is None
        if fresh:
            lu = problem.factorize(X)
        dx = lu.solve(R)
        if not np.all(np.isfinite(dx)):
            raise SingularSystemError("non-finite Newton update (pivot failure)")
        alpha = 1.0
        rn = np.inf
        for _ in range(12 if fresh else 1):
            Xn = X - alpha * dx
            Rn = problem.residual(Xn, theta)
            rn = float(np.linalg.norm(Rn))
            if rn < rnorm:
                break
            alpha *= 0.5
        if not rn < rnorm:
            if not fresh:
                lu = None  # retry with an up-to-date Jacobian
                continue
            if rnorm <= 1e3 * target:
                log.debug("Newton stagnated at %.3e (target %.3e)", rnorm, target)
                break
            raise NewtonError("Newton line search failed", stage=stage, residual=rnorm)
        if alpha < 1.0 or (not fresh and rn > chord_rate * rnorm):
            lu = None
        X, R, rnorm = Xn, Rn, rn
    return X, rnorm, lu, it


def solve_steady_ns(
    space, props, theta, tol=1e-10, re_continuation=(100.0, 300.0), x0=None, max_iter=40,
    problem=None,
):
    """Steady Navier-Stokes solution for peak inflow speed ``theta`` (cm/s).

    Without a warm start ``x0``, the inflow is ramped through the Reynolds
    numbers in ``re_continuation`` that lie below the target.
    """
    if problem is None:
        problem = NavierStokesProblem(space, props)
    geom = space.geom
    stages = []
    if x0 is None and theta > 0:
        Re_target = theta_to_reynolds(theta, geom, props)
        stages = [reynolds_to_theta(r, geom, props) for r in re_continuation if r < 0.999 * Re_target]
    stages.append(theta)
    X = x0
    lu = None
    total = 0
    k = 0
    prev = 0.0
    while k < len(stages):
        th = stages[k]
        try:
            X_new, rnorm, lu, its = newton_solve(
                problem, th, X0=X, tol=tol, max_iter=max_iter, lu=lu, stage=k
            )
        except (NewtonError, SingularSystemError) as exc:
            if th - prev < 1e-3 * max(abs(theta), 1e-300) or len(stages) > 20:
                if isinstance(exc, NewtonError):
                    exc.stage = th
                raise
            # insert an intermediate continuation stage
            stages.insert(k, 0.5 * (prev + th))
            lu = None
            continue
        X = X_new
        total += its
        prev = th
        k += 1
    U, P = space.split(X)
    return FlowSolution(space, props, U, P, float(theta), rnorm, total, _lu=lu)


def write_solution(sol, path):
    """Plain-text solution file; floats at 17 significant digits."""
    with open(path, "w") as fh:
        fh.write("sbiwss-solution 1\n")
        fh.write(f"theta {sol.theta:.17g}\n")
        fh.write(f"residual {sol.residual_norm:.17g}\n")
        fh.write(f"rho0 {sol.props.rho0:.17g}\n")
        fh.write(f"nu {sol.props.nu:.17g}\n")
        fh.write(f"velocity {len(sol.velocity)}\n")
        np.savetxt(fh, sol.velocity, fmt="%.17g")
        fh.write(f"pressure {len(sol.pressure)}\n")
        np.savetxt(fh, sol.pressure[:, None], fmt="%.17g")


def read_solution(path, space):
    with open(path) as fh:
        if fh.readline().split() != ["sbiwss-solution", "1"]:
            raise ValueError(f"{path}: not a solution file")
        head = {}
        for _ in range(4):
            k, v = fh.readline().split()
            head[k] = float(v)
        n = int(fh.readline().split()[1])
        U = np.loadtxt(fh, max_rows=n, ndmin=2)
        m = int(fh.readline().split()[1])
        P = np.loadtxt(fh, max_rows=m, ndmin=1)
    if n != space.n_nodes or m != space.n_pressure:
        raise ValueError(f"{path}: solution does not match the discretization")
    props = FluidProps(rho0=head["rho0"], nu=head["nu"])
    return FlowSolution(space, props, U, P, head["theta"], head["residual"])
