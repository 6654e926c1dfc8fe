"""Simulation-based imaging: fit the inflow of a flow model to voxel data.

The misfit

    I(theta) = sum_i alpha_i / 2 |Xi_i(v(theta)) - vbar_i|^2

is minimized over the peak inflow speed ``theta`` with a projected 1D BFGS
(secant) method and Armijo backtracking.  Gradients come from the discrete
adjoint of the converged Newton residual.
"""

from dataclasses import dataclass, field
import json
import logging
import math
import time

import numpy as np

from .fem.evaluate import compute_wss
from .fem.navier_stokes import (
    FlowSolution,
    NavierStokesProblem,
    NewtonError,
    SingularSystemError,
    newton_solve,
    reynolds_to_theta,
    solve_steady_ns,
    theta_to_reynolds,
)
from .profile import Method

log = logging.getLogger(__name__)

FORWARD_TOL = 1e-12
ANCHOR_BASE_RE = 50.0  # anchors at Re = 50 * 2**(k/2)


class ForwardSolveError(RuntimeError):
    pass


class AdjointError(RuntimeError):
    pass


def _refined_solve(lu, A, b, trans=False, tol=1e-13, floor=1e-10, max_iter=40):
    """Solve A x = b (or A^T x = b) with iterative refinement around a nearby LU.

    Stops at relative residual ``tol``, or when progress stalls below ``floor``
    (round-off level).
    """
    t = "T" if trans else "N"
    op = A.T if trans else A
    x = lu.solve(b, trans=t)
    bn = np.linalg.norm(b)
    if bn == 0:
        return x
    prev = np.inf
    for _ in range(max_iter):
        r = b - op @ x
        rn = np.linalg.norm(r)
        if rn <= tol * bn:
            return x
        if rn > 0.5 * prev:
            if rn <= floor * bn:
                return x
            raise AdjointError(f"iterative refinement stalled at {rn / bn:.3e}")
        prev = rn
        x = x + lu.solve(r, trans=t)
    raise AdjointError("iterative refinement did not converge")


@dataclass
class _State:
    theta: float
    X: np.ndarray
    lu: object = None  # factorization near X (possibly stale)
    J: object = None  # exact Jacobian at X, assembled on demand
    dX: np.ndarray = None  # dX/dtheta at X
    residual: float = 0.0
    iterations: int = 0


class AnchorCache:
    """From-scratch solutions on a fixed ladder of inflow speeds.

    Every anchor is a pure function of the discretization and its ladder
    index, so using anchors as warm starts keeps results independent of
    which runs came before.
    """

    def __init__(self, problem, tol=FORWARD_TOL):
        self.problem = problem
        self.tol = tol
        self._store = {}

    def ladder_theta(self, k):
        s = self.problem.space
        return reynolds_to_theta(ANCHOR_BASE_RE * 2.0 ** (k / 2.0), s.geom, self.problem.props)

    def nearest_index(self, theta):
        s = self.problem.space
        Re = theta_to_reynolds(theta, s.geom, self.problem.props)
        return max(0, int(round(2.0 * math.log2(max(Re, 1e-300) / ANCHOR_BASE_RE))))

    def get(self, theta):
        k = self.nearest_index(theta)
        st = self._store.get(k)
        if st is None:
            th = self.ladder_theta(k)
            sol = solve_steady_ns(
                self.problem.space, self.problem.props, th, tol=self.tol, problem=self.problem
            )
            st = _State(th, sol.X, lu=sol._lu, residual=sol.residual_norm)
            self._store[k] = st
        return st


class ForwardModel:
    """Steady flow solutions as a function of ``theta`` on one discretization.

    Each new solve starts from the last solution of this model, extrapolated
    with its parameter tangent, or from the nearest anchor for the first
    solve.  Call ``reset`` to start a new independent run.
    """

    def __init__(self, space, props, tol=FORWARD_TOL, anchors=None, max_iter=40):
        self.space = space
        self.props = props
        self.tol = tol
        self.max_iter = max_iter
        self.problem = anchors.problem if anchors is not None else NavierStokesProblem(space, props)
        self.anchors = anchors if anchors is not None else AnchorCache(self.problem, tol)
        self.n_solves = 0
        self.reset()

    def reset(self):
        self._last = None
        self._current = None

    def _start(self, theta):
        base = self._last
        if base is None:
            base = self.anchors.get(theta)
        X0 = base.X.copy()
        if base.dX is not None:
            X0 += (theta - base.theta) * base.dX
        return X0, base.lu

    def solve(self, theta):
        """Converged state at ``theta``; raises ForwardSolveError on failure."""
        theta = float(theta)
        self.n_solves += 1
        p = self.problem
        if theta == 0.0:
            st = _State(0.0, np.zeros(self.space.n_dofs), lu=self._last.lu if self._last else None)
        else:
            X0, lu = self._start(theta)
            try:
                X, rn, lu, its = newton_solve(p, theta, X0=X0, tol=self.tol, max_iter=self.max_iter, lu=lu)
            except (NewtonError, SingularSystemError) as exc:
                log.debug("warm Newton failed at theta=%g (%s); solving from scratch", theta, exc)
                try:
                    sol = solve_steady_ns(self.space, self.props, theta, tol=self.tol, problem=p)
                except (NewtonError, SingularSystemError) as exc2:
                    raise ForwardSolveError(f"forward solve failed at theta={theta:g}: {exc2}") from exc2
                X, rn, lu, its = sol.X, sol.residual_norm, sol._lu, sol.newton_iterations
            st = _State(theta, X, lu=lu, residual=rn, iterations=its)
        self._current = st
        return st

    def accept(self, st):
        """Make ``st`` the warm start (with its tangent) for later solves."""
        self.tangent(st)
        self._last = st

    def jacobian(self, st):
        if st.J is None:
            st.J = self.problem.jacobian(st.X).tocsc()
        if st.lu is None:
            st.lu = self.problem.factorize(st.X)
        return st.J, st.lu

    def _solve_with(self, st, b, trans):
        J, lu = self.jacobian(st)
        try:
            return _refined_solve(lu, J, b, trans=trans)
        except AdjointError:
            st.lu = self.problem.factorize(st.X)
            return _refined_solve(st.lu, J, b, trans=trans)

    def tangent(self, st):
        if st.dX is None:
            st.dX = -self._solve_with(st, self.problem.dR_dtheta, trans=False)
        return st.dX

    def adjoint(self, st, dI_dX):
        """Adjoint solution lambda of J^T lambda = -dI/dX."""
        return self._solve_with(st, -dI_dX, trans=True)

    def solution(self, st):
        U, P = self.space.split(st.X)
        return FlowSolution(self.space, self.props, U, P, st.theta, st.residual, st.iterations)


@dataclass
class OptimizerSettings:
    gtol_rel: float = 1e-8
    max_iter: int = 100
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    initial_scaling: str = "gauss-newton"  # or "fraction"
    first_step_frac: float = 0.25  # "fraction": first step changes theta by this much
    forward_tol: float = FORWARD_TOL


@dataclass
class SbiProblem:
    """Voxel data, its point-spread operator and the flow model to fit.

    ``psf`` must be built on ``forward.space.mesh`` with the data's grid.
    """

    forward: ForwardModel
    psf: object
    data: object
    box: tuple = None
    theta0: float = None
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if not self.psf.grid.same_lattice(self.data.grid):
            raise ValueError("data grid does not match the point-spread operator grid")
        self.mask = self.psf.grid.mask & self.data.grid.mask
        if self.theta0 is None:
            self.theta0 = plug_in_theta(self.data)
        if self.box is None:
            self.box = (0.0, 4.0 * self.theta0)
        lo, hi = self.box
        if not (0 <= lo <= self.theta0 <= hi):
            raise ValueError(f"initial theta {self.theta0} outside the admissible box {self.box}")

    # -- misfit -------------------------------------------------------------

    def _misfit(self, st):
        U, _ = self.forward.space.split(st.X)
        Xi = self.psf.apply(U)
        r = np.where(self.mask[:, None], Xi - self.data.values, 0.0)
        return r

    def cost_of(self, st):
        r = self._misfit(st)
        return 0.5 * float(np.sum(r * r))

    def gauss_newton_curvature(self, st):
        """|d Xi / d theta|^2 over the masked voxels."""
        U, _ = self.forward.space.split(self.forward.tangent(st))
        dXi = np.where(self.mask[:, None], self.psf.apply(U), 0.0)
        return float(np.sum(dXi * dXi))

    def gradient_of(self, st):
        r = self._misfit(st)
        g = self.psf.matrix.T @ r  # (n_nodes, 2)
        n = self.forward.space.n_nodes
        dI_dX = np.zeros(self.forward.space.n_dofs)
        dI_dX[:n] = g[:, 0]
        dI_dX[n : 2 * n] = g[:, 1]
        lam = self.forward.adjoint(st, dI_dX)
        return float(lam @ self.forward.problem.dR_dtheta)


def plug_in_theta(data):
    """3/2 times the mean x1-velocity of the leftmost column holding masked voxels."""
    g = data.grid
    M = g.mask.reshape(g.ny, g.nx)
    cols = np.flatnonzero(M.any(axis=0))
    if len(cols) == 0:
        raise ValueError("voxel data has an empty mask")
    col = cols[0]
    u = data.values[:, 0].reshape(g.ny, g.nx)[M[:, col], col]
    theta = 1.5 * float(np.mean(u))
    if not theta > 0:
        raise ValueError("plug-in inflow estimate is not positive")
    return theta


def sbi_cost(theta, problem):
    st = problem.forward.solve(theta)
    return problem.cost_of(st)


def sbi_gradient(theta, problem):
    """dI/dtheta by the discrete adjoint."""
    st = problem.forward.solve(theta)
    return problem.gradient_of(st)


def fd_gradient(theta, problem, h=None):
    """Central finite-difference derivative of the misfit (for verification)."""
    if h is None:
        h = 1e-4 * abs(theta)
    return (sbi_cost(theta + h, problem) - sbi_cost(theta - h, problem)) / (2 * h)


@dataclass
class SbiResult:
    theta_star: float
    cost: float
    grad_norm: float
    converged: bool
    message: str
    trace: list
    theta0: float
    box: tuple
    n_forward: int
    elapsed: float
    solution: object = field(default=None, repr=False)
    wss: object = field(default=None, repr=False)

    def to_dict(self):
        return {
            "theta_star": self.theta_star,
            "cost": self.cost,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "message": self.message,
            "theta0": self.theta0,
            "box": list(self.box),
            "n_forward": self.n_forward,
            "elapsed": self.elapsed,
            "trace": self.trace,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["box"] = tuple(d["box"])
        return cls(**d)


def _initial_inverse_hessian(problem, st, theta, g, lo, hi):
    cfg = problem.settings
    if cfg.initial_scaling == "gauss-newton":
        c = problem.gauss_newton_curvature(st)
        if c > 0:
            return 1.0 / c
    elif cfg.initial_scaling != "fraction":
        raise ValueError(f"unknown initial scaling {cfg.initial_scaling!r}")
    return cfg.first_step_frac * max(abs(theta), 1e-3 * (hi - lo)) / abs(g)


def optimize(problem, reset=True):
    """Projected BFGS (1D secant) with Armijo backtracking."""
    t0 = time.perf_counter()
    fwd = problem.forward
    if reset:
        fwd.reset()
    n0 = fwd.n_solves
    cfg = problem.settings
    lo, hi = problem.box
    theta = float(np.clip(problem.theta0, lo, hi))
    st = fwd.solve(theta)
    fwd.accept(st)
    f = problem.cost_of(st)
    g = problem.gradient_of(st)
    gtol = cfg.gtol_rel * max(1.0, abs(f))
    trace = [{"iter": 0, "theta": theta, "cost": f, "grad": g, "step": 0.0}]
    H = None
    converged = False
    message = "max iterations reached"

    def proj_grad(th, gr):
        if (th <= lo and gr > 0) or (th >= hi and gr < 0):
            return 0.0
        return gr

    for it in range(1, cfg.max_iter + 1):
        if abs(proj_grad(theta, g)) <= gtol:
            converged = True
            message = "gradient tolerance met"
            break
        if H is None:
            H = _initial_inverse_hessian(problem, st, theta, g, lo, hi)
        d = -H * g
        alpha = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            trial = float(np.clip(theta + alpha * d, lo, hi))
            step = trial - theta
            if step == 0.0:
                break
            try:
                st_new = fwd.solve(trial)
                f_new = problem.cost_of(st_new)
            except ForwardSolveError as exc:
                log.debug("%s; treating cost as +inf", exc)
                f_new = math.inf
            if f_new <= f + cfg.armijo_c1 * g * step:
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            message = "line search failed"
            break
        fwd.accept(st_new)
        g_new = problem.gradient_of(st_new)
        y = g_new - g
        if y * step > 0:
            H = step / y
        theta, f, g, st = trial, f_new, g_new, st_new
        trace.append({"iter": it, "theta": theta, "cost": f, "grad": g, "step": alpha})
    else:
        if abs(proj_grad(theta, g)) <= gtol:
            converged = True
            message = "gradient tolerance met"

    result = SbiResult(
        theta_star=theta,
        cost=f,
        grad_norm=abs(proj_grad(theta, g)),
        converged=converged,
        message=message,
        trace=trace,
        theta0=float(problem.theta0),
        box=(float(lo), float(hi)),
        n_forward=fwd.n_solves - n0,
        elapsed=time.perf_counter() - t0,
        solution=fwd.solution(st),
    )
    return result


def sbi_wss(result, samples):
    """WSS of the reconstructed flow at the comparison samples."""
    prof = compute_wss(result.solution, samples, method=Method.SBI)
    result.wss = prof
    return prof
