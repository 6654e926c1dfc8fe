"""Fast oracle checks of the whole pipeline, printed as one line each."""

import time

import numpy as np
from scipy import integrate

from ..fem.evaluate import compute_wss, discrete_wall_samples, wall_traction_terms
from ..fem.navier_stokes import FluidProps, inflow_profile, reynolds_to_theta, solve_steady_ns
from ..fem.space import FlowSpace
from ..geometry import GeometrySpec
from ..meshing import mesh_from_geometry
from ..metrics import build_gamma
from ..mri_synth import PsfOperator, VoxelData, VoxelGrid, add_noise, psf_profile
from ..sbi import ForwardModel, SbiProblem, fd_gradient, sbi_gradient

REGION = (1.5, 4.5, -0.4, 0.4)


def check_throat():
    g = GeometrySpec()
    want = 0.3 - 0.18 / (0.6 * np.sqrt(2 * np.pi))
    err = abs(float(g.y(3.0)) - want)
    return err < 1e-12, f"|y(c) - closed form| = {err:.1e}"


def check_poiseuille():
    g = GeometrySpec(A=0.0)
    props = FluidProps()
    sp = FlowSpace(mesh_from_geometry(g, 0.1), g)
    theta = reynolds_to_theta(1000, g, props)
    sol = solve_steady_ns(sp, props, theta, tol=1e-12)
    exact = inflow_profile(sp.mesh.nodes[:, 1], theta, g.B0)
    verr = np.abs(sol.velocity - exact).max() / theta
    gam = build_gamma(g, (0.5, 5.5, -1, 1), 50)
    w = compute_wss(sol, gam).wss
    want = props.mu_dyn * 2 * theta / g.B0  # (cm/s)/cm = 1/s, so Pa directly
    werr = np.abs(w / want - 1).max()
    ok = verr < 1e-10 and werr < 1e-8 and abs(want - 0.9433) < 1e-4
    return ok, f"velocity {verr:.1e}, WSS {w.mean():.6f} Pa (rel {werr:.1e})"


def check_noise():
    g = VoxelGrid(400, 250, 0.01, 0.01, 0.0, 0.0)
    clean = VoxelData(g, np.zeros((g.n, 2)))
    d = add_noise(clean, 0.2, 12345, 50.0)
    std = d.values.std(axis=0)
    rel = np.abs(std / 10.0 - 1).max()
    return rel < 0.01, f"std {std.round(4).tolist()} vs 10.0 (rel {rel:.1e})"


def _stenosis(h):
    g = GeometrySpec()
    return g, FlowSpace(mesh_from_geometry(g, h), g)


def check_psf(sp, g):
    grid = VoxelGrid.for_vessel(g, 9, REGION)
    op = PsfOperator(sp.mesh, grid)
    c = grid.centroids
    inner = np.flatnonzero(
        g.contains(c - [2 * grid.dx, 0]) & g.contains(c + [2 * grid.dx, 0])
        & (np.abs(c[:, 1]) + 2 * grid.dy < g.throat_half_width)
    )
    f = lambda s, x0, d: float(psf_profile(s, x0, d, grid.gamma))  # noqa: E731
    errs = []
    for i in inner[:: max(1, len(inner) // 4)]:
        X, Y = c[i]
        ix = integrate.quad(f, X - 2 * grid.dx, X + 2 * grid.dx, args=(X, grid.dx), points=[X], epsabs=1e-14, limit=200)[0]
        iy = integrate.quad(f, Y - 2 * grid.dy, Y + 2 * grid.dy, args=(Y, grid.dy), points=[Y], epsabs=1e-14, limit=200)[0]
        errs.append(abs(op.norm[i] / (ix * iy) - 1))
    ones = op.apply(np.ones((sp.n_nodes, 1)))[op.grid.mask, 0]
    err = max(errs)
    ok = err < 1e-6 and np.abs(ones - 1).max() < 1e-12
    return ok, f"interior normalization {err:.1e} ({len(errs)} voxels), row sums {np.abs(ones - 1).max():.1e}"


def check_appendix(sp, g, sol):
    gam = discrete_wall_samples(sp, build_gamma(g, REGION, 200))
    full, noslip = wall_traction_terms(sol, gam.points, gam.normals)
    rel = np.linalg.norm(full - noslip) / np.linalg.norm(full)
    return rel < 1e-8, f"traction identity {rel:.1e}"


def check_adjoint(sp, g, sol):
    props = sol.props
    grid = VoxelGrid.for_vessel(g, 3, REGION)
    op = PsfOperator(sp.mesh, grid)
    data = add_noise(VoxelData(op.grid, op.apply(sol.velocity)), 0.1, 7, sol.peak_speed)
    fwd = ForwardModel(sp, props)
    pb = SbiProblem(fwd, op, data)
    th = 0.5 * sol.theta
    fwd.reset()
    ga = sbi_gradient(th, pb)
    fwd.reset()
    gf = fd_gradient(th, pb)
    rel = abs(ga - gf) / abs(gf)
    return rel < 1e-6, f"adjoint {ga:.8e} vs FD {gf:.8e} (rel {rel:.1e})"


def run_checks(out=print):
    """Run every check; returns True when all pass."""
    results = []

    def run(name, fn, *args):
        t = time.perf_counter()
        try:
            ok, msg = fn(*args)
        except Exception as exc:  # noqa: BLE001
            ok, msg = False, f"{type(exc).__name__}: {exc}"
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {msg} ({time.perf_counter() - t:.1f} s)")
        results.append(ok)

    run("throat half-width", check_throat)
    run("Poiseuille exactness", check_poiseuille)
    run("noise statistics", check_noise)
    g, sp = _stenosis(0.126)
    sol = solve_steady_ns(sp, FluidProps(), reynolds_to_theta(100, g, FluidProps()), tol=1e-12)
    run("PSF normalization", check_psf, sp, g)
    run("wall traction identity", check_appendix, sp, g, sol)
    run("adjoint gradient", check_adjoint, sp, g, sol)
    return all(results)
