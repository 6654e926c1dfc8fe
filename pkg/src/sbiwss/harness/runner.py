"""Single runs and sweeps over (Re, kappa, VPD, mesh, replicate) cells."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import hashlib
import itertools
import json
import logging
import math
import os
import time
import traceback

import numpy as np

from ..fem.evaluate import compute_wss
from ..fem.navier_stokes import reynolds_to_theta, solve_steady_ns, write_solution
from ..fem.space import FlowSpace
from ..meshing import mesh_from_geometry, write_mesh
from ..metrics import build_gamma, relative_l2_error
from ..mri_synth import PsfOperator, VoxelData, VoxelGrid, add_noise
from ..mri_wss import mri_wss_profile
from ..sbi import ForwardModel, OptimizerSettings, SbiProblem, optimize, plug_in_theta, sbi_wss
from .config import Config, resolve

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("geometry", "Re", "kappa", "vpd", "mesh_id", "seed", "e_sbi", "e_mri")
SUMMARY_COLUMNS = (
    "geometry", "Re", "kappa", "vpd", "mesh_id", "n", "n_failed",
    "e_sbi_mean", "e_sbi_std", "e_mri_mean", "e_mri_std",
)


def fmt_float(x):
    """Shortest text that reads back to the same double."""
    return repr(float(x))


@dataclass(frozen=True, order=True)
class Cell:
    geometry: str
    Re: float
    kappa: float
    vpd: float
    mesh_id: str
    replicate: int = 0

    @property
    def tag(self):
        return (
            f"{self.geometry}_Re{self.Re:g}_k{self.kappa:g}_vpd{self.vpd:g}"
            f"_{self.mesh_id}_r{self.replicate}"
        )


def cell_seed(master_seed, cell):
    """Noise seed of a cell: master seed plus a stable hash of its coordinates.

    Re, the noise level and the reconstruction mesh are left out on purpose:
    cells that differ only in those share one standard-normal draw, scaled by
    kappa, so trends along Re, kappa and mesh are free of sampling noise
    between draws.
    """
    key = f"{int(master_seed)}|{cell.geometry}|{cell.vpd!r}|{cell.replicate}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def sweep_cells(config):
    sw = config["sweep"]
    geom = config.geometry.name
    cells = [
        Cell(geom, float(Re), float(k), float(v), m, r)
        for Re, k, v, m, r in itertools.product(
            sw["Re"], sw["kappa"], sw["vpd"], sw["mesh"], range(sw["seeds"])
        )
    ]
    return sorted(set(cells))


@dataclass
class RunRecord:
    cell: Cell
    seed: int
    config: dict = field(repr=False)
    status: str = "ok"
    failure_stage: str = None
    diagnostics: str = None
    e_sbi: float = math.nan
    e_mri: float = math.nan
    theta_star: float = math.nan
    theta_true: float = math.nan
    cost: float = math.nan
    iterations: int = 0
    n_forward: int = 0
    converged: bool = False
    wall_clock: float = 0.0
    artifacts: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict, repr=False)

    @property
    def ok(self):
        return self.status == "ok"

    def csv_row(self):
        c = self.cell
        vals = (c.Re, c.kappa, c.vpd, self.e_sbi, self.e_mri)
        return ",".join([c.geometry, *map(fmt_float, vals[:3]), c.mesh_id, str(self.seed),
                         *map(fmt_float, vals[3:])])

    def to_dict(self):
        d = asdict(self)
        d["cell"] = asdict(self.cell)
        d["profiles"] = {k: np.asarray(v).tolist() for k, v in self.profiles.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cell"] = Cell(**d["cell"])
        d["profiles"] = {k: np.asarray(v) for k, v in d.get("profiles", {}).items()}
        return cls(**d)


class Workspace:
    """Per-process caches of meshes, spaces, truth solutions and operators.

    Everything cached is a pure function of the configuration and the cache
    key, so reuse never changes downstream numbers.
    """

    def __init__(self, config):
        self.config = config
        self.geom = config.geometry
        self.props = config.props
        self.region = config.region
        self._spaces = {}
        self._truth = {}
        self._psf = {}
        self._forward = {}
        self._gamma = {}

    def space(self, mesh_id):
        sp = self._spaces.get(mesh_id)
        if sp is None:
            mesh = mesh_from_geometry(self.geom, self.config.mesh_h(mesh_id))
            sp = FlowSpace(mesh, self.geom)
            self._spaces[mesh_id] = sp
        return sp

    @property
    def truth_mesh(self):
        return self.config["truth_mesh"]

    def truth(self, Re):
        sol = self._truth.get(Re)
        if sol is None:
            sv = self.config["solver"]
            theta = reynolds_to_theta(Re, self.geom, self.props)
            sol = solve_steady_ns(
                self.space(self.truth_mesh), self.props, theta, tol=float(sv["tol"]),
                re_continuation=tuple(sv["continuation"]), max_iter=int(sv["max_iter"]),
            )
            sol._lu = None
            self._truth[Re] = sol
        return sol

    def grid(self, vpd):
        return VoxelGrid.for_vessel(self.geom, vpd, self.region)

    def psf(self, mesh_id, vpd):
        key = (mesh_id, vpd)
        op = self._psf.get(key)
        if op is None:
            p = self.config["psf"]
            op = PsfOperator(
                self.space(mesh_id).mesh, self.grid(vpd), order=int(p["order"]),
                curved_subdiv=int(p["curved_subdiv"]),
            )
            self._psf[key] = op
        return op

    def forward(self, mesh_id):
        fw = self._forward.get(mesh_id)
        if fw is None:
            sv = self.config["solver"]
            fw = ForwardModel(self.space(mesh_id), self.props, tol=float(sv["tol"]), max_iter=int(sv["max_iter"]))
            self._forward[mesh_id] = fw
        return fw

    def gamma(self, vpd):
        g = self._gamma.get(vpd)
        if g is None:
            gc = self.config["gamma"]
            g = build_gamma(self.geom, self.psf(self.truth_mesh, vpd).grid, int(gc["samples"]), gc["side"])
            self._gamma[vpd] = g
        return g

    def truth_wss(self, Re, vpd):
        key = ("wss", Re, vpd)
        w = self._truth.get(key)
        if w is None:
            w = compute_wss(self.truth(Re), self.gamma(vpd))
            self._truth[key] = w
        return w


_WORKSPACES = {}
_WORKSPACE_KEYS = ("geometry", "fluid", "scan_region", "gamma", "meshes", "truth_mesh", "solver", "psf")


def workspace(config):
    """Shared workspace for configs that agree on everything cached."""
    key = json.dumps({k: config.raw[k] for k in _WORKSPACE_KEYS}, sort_keys=True, default=str)
    ws = _WORKSPACES.get(key)
    if ws is None:
        ws = _WORKSPACES[key] = Workspace(config)
    return ws


def _settings(config):
    opt = dict(config["optimizer"])
    opt.pop("box_factor")
    return OptimizerSettings(forward_tol=float(config["solver"]["tol"]), **opt)


def _write_artifacts(outdir, ws, cell, data, clean, truth, res, op_recon, profiles):
    os.makedirs(outdir, exist_ok=True)
    paths = {}

    def path(name):
        p = os.path.join(outdir, name)
        paths[name.split(".")[0]] = p
        return p

    # panels (a)-(f): mesh, truth flow, clean and noisy data, SBI flow, SBI voxel image
    write_mesh(res.solution.mesh, path("a_mesh.txt"))
    write_solution(truth, path("b_truth_solution.txt"))
    clean.write(path("c_clean_voxels.txt"))
    data.write(path("d_noisy_voxels.txt"))
    write_solution(res.solution, path("e_sbi_solution.txt"))
    sbi_img = VoxelData(op_recon.grid, op_recon.apply(res.solution.velocity))
    sbi_img.write(path("f_sbi_voxels.txt"))
    if cell.mesh_id != ws.truth_mesh:
        write_mesh(truth.mesh, path("truth_mesh.txt"))
    for name, prof in profiles.items():
        prof.to_csv(path(f"wss_{name}.csv"))
    res.to_json(path("sbi_result.json"))
    return paths


def run_single(config, cell, seed=None, outdir=None, artifacts=None):
    """Run one cell end to end and return its RunRecord.

    ``seed`` defaults to the cell's derived seed.  Failures in any stage are
    caught and recorded with the stage name.
    """
    if not isinstance(config, Config):
        config = resolve(config)
    if seed is None:
        seed = cell_seed(config["master_seed"], cell)
    if artifacts is None:
        artifacts = bool(config["output"]["artifacts"])
    rec = RunRecord(cell=cell, seed=int(seed), config=config.raw)
    ws = workspace(config)
    t0 = time.perf_counter()
    stage = "setup"
    try:
        stage = "truth"
        truth = ws.truth(cell.Re)
        rec.theta_true = float(truth.theta)
        stage = "psf"
        op = ws.psf(ws.truth_mesh, cell.vpd)
        clean = VoxelData(op.grid, op.apply(truth.velocity))
        stage = "noise"
        data = add_noise(clean, cell.kappa, rec.seed, truth.peak_speed)
        stage = "mri_wss"
        gam = ws.gamma(cell.vpd)
        tw = ws.truth_wss(cell.Re, cell.vpd)
        mw = mri_wss_profile(data, gam, ws.props)
        stage = "sbi"
        op_r = ws.psf(cell.mesh_id, cell.vpd)
        theta0 = plug_in_theta(data)
        box = (0.0, float(config["optimizer"]["box_factor"]) * theta0)
        prob = SbiProblem(ws.forward(cell.mesh_id), op_r, data, box=box, theta0=theta0, settings=_settings(config))
        res = optimize(prob)
        rec.theta_star = res.theta_star
        rec.cost = res.cost
        rec.iterations = len(res.trace) - 1
        rec.n_forward = res.n_forward
        rec.converged = bool(res.converged)
        stage = "sbi_wss"
        sw = sbi_wss(res, gam)
        stage = "metrics"
        q = int(config["gamma"]["quad_order"])
        rec.e_sbi = float(relative_l2_error(tw, sw, q))
        rec.e_mri = float(relative_l2_error(tw, mw, q))
        rec.profiles = {"s": tw.s, "truth": tw.wss, "mri": mw.wss, "sbi": sw.wss}
        if artifacts:
            stage = "artifacts"
            if outdir is None:
                outdir = os.path.join(config["output"]["dir"], "runs", cell.tag)
            rec.artifacts = _write_artifacts(
                outdir, ws, cell, data, clean, truth, res, op_r,
                {"truth": tw, "mri": mw, "sbi": sw},
            )
    except Exception as exc:  # noqa: BLE001 - every stage failure becomes a record
        rec.status = "failed"
        rec.failure_stage = stage
        rec.diagnostics = f"{type(exc).__name__}: {exc}\n" + traceback.format_exc(limit=4)
        log.warning("cell %s failed in stage %s: %s", cell.tag, stage, exc)
    rec.wall_clock = time.perf_counter() - t0
    return rec


# -- sweeps -------------------------------------------------------------------------


def _run_group(raw, cells, outdir):
    config = Config(raw)
    out = []
    for c in cells:
        d = os.path.join(outdir, "runs", c.tag) if outdir else None
        out.append(run_single(config, c, outdir=d))
    return out


def _groups(cells):
    """Cells sharing a truth solution and voxel grid run together in one task."""
    key = lambda c: (c.geometry, c.Re, c.vpd, c.mesh_id)  # noqa: E731
    return [list(g) for _, g in itertools.groupby(sorted(cells, key=key), key=key)]


def run_sweep(config, cells=None, outdir=None, workers=None, write=True):
    """Run every cell (default: the configured Cartesian product) and write results.

    Returns the records in sorted cell order.
    """
    if not isinstance(config, Config):
        config = resolve(config)
    if cells is None:
        cells = sweep_cells(config)
    workers = int(workers or config["workers"])
    if outdir is None and write:
        outdir = config["output"]["dir"]
    groups = _groups(cells)
    art_dir = outdir if config["output"]["artifacts"] else None
    records = []
    if workers == 1 or len(groups) == 1:
        for g in groups:
            records.extend(_run_group(config.raw, g, art_dir))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_group, config.raw, g, art_dir) for g in groups]
            for f in futs:
                records.extend(f.result())
    records.sort(key=lambda r: (r.cell, r.seed))
    if write:
        write_results(records, outdir, config)
    return records


def summarize(records):
    """Mean and sample std of the errors over replicates of each cell."""
    rows = []
    key = lambda r: (r.cell.geometry, r.cell.Re, r.cell.kappa, r.cell.vpd, r.cell.mesh_id)  # noqa: E731
    for k, grp in itertools.groupby(sorted(records, key=key), key=key):
        grp = list(grp)
        ok = [r for r in grp if r.ok]
        es = np.array([r.e_sbi for r in ok])
        em = np.array([r.e_mri for r in ok])
        ddof = 1 if len(ok) > 1 else 0
        stats = []
        for a in (es, em):
            stats += [a.mean(), a.std(ddof=ddof)] if len(a) else [math.nan, math.nan]
        rows.append(k + (len(grp), len(grp) - len(ok)) + tuple(stats))
    return rows


def write_results(records, outdir, config=None):
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "results.csv"), "w") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for r in records:
            fh.write(r.csv_row() + "\n")
    with open(os.path.join(outdir, "summary.csv"), "w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in summarize(records):
            g, Re, k, v, m, n, nf = row[:7]
            fh.write(",".join([g, fmt_float(Re), fmt_float(k), fmt_float(v), m, str(n), str(nf)]))
            fh.write("," + ",".join(fmt_float(x) for x in row[7:]) + "\n")
    with open(os.path.join(outdir, "records.jsonl"), "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    if config is not None:
        with open(os.path.join(outdir, "config.yaml"), "w") as fh:
            fh.write(config.dump())


def read_records(path):
    if os.path.isdir(path):
        path = os.path.join(path, "records.jsonl")
    with open(path) as fh:
        return [RunRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
