"""Plot-ready tables from sweep records, one tidy CSV per figure family."""

import itertools
import math
import os

import numpy as np
from scipy import stats

# scatter grid: noise levels and resolutions at the highest Reynolds number
SCATTER_KAPPA = (0.05, 0.10, 0.15)
SCATTER_VPD = (9, 15, 28)
SCATTER_RE = 1000.0

FAMILIES = ("vpd", "re", "noise", "mesh", "fits", "scatter")

_COLUMNS = {
    "vpd": ("Re", "kappa", "vpd", "e_sbi", "e_mri"),
    "re": ("kappa", "vpd", "Re", "e_sbi", "e_mri"),
    "noise": ("Re", "vpd", "kappa", "e_sbi", "e_mri"),
    "mesh": ("Re", "kappa", "vpd", "mesh_id", "e_sbi", "e_mri"),
    "fits": ("Re", "vpd", "slope", "intercept", "r2", "n_points"),
}
_FILES = {
    "vpd": "error_vs_vpd.csv",
    "re": "error_vs_re.csv",
    "noise": "error_vs_noise.csv",
    "mesh": "error_vs_mesh.csv",
    "fits": "noise_fits.csv",
}

PLOT_SCRIPT = '''"""Quick-look plots of the exported tables (needs matplotlib)."""
import csv
import glob
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))


def rows(name):
    with open(os.path.join(here, name)) as fh:
        return list(csv.DictReader(fh))


def lines(name, group, xkey, out):
    series = defaultdict(list)
    for r in rows(name):
        series[tuple(r[k] for k in group)].append((float(r[xkey]), float(r["e_sbi"]), float(r["e_mri"])))
    if not series:
        return
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for key, pts in sorted(series.items()):
        pts.sort()
        x, es, em = zip(*pts)
        lab = " ".join(f"{g}={v}" for g, v in zip(group, key))
        axes[0].plot(x, es, "o-", label=lab)
        axes[1].plot(x, em, "o-", label=lab)
    axes[0].set_title("SBI")
    axes[1].set_title("MRI")
    for ax in axes:
        ax.set_xlabel(xkey)
        ax.set_ylabel("relative L2 error (%)")
    axes[0].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(os.path.join(here, out), dpi=120)
    plt.close(fig)


lines("error_vs_vpd.csv", ("Re", "kappa"), "vpd", "error_vs_vpd.png")
lines("error_vs_re.csv", ("kappa", "vpd"), "Re", "error_vs_re.png")
lines("error_vs_noise.csv", ("Re", "vpd"), "kappa", "error_vs_noise.png")

files = sorted(glob.glob(os.path.join(here, "scatter_*.csv")))
if files:
    n = len(files)
    fig, axes = plt.subplots(1, n, figsize=(3 * n, 3), squeeze=False)
    for ax, f in zip(axes[0], files):
        r = rows(os.path.basename(f))
        t = [float(v["true_wss"]) for v in r]
        ax.plot(t, [float(v["mri_wss"]) for v in r], ".", ms=3, label="MRI")
        ax.plot(t, [float(v["sbi_wss"]) for v in r], ".", ms=3, label="SBI")
        lim = [0, max(t) * 1.1]
        ax.plot(lim, lim, "k-", lw=0.5)
        ax.set_title(os.path.basename(f)[8:-4], fontsize=7)
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(os.path.join(here, "scatter.png"), dpi=120)
'''


def _fmt(v):
    if isinstance(v, str):
        return v
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def cell_means(records, mesh_id=None):
    """{(Re, kappa, vpd, mesh_id): (mean e_sbi, mean e_mri)} over successful replicates."""
    acc = {}
    for r in records:
        if not r.ok or (mesh_id is not None and r.cell.mesh_id != mesh_id):
            continue
        c = r.cell
        acc.setdefault((c.Re, c.kappa, c.vpd, c.mesh_id), []).append((r.e_sbi, r.e_mri))
    return {k: tuple(np.mean(v, axis=0)) for k, v in sorted(acc.items())}


def default_mesh(records):
    """Mesh used for the single-mesh families: the truth mesh when the records
    contain it, otherwise the finest mesh present."""
    if not records:
        return None
    present = {r.cell.mesh_id for r in records}
    cfg = records[0].config
    if cfg.get("truth_mesh") in present:
        return cfg["truth_mesh"]
    meshes = cfg.get("meshes", {})
    return min(present, key=lambda m: (meshes.get(m, {}).get("h", math.inf), m))


def family_rows(records, family, mesh_id=None):
    if family == "mesh":
        means = cell_means(records)
        return [(Re, k, v, m, es, em) for (Re, k, v, m), (es, em) in means.items()]
    if mesh_id is None:
        mesh_id = default_mesh(records)
    means = cell_means(records, mesh_id)
    if family == "vpd":
        rows = [(Re, k, v, es, em) for (Re, k, v, _), (es, em) in means.items()]
        return sorted(rows)
    if family == "re":
        rows = [(k, v, Re, es, em) for (Re, k, v, _), (es, em) in means.items()]
        return sorted(rows)
    if family == "noise":
        rows = [(Re, v, k, es, em) for (Re, k, v, _), (es, em) in means.items()]
        return sorted(rows)
    if family == "fits":
        return noise_fits(records, mesh_id)
    raise ValueError(f"unknown figure family {family!r}")


def noise_fits(records, mesh_id=None):
    """Least-squares line of mean e_sbi (%) against kappa (%) per (Re, vpd)."""
    if mesh_id is None:
        mesh_id = default_mesh(records)
    rows = sorted(family_rows(records, "noise", mesh_id))
    out = []
    for (Re, v), grp in itertools.groupby(rows, key=lambda r: (r[0], r[1])):
        grp = list(grp)
        k = np.array([100.0 * g[2] for g in grp])
        e = np.array([g[3] for g in grp])
        if len(np.unique(k)) < 2:
            out.append((Re, v, math.nan, math.nan, math.nan, len(k)))
            continue
        fit = stats.linregress(k, e)
        out.append((Re, v, fit.slope, fit.intercept, fit.rvalue**2, len(k)))
    return out


def scatter_rows(records, Re, kappa, vpd, mesh_id=None, replicate=0):
    if mesh_id is None:
        mesh_id = default_mesh(records)
    for r in records:
        c = r.cell
        if (r.ok and c.Re == Re and c.kappa == kappa and c.vpd == vpd
                and c.mesh_id == mesh_id and c.replicate == replicate):
            p = r.profiles
            return list(zip(p["truth"], p["mri"], p["sbi"]))
    return None


def export_plots(records, outdir, families=FAMILIES, mesh_id=None):
    """Write the tables for ``families`` into ``outdir``; returns the written paths.

    Empty record lists give header-only tables.
    """
    os.makedirs(outdir, exist_ok=True)
    written = []
    for fam in families:
        if fam == "scatter":
            for k, v in itertools.product(SCATTER_KAPPA, SCATTER_VPD):
                rows = scatter_rows(records, SCATTER_RE, k, float(v), mesh_id)
                if rows is None:
                    continue
                p = os.path.join(outdir, f"scatter_Re{SCATTER_RE:g}_kappa{k:g}_vpd{v}.csv")
                _write(p, ("true_wss", "mri_wss", "sbi_wss"), rows)
                written.append(p)
            continue
        p = os.path.join(outdir, _FILES[fam])
        _write(p, _COLUMNS[fam], family_rows(records, fam, mesh_id))
        written.append(p)
    p = os.path.join(outdir, "plot_errors.py")
    with open(p, "w") as fh:
        fh.write(PLOT_SCRIPT)
    written.append(p)
    return written
