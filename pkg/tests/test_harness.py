import csv
import json

import numpy as np
import pytest
import yaml

from sbiwss.harness import (
    DEFAULTS,
    Cell,
    ConfigError,
    cell_seed,
    export_plots,
    load_config,
    noise_fits,
    read_records,
    resolve,
    run_single,
    run_sweep,
    sweep_cells,
)
from sbiwss.harness.cli import main
from sbiwss.harness.export import _FILES, FAMILIES
from sbiwss.harness.runner import RunRecord

SMALL = {
    "truth_mesh": "coarse",
    "sweep": {"Re": [100], "kappa": [0.0, 0.1], "vpd": [9], "mesh": ["coarse"], "seeds": 2},
}


@pytest.fixture(scope="module")
def small():
    return resolve(SMALL)


@pytest.fixture(scope="module")
def small_records(small, tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    return out, run_sweep(small, outdir=str(out), workers=1)


def test_defaults_resolve():
    cfg = resolve()
    assert cfg.region == (1.5, 4.5, -0.4, 0.4)
    assert cfg.props.mu_dyn == pytest.approx(1060 * 2.83e-6)
    assert cfg.geometry.A == 0.18
    assert cfg.mesh_h("fine") == DEFAULTS["meshes"]["fine"]["h"]
    assert yaml.safe_load(cfg.dump()) == cfg.raw


def test_full_sweep_size():
    cells = sweep_cells(resolve())
    assert len(cells) == 3 * 5 * 4 * 3
    assert len(set(cells)) == len(cells)
    cells = sweep_cells(resolve({"sweep": {"seeds": 3}}))
    assert len(cells) == 180 * 3


@pytest.mark.parametrize(
    "over",
    [
        {"sweep": {"kappa": [1.5]}},
        {"sweep": {"Re": []}},
        {"sweep": {"mesh": ["nonexistent"]}},
        {"scan_region": [4.5, 1.5, -0.4, 0.4]},
        {"workers": 0},
        {"geometry": {"A": 0.5}},
        {"no_such_key": 1},
        {"solver": {"bogus": 1}},
    ],
)
def test_invalid_configs(over):
    with pytest.raises(ConfigError):
        resolve(over)


def test_load_config_file(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("sweep:\n  Re: [200]\nmaster_seed: 7\n")
    cfg = load_config(f, workers=2)
    assert cfg["sweep"]["Re"] == [200]
    assert cfg["sweep"]["kappa"] == DEFAULTS["sweep"]["kappa"]
    assert cfg["master_seed"] == 7 and cfg["workers"] == 2
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_seed_depends_only_on_own_cell():
    a = Cell("stenosis", 1000.0, 0.1, 9.0, "fine", 0)
    assert cell_seed(1, a) == cell_seed(1, a)
    assert cell_seed(1, a) != cell_seed(2, a)
    assert cell_seed(1, a) != cell_seed(1, Cell("stenosis", 1000.0, 0.1, 9.0, "fine", 1))
    assert cell_seed(1, a) != cell_seed(1, Cell("stenosis", 1000.0, 0.1, 15.0, "fine", 0))
    # common noise across Reynolds numbers, noise levels and meshes
    assert cell_seed(1, a) == cell_seed(1, Cell("stenosis", 100.0, 0.15, 9.0, "coarse", 0))
    seeds = [cell_seed(20240611, c) for c in sweep_cells(resolve())]
    assert all(0 <= s < 2**64 for s in seeds)


def test_run_single_deterministic(small, tmp_path):
    cell = Cell("stenosis", 100.0, 0.1, 9.0, "coarse", 0)
    a = run_single(small, cell)
    b = run_single(small, cell, outdir=str(tmp_path), artifacts=True)
    assert a.ok and b.ok
    assert a.csv_row() == b.csv_row()
    assert a.e_sbi < a.e_mri
    for name in ("a_mesh.txt", "b_truth_solution.txt", "d_noisy_voxels.txt", "sbi_result.json"):
        assert (tmp_path / name).exists()
    back = RunRecord.from_dict(json.loads(json.dumps(a.to_dict())))
    assert back.csv_row() == a.csv_row()


def test_failed_stage_recorded():
    cfg = resolve({**SMALL, "scan_region": [7.0, 8.0, -0.4, 0.4]})
    rec = run_single(cfg, Cell("stenosis", 100.0, 0.0, 9.0, "coarse", 0))
    assert not rec.ok
    assert rec.failure_stage in ("psf", "noise", "mri_wss")
    assert rec.diagnostics
    assert "failed" in rec.csv_row() or np.isnan(rec.e_sbi)


def test_sweep_outputs(small_records):
    out, recs = small_records
    assert len(recs) == 4
    assert all(r.ok for r in recs)
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert list(rows[0]) == ["geometry", "Re", "kappa", "vpd", "mesh_id", "seed", "e_sbi", "e_mri"]
    # kappa = 0 replicates see identical data
    k0 = [r for r in recs if r.cell.kappa == 0.0]
    assert k0[0].e_sbi == k0[1].e_sbi
    again = read_records(str(out))
    assert [r.csv_row() for r in again] == [r.csv_row() for r in recs]
    assert (out / "summary.csv").exists() and (out / "config.yaml").exists()


def test_export_families(small_records, tmp_path):
    _, recs = small_records
    paths = export_plots(recs, tmp_path, FAMILIES)
    assert len(paths) >= len(FAMILIES)
    with open(tmp_path / "error_vs_noise.csv") as fh:
        head = fh.readline().strip()
    assert head == "Re,vpd,kappa,e_sbi,e_mri"
    fits = noise_fits(recs)
    # columns: Re, vpd, slope, intercept, r2, n_points
    assert len(fits) == 1 and fits[0][:2] == (100.0, 9.0) and fits[0][-1] == 2


def test_export_empty(tmp_path):
    export_plots([], tmp_path, FAMILIES)
    for name in _FILES.values():
        assert len((tmp_path / name).read_text().strip().splitlines()) == 1
    assert not list(tmp_path.glob("scatter*.csv"))


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({**SMALL, "sweep": {**SMALL["sweep"], "kappa": [0.0], "seeds": 1}}))
    assert main(["sweep", str(cfg), "--out", str(tmp_path / "ok")]) == 0
    assert main(["sweep", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({**SMALL, "scan_region": [7.0, 8.0, -0.4, 0.4]}))
    assert main(["sweep", str(bad), "--out", str(tmp_path / "bad")]) == 1
    assert main(["export", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "plots" / "error_vs_noise.csv").exists()
    assert main(["export", str(tmp_path / "nowhere")]) == 2
