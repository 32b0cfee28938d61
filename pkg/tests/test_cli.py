import subprocess
import sys

import numpy as np

from cutflux.cli import main
from cutflux.mesh import build_structured_mesh
from cutflux.vtk import read_vtk_counts, write_vtk


def test_cli_run_writes_csv_and_vtk(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["run", "--example", "manufactured-g", "--mode", "uniform", "--max-iter", "1", "--out", str(out)])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "iter,N,energy_error,flux_error,eta,eta_gamma,eps,effectivity,max_conservation_defect"
    assert len(lines) == 3
    assert (out / "manufactured-g.csv").exists()
    vtks = sorted(out.glob("*.vtk"))
    assert len(vtks) == 2
    counts = read_vtk_counts(vtks[0])
    assert counts["CELLS"] == counts["CELL_TYPES"] == counts["CELL_DATA"]
    assert counts["POINTS"] == counts["POINT_DATA"]


def test_cli_rejects_bad_input(tmp_path, capsys):
    assert main(["run", "--mu", "-1", "--out", str(tmp_path)]) == 2
    assert main(["run", "--theta-mark", "2", "--out", str(tmp_path)]) == 2
    assert main(["run", "--example", "lshape", "--n0", "3", "--out", str(tmp_path)]) == 2


def test_cli_nonzero_exit_on_hard_failure(tmp_path, monkeypatch):
    import cutflux.driver as drv

    monkeypatch.setattr(drv, "check_conservation", lambda flux, data: 1.0)
    assert main(["run", "--max-iter", "0", "--no-vtk", "--out", str(tmp_path)]) == 1


def test_console_script_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cutflux.cli", "run", "--example", "linear-patch", "--max-iter", "0",
                        "--no-vtk", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.startswith("iter,N,")


def test_write_vtk_roundtrip_counts(tmp_path):
    m = build_structured_mesh("square", 0.0, 1.0, 3)
    p = write_vtk(tmp_path / "m.vtk", m, cell_scalars={"a": np.arange(m.n_cells)},
                  cell_vectors={"v": np.zeros((m.n_cells, 2))}, point_scalars={"u": np.zeros(m.n_vertices)})
    c = read_vtk_counts(p)
    assert c == {"POINTS": m.n_vertices, "CELLS": m.n_cells, "CELL_TYPES": m.n_cells,
                 "CELL_DATA": m.n_cells, "POINT_DATA": m.n_vertices}
