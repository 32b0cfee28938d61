import csv

import numpy as np
import pytest

from cutflux.driver import (CSV_COLUMNS, ExperimentSpec, HardAssertionError, convergence_slope, run_experiment,
                            solve_on_mesh)
from cutflux.mesh import build_structured_mesh
from cutflux.problems import make_example


@pytest.mark.parametrize("kw", [dict(example="nope"), dict(mu=0.0), dict(mode="fast"), dict(theta_mark=0.0),
                                dict(theta_mark=1.5), dict(max_dofs=0)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        ExperimentSpec(**kw)


def test_initial_meshes():
    s = ExperimentSpec(example="lshape")
    m = s.initial_mesh(make_example("lshape"))
    assert m.cell_areas.sum() == pytest.approx(75.0)
    m = ExperimentSpec(example="petal", n0=4).initial_mesh(make_example("petal"))
    assert m.n_cells == 32


def test_convergence_slope():
    N = np.array([10, 100, 1000, 10000, 100000])
    assert convergence_slope(N, N ** -0.5) == pytest.approx(-0.5)
    assert np.isnan(convergence_slope([1], [1]))


def test_amr_run_is_deterministic_and_monotone(tmp_path):
    spec = dict(example="ellipse", mu=100.0, mode="amr", max_dofs=1500, write_vtk=False)
    t1 = run_experiment(ExperimentSpec(out=str(tmp_path / "a"), **spec))
    t2 = run_experiment(ExperimentSpec(out=str(tmp_path / "b"), **spec))
    a = (tmp_path / "a" / "ellipse.csv").read_bytes()
    b = (tmp_path / "b" / "ellipse.csv").read_bytes()
    assert a == b
    N = t1.column("N")
    assert np.all(np.diff(N) >= 0)
    assert N[-1] <= 1500
    with open(tmp_path / "a" / "ellipse.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == len(t1.records) + 1
    assert np.all(t1.column("max_conservation_defect") <= 1e-10)


def test_uniform_run_strictly_increasing(tmp_path):
    t = run_experiment(ExperimentSpec(example="petal", mode="uniform", max_iter=2, out=None, write_vtk=False))
    assert len(t.records) == 3
    assert np.all(np.diff(t.column("N")) > 0)


def test_budget_stops_before_exceeding():
    t = run_experiment(ExperimentSpec(example="ellipse", mode="uniform", max_dofs=2000, out=None, write_vtk=False))
    assert t.column("N")[-1] <= 2000
    assert len(t.records) >= 2


def test_linear_patch_iteration_zero():
    t = run_experiment(ExperimentSpec(example="linear-patch", mode="amr", max_iter=0, out=None, write_vtk=False))
    r = t.records[0]
    assert r.energy_error <= 1e-9 and r.eta <= 1e-9 and r.eta_gamma <= 1e-9


def test_hard_assertion_fires_on_broken_identity(monkeypatch):
    import cutflux.driver as drv

    monkeypatch.setattr(drv, "check_conservation", lambda flux, data: 1.0)
    with pytest.raises(HardAssertionError):
        solve_on_mesh(build_structured_mesh("square", -1.0, 1.0, 8), make_example("ellipse"))


def test_marked_fraction_recorded():
    t = run_experiment(ExperimentSpec(example="petal", mode="amr", max_iter=3, out=None, write_vtk=False))
    frac = t.column("marked_near_interface")[:-1]
    assert np.all((frac >= 0) & (frac <= 1))
