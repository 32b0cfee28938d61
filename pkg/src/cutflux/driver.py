"""Experiment loop: solve, reconstruct, estimate, mark and refine."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .assembly import assemble_residuals, assemble_system
from .estimator import EstimatorReport, estimate
from .flux import ReconstructedFlux, check_conservation, edge_jump_means, irt_condition_defects, reconstruct_flux
from .geometry import CutTopology, classify
from .mesh import Mesh, build_structured_mesh, dorfler_mark, mark_fraction_near, refine, refine_uniform
from .multiplier import MultiplierField, assemble_theta, mixed_identity_defect
from .problems import EXAMPLES, ExactSolution, make_example
from .spaces import PrimalField, build_ch_dofmap

log = logging.getLogger(__name__)

CSV_COLUMNS = ("iter", "N", "energy_error", "flux_error", "eta", "eta_gamma", "eps", "effectivity",
               "max_conservation_defect")

CONSERVATION_TOL = 1e-10
MIXED_TOL = 1e-10
IRT_TOL = 1e-10


class HardAssertionError(AssertionError):
    """A per-iteration identity that must hold exactly was violated."""


@dataclass
class ExperimentSpec:
    """Configuration of one run.

    ``n0`` counts subdivisions per axis of the bounding square (the L-shape
    removes one quadrant, so it must be even there).  ``None`` selects 8 for
    square domains and 16 for the L-shape.
    """

    example: str = "ellipse"
    mu: Optional[float] = None
    mode: str = "amr"
    theta_mark: float = 0.35
    max_dofs: int = 30_000
    max_iter: Optional[int] = None
    gamma: float = 10.0
    gamma_g: float = 0.1
    n0: Optional[int] = None
    out: Optional[str] = None
    write_vtk: bool = True
    check: bool = True

    def __post_init__(self):
        if self.example not in EXAMPLES:
            raise ValueError(f"unknown example {self.example!r}")
        if self.mu is not None and not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.mode not in ("uniform", "amr"):
            raise ValueError("mode must be 'uniform' or 'amr'")
        if not 0 < self.theta_mark <= 1:
            raise ValueError("theta_mark must lie in (0, 1]")
        if self.max_dofs <= 0:
            raise ValueError("max_dofs must be positive")

    def initial_mesh(self, ex: ExactSolution) -> Mesh:
        kind, a, b = ex.domain
        n = self.n0 or (16 if kind == "lshape" else 8)
        return build_structured_mesh(kind, a, b, n)


@dataclass
class StepResult:
    """Everything computed on one mesh."""

    mesh: Mesh
    cut: CutTopology
    u: PrimalField
    multiplier: MultiplierField
    flux: ReconstructedFlux
    report: EstimatorReport
    n_dofs: int
    conservation: float
    mixed_identity: float
    irt_defect: float
    edge_mean_defect: float


@dataclass
class IterationRecord:
    iter: int
    N: int
    energy_error: float
    flux_error: float
    eta: float
    eta_gamma: float
    eps: float
    effectivity: float
    max_conservation_defect: float
    mixed_identity_defect: float = 0.0
    irt_defect: float = 0.0
    n_cells: int = 0
    n_cut: int = 0
    marked_near_interface: float = float("nan")
    seconds: float = 0.0

    def csv_row(self) -> list[str]:
        return [str(self.iter), str(self.N)] + [repr(float(getattr(self, c))) for c in CSV_COLUMNS[2:]]


@dataclass
class ConvergenceTable:
    spec: ExperimentSpec
    records: list[IterationRecord] = field(default_factory=list)
    last: Optional[StepResult] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def slope(self, name: str, window: int = 4) -> float:
        return convergence_slope(self.column("N"), self.column(name), window)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                w.writerow(r.csv_row())
        return path


def convergence_slope(N, values, window: int = 4) -> float:
    """Least-squares slope of ``log(values)`` against ``log(N)`` over the last ``window`` points."""
    N = np.asarray(N, dtype=float)[-window:]
    v = np.asarray(values, dtype=float)[-window:]
    if len(N) < 2:
        return float("nan")
    return float(np.polyfit(np.log(N), np.log(v), 1)[0])


def solve_on_mesh(mesh: Mesh, ex: ExactSolution, gamma: float = 10.0, gamma_g: float = 0.1,
                  check: bool = True) -> StepResult:
    """Run the full pipeline on one mesh and (optionally) enforce the exact identities."""
    data = ex.problem_data(gamma, gamma_g)
    cut = classify(mesh, ex.phi)
    dofmap = build_ch_dofmap(mesh, cut)
    system = assemble_system(mesh, cut, data, dofmap)
    u = PrimalField(mesh, cut, dofmap, system.solve())
    R = assemble_residuals(mesh, cut, data, u)
    mult = assemble_theta(mesh, cut, u, data, R)
    flux = reconstruct_flux(mesh, cut, u, mult, data)
    report = estimate(flux, u, data, ex.grad)

    cons = check_conservation(flux, data)
    mixed, rscale = mixed_identity_defect(mesh, cut, data, mult)
    mixed_rel = mixed / max(rscale, np.finfo(float).tiny)
    irt = float(irt_condition_defects(flux, data, include_g=True).max(initial=0.0))
    em, escale = edge_jump_means(flux)
    edge_rel = float(np.abs(em).max(initial=0.0) / escale)
    if check:
        failures = []
        if cons > CONSERVATION_TOL:
            failures.append(f"conservation defect {cons:.3e}")
        if mixed_rel > MIXED_TOL:
            failures.append(f"mixed identity defect {mixed_rel:.3e}")
        if irt > IRT_TOL:
            failures.append(f"IRT condition defect {irt:.3e}")
        if edge_rel > IRT_TOL:
            failures.append(f"edge normal-jump mean {edge_rel:.3e}")
        if failures:
            raise HardAssertionError(f"{ex.name}, {mesh.n_cells} cells: " + "; ".join(failures))
    return StepResult(mesh, cut, u, mult, flux, report, dofmap.n_dofs, cons, mixed_rel, irt, edge_rel)


def _dof_count(mesh: Mesh, ex: ExactSolution) -> int:
    return build_ch_dofmap(mesh, classify(mesh, ex.phi)).n_dofs


def _dump_vtk(path: Path, step: StepResult):
    from .vtk import write_vtk

    mesh, u, flux = step.mesh, step.u, step.flux
    cent = mesh.centroids()
    c = flux.total()
    side = np.where(step.cut.cell_class == 2, 1, 0)
    vec = np.einsum("nj,njd->nd", c[side, np.arange(mesh.n_cells)], cent[:, None, :] - mesh.vertices[mesh.cells])
    vec /= 2.0 * mesh.cell_areas[:, None]
    write_vtk(
        path, mesh,
        cell_scalars={"classification": step.cut.cell_class, "eta_T": step.report.eta_T},
        cell_vectors={"flux": vec},
        point_scalars={"u_h1": u.vertex_values[0], "u_h2": u.vertex_values[1]},
    )


def run_experiment(spec: ExperimentSpec) -> ConvergenceTable:
    """Refinement loop; stops before the first mesh whose dof count exceeds the budget."""
    ex = make_example(spec.example, spec.mu)
    mesh = spec.initial_mesh(ex)
    table = ConvergenceTable(spec)
    out = Path(spec.out) if spec.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    it = 0
    while True:
        if it > 0 and _dof_count(mesh, ex) > spec.max_dofs:
            break
        t0 = time.perf_counter()
        step = solve_on_mesh(mesh, ex, spec.gamma, spec.gamma_g, spec.check)
        rep = step.report
        rec = IterationRecord(
            iter=it, N=step.n_dofs, energy_error=rep.energy_error, flux_error=rep.flux_error,
            eta=rep.eta, eta_gamma=rep.eta_gamma, eps=rep.eps, effectivity=rep.effectivity,
            max_conservation_defect=step.conservation, mixed_identity_defect=step.mixed_identity,
            irt_defect=step.irt_defect, n_cells=mesh.n_cells, n_cut=step.cut.n_cut,
        )
        table.records.append(rec)
        table.last = step
        if out and spec.write_vtk:
            _dump_vtk(out / f"{spec.example}_{it:03d}.vtk", step)
        log.info("iter %d: N=%d err=%.4e eta=%.4e eff=%.3f", it, rec.N, rec.energy_error, rec.eta, rec.effectivity)

        if step.n_dofs >= spec.max_dofs or (spec.max_iter is not None and it >= spec.max_iter):
            rec.seconds = time.perf_counter() - t0
            break
        if spec.mode == "uniform":
            mesh = refine_uniform(mesh, 1)
        else:
            marked = dorfler_mark(rep.eta_T, spec.theta_mark)
            rec.marked_near_interface = mark_fraction_near(mesh, marked, step.cut.near_interface())
            mesh = refine(mesh, marked)
        rec.seconds = time.perf_counter() - t0
        it += 1

    if out:
        table.write_csv(out / f"{spec.example}.csv")
    return table


def spec_dict(spec: ExperimentSpec) -> dict:
    return asdict(spec)
