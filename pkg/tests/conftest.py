"""Shared fixtures: a small cut problem solved end to end."""

from types import SimpleNamespace

import numpy as np
import pytest

from cutflux.assembly import ProblemData, assemble_residuals, assemble_system
from cutflux.flux import reconstruct_flux
from cutflux.geometry import classify
from cutflux.mesh import build_structured_mesh
from cutflux.multiplier import assemble_theta
from cutflux.problems import ELLIPSE_A, ELLIPSE_B
from cutflux.spaces import PrimalField, build_ch_dofmap


def ellipse_phi(x, y):
    return np.sqrt(x**2 / ELLIPSE_A**2 + y**2 / ELLIPSE_B**2) - 1.0


def generic_data(k1=1.0, k2=10.0, with_g=True):
    """Non-polynomial data with a nonzero flux jump, so nothing is trivially exact."""
    return ProblemData(
        k1, k2,
        f=lambda x, y, s: 1.0 + x * y + np.asarray(s, dtype=float),
        g=(lambda x, y: np.cos(x) + y) if with_g else None,
        boundary=lambda x, y, s: x**2 + np.asarray(s) * y,
    )


def solve_pipeline(mesh, phi, data):
    cut = classify(mesh, phi)
    dm = build_ch_dofmap(mesh, cut)
    u = PrimalField(mesh, cut, dm, assemble_system(mesh, cut, data, dm).solve())
    R = assemble_residuals(mesh, cut, data, u)
    mult = assemble_theta(mesh, cut, u, data, R)
    flux = reconstruct_flux(mesh, cut, u, mult, data)
    return SimpleNamespace(mesh=mesh, cut=cut, dofmap=dm, data=data, u=u, R=R, mult=mult, flux=flux)


@pytest.fixture(scope="session")
def pipeline():
    return solve_pipeline(build_structured_mesh("square", -1.0, 1.0, 8), ellipse_phi, generic_data())


@pytest.fixture(scope="session")
def pipeline_refined():
    """An adaptively refined (non-uniform) mesh with high contrast."""
    from cutflux.mesh import refine

    mesh = build_structured_mesh("square", -1.0, 1.0, 8)
    cut = classify(mesh, ellipse_phi)
    for _ in range(3):
        mesh = refine(mesh, cut.cut_cells)
        cut = classify(mesh, ellipse_phi)
    return solve_pipeline(mesh, ellipse_phi, generic_data(1.0, 1000.0))


# -----------------------------------------------------------------------------
# acceptance report: one line per criterion, printed after the run
# -----------------------------------------------------------------------------
ACCEPTANCE_LINES: dict = {}  # (criterion, sub-case) -> (ok, detail)


def acceptance_line(n: int) -> str:
    items = [v for k, v in sorted(ACCEPTANCE_LINES.items(), key=lambda kv: str(kv[0][1])) if k[0] == n]
    ok = all(v[0] for v in items)
    return f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  " + " | ".join(v[1] for v in items)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted({k[0] for k in ACCEPTANCE_LINES}):
        terminalreporter.write_line(acceptance_line(n))
