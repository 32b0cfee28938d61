import numpy as np
import pytest
from scipy.sparse.linalg import eigsh

from cutflux.assembly import ProblemData, assemble_residuals, assemble_system, residual_direct, residual_ibp, solve_cutfem
from cutflux.geometry import classify
from cutflux.mesh import build_structured_mesh, refine
from cutflux.spaces import PrimalField, build_ch_dofmap

from conftest import ellipse_phi, generic_data


def test_problem_data_validation():
    with pytest.raises(ValueError):
        ProblemData(0.0, 1.0, f=lambda x, y, s: x)
    with pytest.raises(ValueError):
        ProblemData(1.0, 1.0, f=lambda x, y, s: x, gamma=0.0)
    d = ProblemData(1.0, 3.0, f=lambda x, y, s: 0 * x)
    assert d.weights == pytest.approx((0.75, 0.25, 0.75))
    assert np.all(d.jump(np.zeros((4, 2))) == 0)


def test_matrix_symmetric_positive_definite(pipeline):
    p = pipeline
    sys_ = assemble_system(p.mesh, p.cut, p.data, p.dofmap)
    A = sys_.A
    assert abs(A - A.T).max() <= 1e-13 * abs(A).max()
    free = ~p.dofmap.dirichlet
    Aff = A.tocsr()[free][:, free]
    lo = eigsh(Aff.tocsc(), k=1, sigma=0, which="LM", return_eigenvectors=False)[0]
    assert lo > 0


@pytest.mark.parametrize("k2", [1.0, 7.0])
def test_linear_solution_reproduced_with_flux_jump(k2):
    # straight interface: u = x + y, [K grad u . n] = (k1 - k2)(n_x + n_y)
    n = np.array([1.0, -0.3]) / np.hypot(1.0, 0.3)
    phi = lambda x, y: x - 0.3 * y - 0.1
    data = ProblemData(1.0, k2, f=lambda x, y, s: 0 * x,
                       g=lambda x, y: (1.0 - k2) * (n[0] + n[1]) + 0 * x,
                       boundary=lambda x, y, s: x + y + 0 * np.asarray(s))
    m = build_structured_mesh("square", -1.0, 1.0, 6)
    cut = classify(m, phi)
    dm = build_ch_dofmap(m, cut)
    u = solve_cutfem(m, cut, data, dm)
    x = m.vertices[dm.dof_vertex]
    assert np.abs(u.coefficients - x.sum(axis=1)).max() < 1e-12
    R = assemble_residuals(m, cut, data, u)
    assert np.nanmax(np.abs(R)) < 1e-12 * max(data.k) * 10


def test_direct_residual_matches_integrated_by_parts(pipeline):
    p = pipeline
    R = p.R
    cells = list(p.cut.cut_cells) + list(np.nonzero(p.cut.ghost[0][p.mesh.cell_edges].any(axis=1))[0][:10]) + [0, 7]
    for T in cells:
        for side in (1, 2):
            if not p.cut.active[side - 1][T]:
                continue
            for a in range(3):
                N = p.mesh.cells[T, a]
                ref = residual_ibp(p.mesh, p.cut, p.data, p.u, T, N, side)
                assert abs(R[side - 1, T, a] - ref) <= 1e-12 * np.abs(R).max()
    T = int(p.cut.cut_cells[0])
    assert residual_direct(p.mesh, p.cut, p.data, p.u, T, p.mesh.cells[T, 1], 2) == pytest.approx(R[1, T, 1])


def test_residuals_vanish_on_free_dofs(pipeline_refined):
    # Galerkin orthogonality: summing local residuals over a dof's cells gives r(phi_N) = 0
    p = pipeline_refined
    acc = np.zeros(p.dofmap.n_dofs)
    for i in range(2):
        act = p.cut.active[i]
        np.add.at(acc, p.dofmap.cell_dof[i][act].ravel(), p.R[i][act].ravel())
    free = ~p.dofmap.dirichlet
    assert np.abs(acc[free]).max() <= 1e-11 * np.abs(p.R).max()


def test_residuals_zero_on_inactive_cells(pipeline):
    p = pipeline
    for i in range(2):
        assert np.all(p.R[i][~p.cut.active[i]] == 0)


def test_residual_ibp_input_errors(pipeline):
    p = pipeline
    T1 = int(np.nonzero(p.cut.cell_class == 1)[0][0])
    with pytest.raises(ValueError):
        residual_ibp(p.mesh, p.cut, p.data, p.u, T1, p.mesh.cells[T1, 0], 2)
    other = int(np.setdiff1d(np.arange(p.mesh.n_vertices), p.mesh.cells[T1])[0])
    with pytest.raises(ValueError):
        residual_ibp(p.mesh, p.cut, p.data, p.u, T1, other, 1)


def test_discretization_converges_for_smooth_problem():
    from cutflux.estimator import energy_error
    from cutflux.problems import ellipse

    ex = ellipse(10.0)
    errs, N = [], []
    m = build_structured_mesh("square", -1.0, 1.0, 8)
    for _ in range(3):
        cut = classify(m, ex.phi)
        dm = build_ch_dofmap(m, cut)
        data = ex.problem_data()
        u = solve_cutfem(m, cut, data, dm)
        errs.append(energy_error(u, ex.grad, data))
        N.append(dm.n_dofs)
        m = refine(m, np.arange(m.n_cells))
        m = refine(m, np.arange(m.n_cells))
    rate = np.log(errs[-1] / errs[0]) / np.log(N[-1] / N[0])
    assert -0.65 < rate < -0.4
