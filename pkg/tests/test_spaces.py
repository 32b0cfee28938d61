import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cutflux.geometry import classify
from cutflux.mesh import Mesh, build_structured_mesh
from cutflux.spaces import (PrimalField, build_ch_dofmap, node_edge_signs, rt_basis, rt_divergence,
                            rt_edge_dofs, rt_eval, weighted_means)

from conftest import ellipse_phi


def test_no_interface_is_standard_p1():
    m = build_structured_mesh("square", -1.0, 1.0, 4)
    cut = classify(m, lambda x, y: -1.0 + 0 * x)
    dm = build_ch_dofmap(m, cut)
    assert dm.n_dofs == m.n_vertices
    assert np.array_equal(dm.dirichlet, m.boundary_vertices[dm.dof_vertex])


def test_two_cell_mesh_single_cut_cell_doubles_its_vertices():
    m = Mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    # phi < 0 only near vertex 1: cuts cell 0 only
    cut = classify(m, lambda x, y: np.hypot(x - 1, y) - 0.3)
    assert cut.n_cut == 1
    dm = build_ch_dofmap(m, cut)
    # side 1: vertices of the cut cell (3); side 2: all 4 vertices
    assert (dm.dof_side == 1).sum() == 3
    assert (dm.dof_side == 2).sum() == 4
    assert set(dm.dof_vertex[dm.dof_side == 1]) == {0, 1, 2}


def test_square_n2_dirichlet_mask():
    m = build_structured_mesh("square", -1.0, 1.0, 2)
    cut = classify(m, lambda x, y: np.hypot(x, y) - 0.5)
    dm = build_ch_dofmap(m, cut)
    bnd = m.boundary_vertices[dm.dof_vertex]
    # side 2 owns every boundary vertex and all of them are fixed
    assert np.array_equal(dm.dirichlet[dm.dof_side == 2], bnd[dm.dof_side == 2])
    # side 1 does not reach the boundary: nothing fixed there
    assert not dm.dirichlet[dm.dof_side == 1].any()


def test_dof_count_and_doubling_on_cut_cells():
    m = build_structured_mesh("square", -1.0, 1.0, 8)
    cut = classify(m, ellipse_phi)
    dm = build_ch_dofmap(m, cut)
    nv1 = len(np.unique(m.cells[cut.active[0]]))
    nv2 = len(np.unique(m.cells[cut.active[1]]))
    # no pinches on this mesh: one dof per vertex and side
    assert dm.n_dofs == nv1 + nv2
    cv = np.unique(m.cells[cut.cut_cells])
    assert np.all(dm.dofs[0, cv] >= 0) and np.all(dm.dofs[1, cv] >= 0)
    assert np.all(dm.dofs[0, cv] != dm.dofs[1, cv])


def test_pinched_side_mesh_gets_one_dof_per_group():
    # phi > 0 only at two opposite corners: the side-2 cells form two groups
    # that meet only at the centre vertex (1, 1)
    m = build_structured_mesh("square", 0.0, 2.0, 2)
    phi = lambda x, y: np.where(np.isclose(x + y, 0.0) | np.isclose(x + y, 4.0), 1.0, -1.0)
    cut = classify(m, phi)
    dm = build_ch_dofmap(m, cut)
    centre = int(np.nonzero(np.all(np.isclose(m.vertices, 1.0), axis=1))[0][0])
    assert np.sum((dm.dof_vertex == centre) & (dm.dof_side == 2)) == 2
    assert np.sum((dm.dof_vertex == centre) & (dm.dof_side == 1)) == 1
    for i in range(2):
        assert np.all(dm.cell_dof[i][cut.active[i]] >= 0)
        assert np.all(dm.cell_dof[i][~cut.active[i]] == -1)
    # dofs are shared exactly across F_h^i edges
    for i in range(2):
        for F in np.nonzero(cut.edge_active[i] & (m.edge_cells[:, 1] >= 0))[0]:
            tm, tp = m.edge_cells[F]
            for N in m.edges[F]:
                am = int(np.nonzero(m.cells[tm] == N)[0][0])
                ap = int(np.nonzero(m.cells[tp] == N)[0][0])
                assert dm.cell_dof[i][tm, am] == dm.cell_dof[i][tp, ap]


def test_interpolation_reproduces_linears():
    m = build_structured_mesh("square", -1.0, 1.0, 6)
    cut = classify(m, ellipse_phi)
    dm = build_ch_dofmap(m, cut)
    u = PrimalField.interpolate(m, cut, dm, lambda x, y, s: x + y)
    for T in [0, int(cut.cut_cells[0])]:
        c = m.centroids()[T]
        for side in (1, 2):
            if cut.active[side - 1][T]:
                assert u.eval(T, side, c[None])[0] == pytest.approx(c.sum())
                assert np.allclose(u.grad(T, side), [1.0, 1.0])
    T_in1 = int(np.nonzero(cut.cell_class == 1)[0][0])
    with pytest.raises(ValueError):
        u.eval(T_in1, 2, m.centroids()[T_in1][None])


def test_jump_and_mean_definitions():
    m = build_structured_mesh("square", -1.0, 1.0, 4)
    cut = classify(m, ellipse_phi)
    dm = build_ch_dofmap(m, cut)
    rng = np.random.default_rng(3)
    u = PrimalField(m, cut, dm, rng.standard_normal(dm.n_dofs))
    # a continuous field has zero edge jumps and mean = trace
    F = int(np.nonzero(cut.edge_active[0] & (m.edge_cells[:, 1] >= 0))[0][0])
    s = np.linspace(0, 1, 5)
    assert np.abs(u.edge_jump(1, F, s)).max() < 1e-14
    tm = m.edge_cells[F, 0]
    a, b = m.edges[F]
    pts = (1 - s)[:, None] * m.vertices[a] + s[:, None] * m.vertices[b]
    assert np.allclose(u.edge_mean(1, F, s), u.eval(tm, 1, pts))
    # interface jump
    k = 0
    T = cut.cut_cells[k]
    assert np.allclose(u.interface_jump(k, cut.x_gamma[k][None]),
                       u.eval(T, 1, cut.x_gamma[k][None]) - u.eval(T, 2, cut.x_gamma[k][None]))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(-5, 5), st.floats(-5, 5))
def test_weighted_means(k1, k2, v1, v2):
    m, ms = weighted_means(v1, v2, k1, k2)
    w1, w2 = k2 / (k1 + k2), k1 / (k1 + k2)
    assert m == pytest.approx(w1 * v1 + w2 * v2)
    assert ms == pytest.approx(w2 * v1 + w1 * v2)
    assert m + ms == pytest.approx(v1 + v2, abs=1e-12)


def test_rt_basis_dual_to_edge_dofs():
    m = build_structured_mesh("square", 0.0, 1.0, 2)
    for T in range(m.n_cells):
        for j in range(3):
            dofs = rt_edge_dofs(m, T, lambda x: rt_basis(m, T, j, x))
            assert np.allclose(dofs, np.eye(3)[j], atol=1e-13)


def test_rt_eval_divergence_and_flux_coefficients():
    m = build_structured_mesh("square", 0.0, 1.0, 2)
    rng = np.random.default_rng(0)
    c = rng.standard_normal(3)
    T = 1
    # coefficients are integrated fluxes: flux_j = |F_j| N_j
    pts = m.centroids()[[T]]
    v = rt_eval(m, [T], c[None], pts)[0]
    lin = sum(c[j] / m.edge_lengths[m.cell_edges[T, j]] * rt_basis(m, T, j, pts)[0] for j in range(3))
    assert np.allclose(v, lin)
    assert rt_divergence(m, [T], c[None])[0] == pytest.approx(c.sum() / m.cell_areas[T])


def test_node_edge_signs_clockwise_rule():
    m = build_structured_mesh("square", 0.0, 1.0, 3)
    s = node_edge_signs(m)
    assert np.all(np.abs(s) == 1)
    assert np.all(s[:, 0] == -s[:, 1])
    E = m.edges
    d = m.vertices[E[:, 1]] - m.vertices[E[:, 0]]
    cw = np.stack([d[:, 1], -d[:, 0]], axis=1)
    assert np.all(np.sign(np.einsum("ij,ij->i", cw, m.edge_normals)) == s[:, 0])


def test_field_shape_validation():
    m = build_structured_mesh("square", 0.0, 1.0, 2)
    cut = classify(m, lambda x, y: -1.0 + 0 * x)
    dm = build_ch_dofmap(m, cut)
    with pytest.raises(ValueError):
        PrimalField(m, cut, dm, np.zeros(dm.n_dofs + 1))
