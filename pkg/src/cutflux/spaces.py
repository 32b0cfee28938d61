"""Degrees of freedom for the doubled P1 space and Raviart-Thomas helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CutTopology
from .mesh import Mesh


@dataclass(eq=False)
class ChDofMap:
    """Degrees of freedom of the two overlapping P1 spaces.

    ``cell_dof[i, T, a]`` is the global dof of local vertex ``a`` of cell
    ``T`` in subdomain ``i + 1`` (``-1`` if ``T`` is not in ``T_h^{i+1}``).
    Continuity is only enforced across edges of ``F_h^{i+1}``, so a vertex
    whose active cells form several edge-connected groups (a pinch of the
    side mesh) owns one dof per group.  ``dofs[i, v]`` gives the first dof
    of vertex ``v`` (``-1`` if absent).  Subdomain-1 dofs are numbered first.
    """

    cell_dof: np.ndarray  # (2, nc, 3)
    dofs: np.ndarray  # (2, nv)
    dof_vertex: np.ndarray  # (ndof,)
    dof_side: np.ndarray  # (ndof,) 1 or 2
    dirichlet: np.ndarray  # (ndof,) bool

    @property
    def n_dofs(self) -> int:
        return len(self.dof_vertex)

    def cell_dofs(self, side: int, cells=None) -> np.ndarray:
        d = self.cell_dof[side - 1]
        return d if cells is None else d[cells]


def _vertex_groups(mesh: Mesh, active: np.ndarray, edge_active: np.ndarray) -> np.ndarray:
    """Label (cell, local vertex) incidences of active cells by connected group.

    Two incidences of the same vertex are joined when their cells share an
    edge of ``edge_active`` containing it.  Returns (nc, 3) labels, ``-1``
    on inactive cells, numbered by ascending vertex then first incidence.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    nc = mesh.n_cells
    C = mesh.cells
    inner = np.nonzero(edge_active & (mesh.edge_cells[:, 1] >= 0))[0]
    tm, tp = mesh.edge_cells[inner, 0], mesh.edge_cells[inner, 1]
    a_list, b_list = [], []
    for e in range(2):
        N = mesh.edges[inner, e]
        am = np.argmax(C[tm] == N[:, None], axis=1)
        ap = np.argmax(C[tp] == N[:, None], axis=1)
        a_list.append(3 * tm + am)
        b_list.append(3 * tp + ap)
    a = np.concatenate(a_list)
    b = np.concatenate(b_list)
    G = coo_matrix((np.ones(len(a)), (a, b)), shape=(3 * nc, 3 * nc))
    _, comp = connected_components(G, directed=False)
    comp = comp.reshape(nc, 3)
    inc = np.nonzero(np.repeat(active, 3))[0]
    cid = comp.ravel()[inc]
    vert = C.ravel()[inc]
    # first incidence of each component, then order components by (vertex, first incidence)
    uniq, first = np.unique(cid, return_index=True)
    key = np.lexsort((inc[first], vert[first]))
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[key] = np.arange(len(uniq))
    labels = np.full(3 * nc, -1, dtype=np.int64)
    labels[inc] = rank[np.searchsorted(uniq, cid)]
    return labels.reshape(nc, 3)


def build_ch_dofmap(mesh: Mesh, cut: CutTopology) -> ChDofMap:
    """Number the dofs of ``Omega_h^1`` then those of ``Omega_h^2``."""
    nv, nc = mesh.n_vertices, mesh.n_cells
    cell_dof = np.full((2, nc, 3), -1, dtype=np.int64)
    dofs = np.full((2, nv), -1, dtype=np.int64)
    offset = 0
    verts, sides = [], []
    for i in range(2):
        lab = _vertex_groups(mesh, cut.active[i], cut.edge_active[i])
        n = int(lab.max(initial=-1)) + 1
        act = lab >= 0
        cell_dof[i][act] = lab[act] + offset
        dv = np.zeros(n, dtype=np.int64)
        dv[lab[act]] = mesh.cells[act]
        first = np.full(nv, -1, dtype=np.int64)
        # groups are numbered by ascending vertex, so the reversed assignment keeps the first
        first[dv[::-1]] = np.arange(n)[::-1]
        dofs[i] = np.where(first >= 0, first + offset, -1)
        offset += n
        verts.append(dv)
        sides.append(np.full(n, i + 1))
    dof_vertex = np.concatenate(verts)
    dof_side = np.concatenate(sides)
    # a boundary dof of side i is fixed only if one of its boundary edges
    # reaches into Omega^i; purely fictitious boundary values stay free
    touches = np.zeros((2, nv), dtype=bool)
    bnd = np.nonzero(mesh.boundary_edges)[0]
    for i in range(2):
        por = cut.edge_portion[i, bnd]
        reach = bnd[por[:, 1] > por[:, 0]]
        touches[i, mesh.edges[reach].ravel()] = True
    return ChDofMap(
        cell_dof=cell_dof,
        dofs=dofs,
        dof_vertex=dof_vertex,
        dof_side=dof_side,
        dirichlet=touches[dof_side - 1, dof_vertex],
    )


class PrimalField:
    """A member of the doubled P1 space given by its coefficient vector.

    ``cell_values[i, T, a]`` is the value of ``u_{h,i+1}`` at local vertex
    ``a`` of ``T`` (nan outside ``T_h^{i+1}``); ``vertex_values`` keeps one
    value per vertex (the first dof) for output.
    """

    def __init__(self, mesh: Mesh, cut: CutTopology, dofmap: ChDofMap, coefficients):
        self.mesh = mesh
        self.cut = cut
        self.dofmap = dofmap
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (dofmap.n_dofs,):
            raise ValueError("coefficient vector does not match the dof map")
        cd = dofmap.cell_dof
        self.cell_values = np.where(cd >= 0, self.coefficients[np.maximum(cd, 0)], np.nan)
        vals = np.full((2, mesh.n_vertices), np.nan)
        for i in range(2):
            has = dofmap.dofs[i] >= 0
            vals[i, has] = self.coefficients[dofmap.dofs[i, has]]
        self.vertex_values = vals
        G = mesh.barycentric_gradients()
        with np.errstate(invalid="ignore"):
            # (2, nc, 2); nan on cells outside T_h^i
            self.cell_gradients = np.einsum("ncd,snc->snd", G, self.cell_values)

    @classmethod
    def interpolate(cls, mesh, cut, dofmap, func):
        """Nodal interpolant of ``func(x, y, side)``."""
        x = mesh.vertices[dofmap.dof_vertex]
        coeffs = np.asarray(func(x[:, 0], x[:, 1], dofmap.dof_side), dtype=float)
        return cls(mesh, cut, dofmap, np.broadcast_to(coeffs, (dofmap.n_dofs,)).copy())

    def _check(self, cell: int, side: int):
        if side not in (1, 2):
            raise ValueError("side must be 1 or 2")
        if not self.cut.active[side - 1][cell]:
            raise ValueError(f"cell {cell} does not belong to the side-{side} mesh")

    def eval(self, cell: int, side: int, points) -> np.ndarray:
        """Value of ``u_{h,side}`` at points of ``cell``."""
        self._check(cell, side)
        lam = self.mesh.barycentric(cell, points)
        return lam @ self.cell_values[side - 1, cell]

    def grad(self, cell: int, side: int) -> np.ndarray:
        """Constant gradient of ``u_{h,side}`` on ``cell``."""
        self._check(cell, side)
        return self.cell_gradients[side - 1, cell].copy()

    def interface_jump(self, k: int, points) -> np.ndarray:
        """``[u_h] = u_{h,1} - u_{h,2}`` at points of the k-th cut cell."""
        T = self.cut.cut_cells[k]
        return self.eval(T, 1, points) - self.eval(T, 2, points)

    def edge_jump(self, side: int, edge: int, s) -> np.ndarray:
        """``[[v]] = v^- - v^+`` along ``edge`` at parameters ``s`` (boundary: ``v``)."""
        return self._edge_traces(side, edge, s, jump=True)

    def edge_mean(self, side: int, edge: int, s) -> np.ndarray:
        """``<v> = (v^- + v^+)/2`` along ``edge`` (boundary: ``v``)."""
        return self._edge_traces(side, edge, s, jump=False)

    def _edge_traces(self, side, edge, s, jump):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        a, b = self.mesh.edges[edge]
        pts = (1 - s)[:, None] * self.mesh.vertices[a] + s[:, None] * self.mesh.vertices[b]
        tm, tp = self.mesh.edge_cells[edge]
        vm = self.eval(tm, side, pts)
        if tp < 0:
            return vm
        vp = self.eval(tp, side, pts)
        return vm - vp if jump else 0.5 * (vm + vp)


def weighted_means(v1, v2, k1: float, k2: float):
    """Interface means ``({v}, {v}*)`` with the diffusion weights."""
    w1, w2 = k2 / (k1 + k2), k1 / (k1 + k2)
    return w1 * v1 + w2 * v2, w2 * v1 + w1 * v2


# -----------------------------------------------------------------------------
# multiplier orientation
# -----------------------------------------------------------------------------
def node_edge_signs(mesh: Mesh) -> np.ndarray:
    """``s_N^F`` for both endpoints of every edge, shape (ne, 2).

    With ``F = (N, M)``, the sign is +1 when ``n_F`` is the clockwise
    rotation of the direction from ``N`` to ``M``.
    """
    E = mesh.edges
    d = mesh.vertices[E[:, 1]] - mesh.vertices[E[:, 0]]
    cw = np.stack([d[:, 1], -d[:, 0]], axis=1)
    s0 = np.sign(np.einsum("ij,ij->i", cw, mesh.edge_normals))
    return np.stack([s0, -s0], axis=1)


# -----------------------------------------------------------------------------
# Raviart-Thomas (lowest order)
# -----------------------------------------------------------------------------
def rt_basis(mesh: Mesh, cell: int, j: int, points) -> np.ndarray:
    """``Lambda_{T,j}(x) = |F_j| / (2|T|) (x - A_j)`` at ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    A = mesh.vertices[mesh.cells[cell, j]]
    Fj = mesh.edge_lengths[mesh.cell_edges[cell, j]]
    return Fj / (2.0 * mesh.cell_areas[cell]) * (pts - A)


def rt_eval(mesh: Mesh, cells, coeffs, points) -> np.ndarray:
    """Evaluate RT0 fields given by edge fluxes ``x_j = int_{F_j} psi . n_T``.

    ``cells`` (n,), ``coeffs`` (n, 3) and ``points`` (n, 2) are aligned.
    """
    cells = np.asarray(cells)
    coeffs = np.asarray(coeffs, dtype=float)
    pts = np.asarray(points, dtype=float)
    A = mesh.vertices[mesh.cells[cells]]  # (n, 3, 2)
    scale = 1.0 / (2.0 * mesh.cell_areas[cells])
    return scale[:, None] * np.einsum("nj,njd->nd", coeffs, pts[:, None, :] - A)


def rt_divergence(mesh: Mesh, cells, coeffs) -> np.ndarray:
    """Constant divergence ``sum_j x_j / |T|``."""
    return np.asarray(coeffs).sum(axis=-1) / mesh.cell_areas[np.asarray(cells)]


def rt_edge_dofs(mesh: Mesh, cell: int, field, n_points: int = 3) -> np.ndarray:
    """``N_{T,j}(psi) = |F_j|^{-1} int_{F_j} psi . n_T`` by Gauss quadrature.

    ``field`` maps an (m, 2) point array to (m, 2) vectors.
    """
    from .geometry import quad_segment

    out = np.empty(3)
    for j in range(3):
        F = mesh.cell_edges[cell, j]
        a, b = mesh.edges[F]
        x, w = quad_segment(mesh.vertices[a], mesh.vertices[b], 2 * n_points - 1)
        n_T = mesh.cell_edge_signs[cell, j] * mesh.edge_normals[F]
        out[j] = np.dot(w, field(x) @ n_T) / mesh.edge_lengths[F]
    return out
