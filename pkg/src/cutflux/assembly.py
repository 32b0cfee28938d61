"""CutFEM system assembly (Nitsche coupling + ghost penalty) and residuals.

Local residuals are returned as arrays ``R[i, T, a]`` holding
``r_h^{i+1}(phi_N chi_T)`` for the local vertex ``a`` of cell ``T``
(``N = cells[T, a]``); entries of cells outside ``T_h^{i+1}`` are zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .geometry import CutTopology, kappa_weights, quad_polygon, quad_segment
from .linalg import solve_sparse_spd
from .mesh import Mesh
from .spaces import ChDofMap, PrimalField

QUAD_DEGREE = 2


@dataclass
class ProblemData:
    """Coefficients and data of the interface problem.

    ``f(x, y, side)`` is the source, ``g(x, y)`` the normal-flux jump on the
    interface (``None`` for zero) and ``boundary(x, y, side)`` the Dirichlet
    value imposed on the side-``side`` dofs of boundary vertices.
    """

    k1: float
    k2: float
    f: Callable
    g: Optional[Callable] = None
    boundary: Optional[Callable] = None
    gamma: float = 10.0
    gamma_g: float = 0.1

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError("diffusivities must be positive")
        if not (self.gamma > 0 and self.gamma_g > 0):
            raise ValueError("stabilization parameters must be positive")

    @property
    def k(self) -> tuple[float, float]:
        return (self.k1, self.k2)

    @property
    def weights(self) -> tuple[float, float, float]:
        return kappa_weights(self.k1, self.k2)

    def source(self, pts, side) -> np.ndarray:
        return np.asarray(self.f(pts[:, 0], pts[:, 1], side), dtype=float) * np.ones(len(pts))

    def jump(self, pts) -> np.ndarray:
        if self.g is None:
            return np.zeros(len(pts))
        return np.asarray(self.g(pts[:, 0], pts[:, 1]), dtype=float) * np.ones(len(pts))


@dataclass
class LinearSystem:
    """Assembled CutFEM matrix, load vector and Dirichlet data."""

    A: sparse.csr_matrix
    b: np.ndarray
    dofmap: ChDofMap
    dirichlet_values: np.ndarray  # (ndof,), meaningful where dofmap.dirichlet

    def solve(self) -> np.ndarray:
        """Eliminate Dirichlet dofs symmetrically and solve."""
        fixed = self.dofmap.dirichlet
        free = ~fixed
        u = np.where(fixed, self.dirichlet_values, 0.0)
        A = self.A.tocsr()
        Aff = A[free][:, free]
        rhs = self.b[free] - A[free][:, fixed] @ u[fixed]
        u[free] = solve_sparse_spd(Aff, rhs)
        return u


# -----------------------------------------------------------------------------
# shared element data
# -----------------------------------------------------------------------------
def _interface_data(mesh: Mesh, cut: CutTopology):
    """Per cut cell: 2-point rule barycentrics, weights and grad(lambda).n."""
    ids, pts, w, bary = cut.interface_rule(QUAD_DEGREE)
    nq = len(w) // max(cut.n_cut, 1)
    G = mesh.barycentric_gradients()[cut.cut_cells]  # (ncut, 3, 2)
    gn = np.einsum("kjd,kd->kj", G, cut.normal)
    return pts.reshape(cut.n_cut, nq, 2), w.reshape(cut.n_cut, nq), bary.reshape(cut.n_cut, nq, 3), gn


def assemble_system(mesh: Mesh, cut: CutTopology, data: ProblemData, dofmap: ChDofMap) -> LinearSystem:
    """Assemble ``a_h`` and ``l_h`` with Dirichlet values on boundary dofs."""
    G = mesh.barycentric_gradients()
    rows, cols, vals = [], [], []
    b = np.zeros(dofmap.n_dofs)
    w1, w2, kg = data.weights

    for i, k in enumerate(data.k):
        side = i + 1
        cells = np.nonzero(cut.active[i])[0]
        area = cut.sub_area(side)[cells]
        Ke = k * area[:, None, None] * np.einsum("nad,nbd->nab", G[cells], G[cells])
        d = dofmap.cell_dof[i][cells]
        rows.append(np.repeat(d, 3, axis=1).ravel())
        cols.append(np.tile(d, (1, 3)).ravel())
        vals.append(Ke.ravel())

        # ghost penalty on full edges
        ge = np.nonzero(cut.ghost[i])[0]
        tm, tp = mesh.edge_cells[ge, 0], mesh.edge_cells[ge, 1]
        n = mesh.edge_normals[ge]
        c = np.hstack([np.einsum("ejd,ed->ej", G[tm], n), -np.einsum("ejd,ed->ej", G[tp], n)])
        dd = np.hstack([dofmap.cell_dof[i][tm], dofmap.cell_dof[i][tp]])
        hF = mesh.edge_lengths[ge]
        Ge = (data.gamma_g * k * hF**2)[:, None, None] * c[:, :, None] * c[:, None, :]
        rows.append(np.repeat(dd, 6, axis=1).ravel())
        cols.append(np.tile(dd, (1, 6)).ravel())
        vals.append(Ge.ravel())

        # load
        qc, qx, qw, qb = cut.volume_rule(side, QUAD_DEGREE)
        fq = data.source(qx, side) * qw
        np.add.at(b, dofmap.cell_dof[i][qc].ravel(), (fq[:, None] * qb).ravel())

    if cut.n_cut:
        pts, w, bary, gn = _interface_data(mesh, cut)
        T = cut.cut_cells
        hT = mesh.cell_diameters[T]
        J = np.concatenate([bary, -bary], axis=2)  # (ncut, nq, 6)
        D = kg * np.concatenate([gn, gn], axis=1)  # (ncut, 6)
        Jint = np.einsum("kq,kqa->ka", w, J)
        pen = (data.gamma * kg / hT)[:, None, None] * np.einsum("kq,kqa,kqb->kab", w, J, J)
        Me = pen - Jint[:, :, None] * D[:, None, :] - D[:, :, None] * Jint[:, None, :]
        dd = np.hstack([dofmap.cell_dof[0][T], dofmap.cell_dof[1][T]])
        rows.append(np.repeat(dd, 6, axis=1).ravel())
        cols.append(np.tile(dd, (1, 6)).ravel())
        vals.append(Me.ravel())

        if data.g is not None:
            gq = data.jump(pts.reshape(-1, 2)).reshape(w.shape) * w
            gl = np.einsum("kq,kqa->ka", gq, bary)
            np.add.at(b, dofmap.cell_dof[0][T].ravel(), (w2 * gl).ravel())
            np.add.at(b, dofmap.cell_dof[1][T].ravel(), (w1 * gl).ravel())

    r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    A = sparse.coo_matrix((v, (r, c)), shape=(dofmap.n_dofs,) * 2).tocsr()
    A.sum_duplicates()

    dvals = np.zeros(dofmap.n_dofs)
    if data.boundary is not None and dofmap.dirichlet.any():
        idx = np.nonzero(dofmap.dirichlet)[0]
        x = mesh.vertices[dofmap.dof_vertex[idx]]
        dvals[idx] = data.boundary(x[:, 0], x[:, 1], dofmap.dof_side[idx])
    return LinearSystem(A=A, b=b, dofmap=dofmap, dirichlet_values=dvals)


def solve_cutfem(mesh: Mesh, cut: CutTopology, data: ProblemData, dofmap: ChDofMap) -> PrimalField:
    system = assemble_system(mesh, cut, data, dofmap)
    return PrimalField(mesh, cut, dofmap, system.solve())


# -----------------------------------------------------------------------------
# residuals r_h^i(phi_N chi_T)
# -----------------------------------------------------------------------------
def _portion_integrals(cut: CutTopology, side: int):
    """``int_{F cap Omega^i} lambda`` for both endpoints of every edge, (ne, 2)."""
    s0, s1 = cut.edge_portion[side - 1, :, 0], cut.edge_portion[side - 1, :, 1]
    h = cut.mesh.edge_lengths
    lin = 0.5 * (s1**2 - s0**2)
    return np.stack([h * ((s1 - s0) - lin), h * lin], axis=1)


def assemble_residuals(mesh: Mesh, cut: CutTopology, data: ProblemData, u: PrimalField) -> np.ndarray:
    """All local residuals ``r_h^i(phi_N chi_T)`` by direct term-by-term evaluation.

    Evaluates ``l_h(v) - a_h(u_h, v) + d_h(u_h, v)`` for every elementwise
    test function ``v = phi_N chi_T``; the second half of ``d_h`` drops out
    because ``u_h`` has no edge jumps.
    """
    G = mesh.barycentric_gradients()
    C = mesh.cells
    R = np.zeros((2, mesh.n_cells, 3))
    w1, w2, kg = data.weights
    grads = u.cell_gradients

    for i, k in enumerate(data.k):
        side = i + 1
        act = cut.active[i]
        Ri = R[i]
        # source
        qc, qx, qw, qb = cut.volume_rule(side, QUAD_DEGREE)
        fq = data.source(qx, side) * qw
        np.add.at(Ri, qc, fq[:, None] * qb)
        # diffusion
        area = cut.sub_area(side)
        gu = np.where(act[:, None], grads[i], 0.0)
        Ri -= k * area[:, None] * np.einsum("nad,nd->na", G, gu)

        # edge terms: mean normal flux on F cap Omega^i and ghost penalty
        ea = cut.edge_active[i]
        ec = mesh.edge_cells
        bnd = ec[:, 1] < 0
        n = mesh.edge_normals
        gm = gu[ec[:, 0]]
        gp = np.where(bnd[:, None], gm, gu[np.maximum(ec[:, 1], 0)])
        mean_flux = k * 0.5 * np.einsum("ed,ed->e", gm + gp, n)
        jump_dn = np.einsum("ed,ed->e", gm - gp, n)
        portion = _portion_integrals(cut, side)  # (ne, 2)
        for j in range(3):
            F = mesh.cell_edges[:, j]
            s = mesh.cell_edge_signs[:, j]
            on = act & ea[F]
            for a in ((j + 1) % 3, (j + 2) % 3):
                endpoint = (mesh.edges[F, 1] == C[:, a]).astype(int)
                lam_int = portion[F, endpoint]
                Ri[:, a] += np.where(on, mean_flux[F] * s * lam_int, 0.0)
            gh = act & cut.ghost[i][F]
            hF = mesh.edge_lengths[F]
            coef = data.gamma_g * k * hF**2 * jump_dn[F] * s
            dn = np.einsum("nad,nd->na", G, n[F])
            Ri -= np.where(gh[:, None], coef[:, None] * dn, 0.0)

    if cut.n_cut:
        pts, w, bary, gn = _interface_data(mesh, cut)
        T = cut.cut_cells
        hT = mesh.cell_diameters[T]
        u1 = np.einsum("kqa,ka->kq", bary, u.cell_values[0][T])
        u2 = np.einsum("kqa,ka->kq", bary, u.cell_values[1][T])
        jmp = u1 - u2
        avg_flux = kg * np.einsum("kd,kd->k", grads[0, T] + grads[1, T], cut.normal)
        int_lam = np.einsum("kq,kqa->ka", w, bary)
        int_jl = np.einsum("kq,kq,kqa->ka", w, jmp, bary)
        int_j = np.einsum("kq,kq->k", w, jmp)
        pen = (data.gamma * kg / hT)[:, None] * int_jl
        sym = kg * gn * int_j[:, None]
        cons = avg_flux[:, None] * int_lam
        gl = np.zeros_like(int_lam)
        if data.g is not None:
            gq = data.jump(pts.reshape(-1, 2)).reshape(w.shape) * w
            gl = np.einsum("kq,kqa->ka", gq, bary)
        R[0, T] += w2 * gl - pen + cons + sym
        R[1, T] += w1 * gl + pen - cons + sym
    return R


def residual_ibp(mesh: Mesh, cut: CutTopology, data: ProblemData, u: PrimalField,
                 cell: int, node: int, side: int) -> float:
    """One local residual from the integrated-by-parts expression.

    Independent reference for :func:`assemble_residuals`: interior element
    diffusion is replaced by half normal-derivative jumps on the edge pieces
    and the interface terms are grouped around ``g - [K grad u_h . n]``.
    """
    i = side - 1
    if not cut.active[i][cell]:
        raise ValueError(f"cell {cell} is not in the side-{side} mesh")
    tri = mesh.cells[cell]
    if node not in tri:
        raise ValueError("node is not a vertex of the cell")
    a = int(np.nonzero(tri == node)[0][0])
    k = data.k[i]
    w1, w2, kg = data.weights
    grad_phi = mesh.barycentric_gradients()[cell, a]

    def phi(points):
        return mesh.barycentric(cell, points)[:, a]

    total = 0.0
    kc = cut.cut_index[cell]
    if kc < 0:
        poly = mesh.vertices[tri]
    else:
        poly = cut.polygons[kc][i]
    x, w = quad_polygon(poly, QUAD_DEGREE)
    if len(w):
        total += np.dot(w, data.source(x, side) * phi(x))

    if kc >= 0:
        p, q = cut.gamma[kc]
        x, w = quad_segment(p, q, QUAD_DEGREE)
        n = cut.normal[kc]
        jump_u = u.eval(cell, 1, x) - u.eval(cell, 2, x)
        flux_jump = data.k1 * u.grad(cell, 1) @ n - data.k2 * u.grad(cell, 2) @ n
        wopp = w2 if side == 1 else w1
        total += wopp * np.dot(w, (data.jump(x) - flux_jump) * phi(x))
        total += kg * (grad_phi @ n) * np.dot(w, jump_u)
        pen = data.gamma * kg / mesh.cell_diameters[cell] * np.dot(w, jump_u * phi(x))
        total += -pen if side == 1 else pen

    for j in range(3):
        F = mesh.cell_edges[cell, j]
        if not cut.edge_active[i][F]:
            continue
        tm, tp = mesh.edge_cells[F]
        nF = mesh.edge_normals[F]
        s = mesh.cell_edge_signs[cell, j]
        if tp >= 0:
            jump_dn = k * (u.grad(tm, side) - u.grad(tp, side)) @ nF
            s0, s1 = cut.edge_portion[i, F]
            if s1 > s0:
                A, B = mesh.vertices[mesh.edges[F]]
                x, w = quad_segment(A + s0 * (B - A), A + s1 * (B - A), QUAD_DEGREE)
                total -= 0.5 * jump_dn * np.dot(w, phi(x))
            if cut.ghost[i][F]:
                total -= data.gamma_g * mesh.edge_lengths[F] ** 2 * jump_dn * s * (grad_phi @ nF)
    return float(total)


def residual_direct(mesh: Mesh, cut: CutTopology, data: ProblemData, u: PrimalField,
                    cell: int, node: int, side: int) -> float:
    """Single entry of :func:`assemble_residuals` (convenience accessor)."""
    a = int(np.nonzero(mesh.cells[cell] == node)[0][0])
    return float(assemble_residuals(mesh, cut, data, u)[side - 1, cell, a])
