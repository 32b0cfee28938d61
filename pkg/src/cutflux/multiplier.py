"""Patch-local Lagrange multipliers correcting the averaged normal flux.

For every node ``N`` of ``Omega_h^i`` the contribution ``theta_N^i`` is an
edgewise linear function on the edges of ``F_N cap F_h^i`` that vanishes at
all endpoints other than ``N``.  Its unknowns are the values
``x_F = theta_N^i|_F(N)``; the equations are

    b_h^i(theta_N^i, phi_N chi_T) = r_h^i(phi_N chi_T),   T in omega_N^i,

with the trapezium rule on edges, i.e. ``sum_F (k_i h_F / 2) s(T, F) x_F``.
Interior nodes whose whole star lies in ``T_h^i`` additionally carry the
constraint ``sum_F s_N^F h_F x_F = 0`` of the multiplier space.

Since distinct nodes own distinct edge endpoints, the accumulated field
``theta_{h,i}`` is stored as ``theta[i, F, e]``, the value of
``theta_{h,i}|_F`` at ``mesh.edges[F, e]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import ProblemData, assemble_residuals
from .geometry import CutTopology
from .linalg import RANK_RTOL, DenseSystem, IncompatibleSystemError, solve_constrained_lsq
from .mesh import Mesh
from .spaces import PrimalField, node_edge_signs

COMPAT_TOL = 1e-8


@dataclass
class MultiplierField:
    """Edgewise linear multipliers, one family per subdomain.

    ``theta[i, F, e]`` is the value on edge ``F`` at endpoint
    ``mesh.edges[F, e]`` for subdomain ``i + 1`` (zero off ``F_h^{i+1}``).
    """

    theta: np.ndarray  # (2, ne, 2)
    residuals: np.ndarray  # (2, nc, 3), the right-hand sides used
    max_patch_residual: float = 0.0
    scale: float = 1.0

    def edge_mean(self, side: int) -> np.ndarray:
        """``pi_F^0 theta_{h,i}`` on every edge."""
        return self.theta[side - 1].mean(axis=1)


@dataclass
class NodePatchSystem:
    node: int
    side: int
    cells: np.ndarray  # rows: cells of omega_N^i
    edges: np.ndarray  # columns: edges of F_N cap F_h^i
    matrix: np.ndarray  # (n_cells, n_edges)
    constraint: np.ndarray | None  # (n_edges,) or None

    def dense(self, residuals: np.ndarray) -> DenseSystem:
        """Stack equations and (scaled) constraint row into one system."""
        M, r = self.matrix, np.asarray(residuals, dtype=float)
        if self.constraint is not None:
            M = np.vstack([M, self.constraint])
            r = np.append(r, 0.0)
        return DenseSystem(M, r)


# -----------------------------------------------------------------------------
# patch systems
# -----------------------------------------------------------------------------
def _endpoint(mesh: Mesh, F, N):
    """0 or 1 depending on which end of edge ``F`` is vertex ``N``."""
    return (mesh.edges[F, 1] == N).astype(np.int64)


def _constrained_nodes(mesh: Mesh, cut: CutTopology, side: int) -> np.ndarray:
    """Nodes carrying the multiplier-space constraint: off the domain boundary
    and with every surrounding cell in ``T_h^side``."""
    C = mesh.cells
    n_all = np.bincount(C.ravel(), minlength=mesh.n_vertices)
    act = cut.active[side - 1]
    n_act = np.bincount(C[act].ravel(), minlength=mesh.n_vertices)
    return (n_all == n_act) & (n_act > 0) & ~mesh.boundary_vertices


def node_patch_system(mesh: Mesh, cut: CutTopology, k: float, node: int, side: int,
                      cells=None) -> NodePatchSystem:
    """Build the local system of one node patch (reference implementation).

    ``cells`` restricts the patch to one edge-connected group of the star of
    ``node`` (needed where the side mesh is pinched at the node).
    """
    i = side - 1
    C = mesh.cells
    if cells is None:
        cells = np.nonzero(cut.active[i] & np.any(C == node, axis=1))[0]
    cells = np.asarray(cells)
    incident = np.nonzero(np.any(mesh.edges == node, axis=1) & cut.edge_active[i])[0]
    incident = incident[np.isin(mesh.edge_cells[incident, 0], cells)]
    col = {int(F): c for c, F in enumerate(incident)}
    M = np.zeros((len(cells), len(incident)))
    for r, T in enumerate(cells):
        a = int(np.nonzero(C[T] == node)[0][0])
        for j in ((a + 1) % 3, (a + 2) % 3):
            F = int(mesh.cell_edges[T, j])
            if F in col:
                M[r, col[F]] += 0.5 * k * mesh.edge_lengths[F] * mesh.cell_edge_signs[T, j]
    constraint = None
    if _constrained_nodes(mesh, cut, side)[node] and len(incident):
        sN = node_edge_signs(mesh)[incident, _endpoint(mesh, incident, node)]
        # scaled by k/2 to match the magnitude of the equation rows
        constraint = 0.5 * k * sN * mesh.edge_lengths[incident]
    return NodePatchSystem(node, side, cells, incident, M, constraint)


def solve_node_patch(system: NodePatchSystem, residuals, scale: float | None = None) -> np.ndarray:
    """Minimal-norm edge values ``theta_N^i(N)`` solving one patch system.

    Raises
    ------
    IncompatibleSystemError
        If the stacked system has no solution up to ``1e-8 * scale``.
    """
    if len(system.edges) == 0:
        r = np.asarray(residuals, dtype=float)
        if np.linalg.norm(r) > COMPAT_TOL * (scale or 1.0):
            raise IncompatibleSystemError(f"node {system.node}: nonzero residuals but no multiplier unknowns")
        return np.zeros(0)
    x, _ = solve_constrained_lsq(system.dense(residuals), tol=COMPAT_TOL, scale=scale)
    return x


# -----------------------------------------------------------------------------
# vectorized assembly of all patches
# -----------------------------------------------------------------------------
def _solve_side(mesh: Mesh, cut: CutTopology, cell_dof: np.ndarray, k: float, side: int,
                R: np.ndarray, scale: float):
    """Solve all patch systems of one side; patches are keyed by primal dof
    (a vertex with several edge-connected cell groups has one patch per group)."""
    i = side - 1
    C = mesh.cells
    theta = np.zeros((mesh.n_edges, 2))
    nd = int(cell_dof.max(initial=-1)) + 1

    act = np.nonzero(cut.active[i])[0]
    # rows: (dof, cell, local vertex)
    rT = np.repeat(act, 3)
    ra = np.tile(np.arange(3), len(act))
    rN = C[rT, ra]
    rD = cell_dof[rT, ra]
    order = np.lexsort((rT, rD))
    rT, ra, rN, rD = rT[order], ra[order], rN[order], rD[order]
    rhs = R[rT, ra]

    # columns: (dof, edge, endpoint) over F_h^i; the dof is read from T^-
    ea = np.nonzero(cut.edge_active[i])[0]
    cF = np.concatenate([ea, ea])
    ce = np.concatenate([np.zeros(len(ea), np.int64), np.ones(len(ea), np.int64)])
    cN = mesh.edges[cF, ce]
    tm = mesh.edge_cells[cF, 0]
    cD = cell_dof[tm, np.argmax(C[tm] == cN[:, None], axis=1)]
    order = np.lexsort((cF, cD))
    cF, ce, cN, cD = cF[order], ce[order], cN[order], cD[order]

    n_rows = np.bincount(rD, minlength=nd)
    n_cols = np.bincount(cD, minlength=nd)
    row_start = np.concatenate([[0], np.cumsum(n_rows)[:-1]])
    col_start = np.concatenate([[0], np.cumsum(n_cols)[:-1]])
    local_row = np.arange(len(rD)) - row_start[rD]
    col_of = np.full((mesh.n_edges, 2), -1)
    col_of[cF, ce] = np.arange(len(cF)) - col_start[cD]

    dof_node = np.zeros(nd, dtype=np.int64)
    dof_node[rD] = rN
    constrained = _constrained_nodes(mesh, cut, side)[dof_node] & (n_cols > 0)
    total_rows = n_rows + constrained

    # matrix entries from the two edges of each row containing the node
    ent_dof, ent_row, ent_col, ent_val = [], [], [], []
    for off in (1, 2):
        j = (ra + off) % 3
        F = mesh.cell_edges[rT, j]
        on = cut.edge_active[i][F]
        e = _endpoint(mesh, F, rN)
        ent_dof.append(rD[on])
        ent_row.append(local_row[on])
        ent_col.append(col_of[F[on], e[on]])
        ent_val.append(0.5 * k * mesh.edge_lengths[F[on]] * mesh.cell_edge_signs[rT[on], j[on]])
    ent_dof = np.concatenate(ent_dof)
    ent_row = np.concatenate(ent_row)
    ent_col = np.concatenate(ent_col)
    ent_val = np.concatenate(ent_val)
    if np.any(ent_col < 0):
        raise RuntimeError("patch column lookup failed")

    sN = node_edge_signs(mesh)
    con_val = 0.5 * k * sN[cF, ce] * mesh.edge_lengths[cF]

    worst = 0.0
    # patches without unknowns: residuals must vanish
    empty = (n_cols == 0) & (n_rows > 0)
    if np.any(empty):
        bad = np.abs(rhs[empty[rD]])
        if bad.size and bad.max() > COMPAT_TOL * scale:
            raise IncompatibleSystemError(f"side {side}: patch without multiplier unknowns has residual {bad.max():.3e}")

    keys = np.nonzero(n_cols > 0)[0]
    shapes = total_rows[keys] * 10_000 + n_cols[keys]
    for key in np.unique(shapes):
        grp = keys[shapes == key]
        m, n = int(key // 10_000), int(key % 10_000)
        gid = np.full(nd, -1)
        gid[grp] = np.arange(len(grp))
        M = np.zeros((len(grp), m, n))
        b = np.zeros((len(grp), m))
        sel = gid[ent_dof] >= 0
        np.add.at(M, (gid[ent_dof[sel]], ent_row[sel], ent_col[sel]), ent_val[sel])
        rs = gid[rD] >= 0
        b[gid[rD[rs]], local_row[rs]] = rhs[rs]
        cs = (gid[cD] >= 0) & constrained[cD]
        cd = cD[cs]
        M[gid[cd], n_rows[cd], col_of[cF[cs], ce[cs]]] = con_val[cs]
        P = np.linalg.pinv(M, rcond=RANK_RTOL)
        x = np.einsum("gij,gj->gi", P, b)
        res = np.linalg.norm(np.einsum("gij,gj->gi", M, x) - b, axis=1)
        worst = max(worst, float(res.max(initial=0.0)))
        if res.max(initial=0.0) > COMPAT_TOL * scale:
            g = int(res.argmax())
            raise IncompatibleSystemError(
                f"side {side}, node {int(dof_node[grp[g]])}: patch residual {res[g]:.3e} exceeds "
                f"{COMPAT_TOL:.0e} * {scale:.3e} ({m} rows, {n} unknowns)"
            )
        cs = gid[cD] >= 0
        theta[cF[cs], ce[cs]] = x[gid[cD[cs]], col_of[cF[cs], ce[cs]]]
    return theta, worst


def residual_scale(mesh: Mesh, cut: CutTopology, data: ProblemData, u: PrimalField, R: np.ndarray) -> float:
    """Magnitude against which residual-level quantities are judged.

    The larger of the biggest local residual and the size of a typical
    element flux term ``k_i |grad u_{h,i}| h_T``; the latter keeps the scale
    meaningful when all residuals vanish (linear solutions).
    """
    flux = 0.0
    for i, k in enumerate(data.k):
        g = u.cell_gradients[i][cut.active[i]]
        if len(g):
            flux = max(flux, k * float(np.hypot(g[:, 0], g[:, 1]).max()) * float(mesh.cell_diameters.max()))
    return max(float(np.abs(R).max(initial=0.0)), flux, np.finfo(float).tiny)


def assemble_theta(mesh: Mesh, cut: CutTopology, u: PrimalField, data: ProblemData,
                   residuals: np.ndarray | None = None) -> MultiplierField:
    """Solve every node patch and accumulate ``theta_{h,1}``, ``theta_{h,2}``."""
    R = assemble_residuals(mesh, cut, data, u) if residuals is None else residuals
    scale = residual_scale(mesh, cut, data, u, R)
    theta = np.zeros((2, mesh.n_edges, 2))
    worst = 0.0
    for i, k in enumerate(data.k):
        theta[i], w = _solve_side(mesh, cut, u.dofmap.cell_dof[i], k, i + 1, R[i], scale)
        worst = max(worst, w)
    return MultiplierField(theta=theta, residuals=R, max_patch_residual=worst, scale=scale)


# -----------------------------------------------------------------------------
# b_h and checks
# -----------------------------------------------------------------------------
def bh_elementwise(mesh: Mesh, cut: CutTopology, k: tuple[float, float], theta: np.ndarray) -> np.ndarray:
    """``b_h^i(mu_i, phi_N chi_T)`` for every (side, cell, local vertex).

    Trapezium rule on each edge: only the value of ``mu`` at ``N`` enters.
    """
    C = mesh.cells
    out = np.zeros((2, mesh.n_cells, 3))
    for i in range(2):
        act = cut.active[i]
        for a in range(3):
            N = C[:, a]
            for off in (1, 2):
                j = (a + off) % 3
                F = mesh.cell_edges[:, j]
                on = act & cut.edge_active[i][F]
                val = 0.5 * k[i] * mesh.edge_lengths[F] * mesh.cell_edge_signs[:, j] * theta[i, F, _endpoint(mesh, F, N)]
                out[i, :, a] += np.where(on, val, 0.0)
    return out


def mixed_identity_defect(mesh: Mesh, cut: CutTopology, data: ProblemData, mult: MultiplierField) -> tuple[float, float]:
    """``max |b_h^i(theta, phi_N chi_T) - r_h^i(phi_N chi_T)|`` and the residual scale."""
    B = bh_elementwise(mesh, cut, data.k, mult.theta)
    return float(np.abs(B - mult.residuals).max(initial=0.0)), mult.scale


def constraint_defect(mesh: Mesh, cut: CutTopology, theta: np.ndarray) -> float:
    """Largest ``|sum_F s_N^F h_F mu|_F(N)|`` over constrained nodes (relative to ``max h |mu|``)."""
    sN = node_edge_signs(mesh)
    worst = 0.0
    for i in range(2):
        ea = np.nonzero(cut.edge_active[i])[0]
        acc = np.zeros(mesh.n_vertices)
        mag = np.zeros(mesh.n_vertices)
        for e in range(2):
            v = sN[ea, e] * mesh.edge_lengths[ea] * theta[i, ea, e]
            np.add.at(acc, mesh.edges[ea, e], v)
            np.maximum.at(mag, mesh.edges[ea, e], np.abs(v))
        nodes = _constrained_nodes(mesh, cut, i + 1)
        if nodes.any():
            worst = max(worst, float((np.abs(acc[nodes]) / np.maximum(mag[nodes], np.finfo(float).tiny)).max()))
    return worst


def random_multiplier(mesh: Mesh, cut: CutTopology, rng: np.random.Generator) -> np.ndarray:
    """A random member of the multiplier space (constraint enforced by projection)."""
    sN = node_edge_signs(mesh)
    theta = np.zeros((2, mesh.n_edges, 2))
    for i in range(2):
        ea = cut.edge_active[i]
        theta[i][ea] = rng.standard_normal((int(ea.sum()), 2))
        nodes = _constrained_nodes(mesh, cut, i + 1)
        # the constraint only couples values at the same node: project per node
        c = np.where(ea[:, None], sN * mesh.edge_lengths[:, None], 0.0)
        num = np.zeros(mesh.n_vertices)
        den = np.zeros(mesh.n_vertices)
        for e in range(2):
            np.add.at(num, mesh.edges[:, e], c[:, e] * theta[i, :, e])
            np.add.at(den, mesh.edges[:, e], c[:, e] ** 2)
        lam = np.where(nodes & (den > 0), num / np.where(den > 0, den, 1.0), 0.0)
        for e in range(2):
            theta[i, :, e] -= lam[mesh.edges[:, e]] * c[:, e]
    return theta


def bh_global(mesh: Mesh, cut: CutTopology, k: tuple[float, float], theta: np.ndarray, v: PrimalField) -> float:
    """``b_h(mu, v)`` for ``v`` in the doubled P1 space, summed elementwise.

    Uses ``v = sum_T sum_N v_i(N) phi_N chi_T`` so that the edge-jump
    cancellation is carried out numerically rather than assumed.
    """
    B = bh_elementwise(mesh, cut, k, theta)
    total = 0.0
    for i in range(2):
        act = cut.active[i]
        vals = v.cell_values[i][act]
        total += float(np.sum(B[i][act] * vals))
    return total
