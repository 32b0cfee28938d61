"""Conservative flux reconstruction in the immersed Raviart-Thomas space.

Every cell stores RT0 coefficients ``x[s, T, j]``: the flux of the side-``s``
field through its full local edge ``j`` in the outward direction, so that

    sigma(x) = sum_j x_j / (2 |T|) (x - A_j),   div sigma = sum_j x_j / |T|.

Uncut cells use a single field (stored for their own side and copied to the
other slot).  On a cut cell the pair ``(sigma_1, sigma_2)`` is recovered
from the three edge fluxes by a 6x6 system that also imposes continuity of
the normal component across the interface segment, a weak tangential
condition at its midpoint and equal divergences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import QUAD_DEGREE, ProblemData, _portion_integrals
from .geometry import CutTopology
from .mesh import Mesh
from .multiplier import MultiplierField
from .spaces import PrimalField


class SingularCutSystemError(RuntimeError):
    """The cut-cell flux system is singular (degenerate cut geometry)."""


@dataclass
class ReconstructedFlux:
    """Cellwise RT0 coefficients of ``sigma_h`` and of the correction ``sigma^g``.

    ``coeffs[s, T, :]`` holds the edge fluxes of the side-``s+1`` field on
    cell ``T``; uncut cells have identical rows for both sides.
    ``coeffs_g`` is nonzero only on cut cells and only when ``g`` is given.
    """

    mesh: Mesh
    cut: CutTopology
    edge_flux: np.ndarray  # (ne,) int_F sigma_h . n_F
    coeffs: np.ndarray  # (2, nc, 3)
    coeffs_g: np.ndarray  # (2, nc, 3)
    g_mean: np.ndarray  # (ncut,)

    def total(self) -> np.ndarray:
        """Coefficients of ``sigma_h^g = sigma_h + sigma^g``."""
        return self.coeffs + self.coeffs_g

    def eval(self, cell: int, side: int, points, include_g: bool = True) -> np.ndarray:
        return eval_flux(self, cell, side, points, include_g)

    def divergence(self, include_g: bool = True) -> np.ndarray:
        """(2, nc) constant divergence of each side field."""
        c = self.total() if include_g else self.coeffs
        return c.sum(axis=2) / self.mesh.cell_areas[None, :]


# -----------------------------------------------------------------------------
# edge fluxes
# -----------------------------------------------------------------------------
def edge_fluxes(mesh: Mesh, cut: CutTopology, u: PrimalField, mult: MultiplierField,
                data: ProblemData) -> np.ndarray:
    """``int_F sigma_h . n_F`` on every edge.

    Sums, over the subdomains ``i`` with ``F`` in ``F_h^i``, the mean normal
    flux integrated over ``F cap Omega^i`` minus ``k_i`` times the integral
    of ``theta_{h,i}`` over the full edge.  On the domain boundary the mean
    is the one-sided trace.
    """
    ec = mesh.edge_cells
    bnd = ec[:, 1] < 0
    n = mesh.edge_normals
    h = mesh.edge_lengths
    sub = cut.edge_sub_lengths()  # (ne, 2)
    out = np.zeros(mesh.n_edges)
    for i, k in enumerate(data.k):
        ea = cut.edge_active[i]
        g = np.nan_to_num(u.cell_gradients[i])
        gm = g[ec[:, 0]]
        gp = np.where(bnd[:, None], gm, g[np.maximum(ec[:, 1], 0)])
        mean = 0.5 * k * np.einsum("ed,ed->e", gm + gp, n)
        val = mean * sub[:, i] - k * h * mult.theta[i].mean(axis=1)
        out += np.where(ea, val, 0.0)
    return out


# -----------------------------------------------------------------------------
# cut-cell conversion
# -----------------------------------------------------------------------------
def cut_cell_matrices(mesh: Mesh, cut: CutTopology, k1: float, k2: float):
    """The 6x6 matrices mapping ``(x^1, x^2)`` to the cut-cell conditions.

    Rows: three edge rows (local edge order), divergence, normal jump,
    tangential condition.  The last two are scaled by ``1 / h_T``.
    Returns ``(M, ncut)`` with ``M`` of shape (ncut, 6, 6).
    """
    T = cut.cut_cells
    n = len(T)
    M = np.zeros((n, 6, 6))
    if n == 0:
        return M
    sub = cut.edge_sub_lengths()
    E = mesh.cell_edges[T]  # (n, 3)
    h = mesh.edge_lengths[E]
    w1 = sub[E, 0] / h
    w2 = sub[E, 1] / h
    cutE = cut.edge_cut[E]
    for j in range(3):
        whole1 = ~cutE[:, j] & (w1[:, j] > 0.5)
        whole2 = ~cutE[:, j] & ~whole1
        M[:, j, j] = np.where(cutE[:, j], w1[:, j], whole1.astype(float))
        M[:, j, 3 + j] = np.where(cutE[:, j], w2[:, j], whole2.astype(float))
    M[:, 3, :3] = 1.0
    M[:, 3, 3:] = -1.0
    A = mesh.vertices[mesh.cells[T]]  # (n, 3, 2)
    d = cut.x_gamma[:, None, :] - A
    hT = mesh.cell_diameters[T][:, None]
    alpha = np.einsum("njd,nd->nj", d, cut.normal) / hT
    beta = np.einsum("njd,nd->nj", d, cut.tangent) / hT
    M[:, 4, :3] = alpha
    M[:, 4, 3:] = -alpha
    M[:, 5, :3] = beta / k1
    M[:, 5, 3:] = -beta / k2
    return M


def irt_split(mesh: Mesh, cut: CutTopology, k1: float, k2: float, b: np.ndarray,
              g_mean: np.ndarray | None = None, matrices: np.ndarray | None = None) -> np.ndarray:
    """Convert cut-cell edge fluxes to a pair of RT0 fields.

    Parameters
    ----------
    b : (ncut, 3)
        Outward flux through each full local edge of every cut cell.
    g_mean : (ncut,), optional
        Prescribed normal jump ``[sigma . n_Gamma]`` (zero by default).

    Returns
    -------
    (ncut, 2, 3) edge-flux coefficients of ``sigma_1`` and ``sigma_2``.
    """
    M = cut_cell_matrices(mesh, cut, k1, k2) if matrices is None else matrices
    n = len(M)
    if n == 0:
        return np.zeros((0, 2, 3))
    rhs = np.zeros((n, 6))
    rhs[:, :3] = b
    if g_mean is not None:
        T = cut.cut_cells
        rhs[:, 4] = 2.0 * mesh.cell_areas[T] * g_mean / mesh.cell_diameters[T]
    cond = np.linalg.cond(M)
    if not np.all(np.isfinite(cond)) or cond.max() > 1e14:
        kk = int(np.nan_to_num(cond, nan=np.inf).argmax())
        raise SingularCutSystemError(
            f"cut cell {int(cut.cut_cells[kk])}: flux system condition {cond[kk]:.3e}, "
            f"|Gamma_T| = {cut.gamma_length[kk]:.3e}, h_min = {cut.h_min[kk]:.3e}"
        )
    x = np.linalg.solve(M, rhs[..., None])[..., 0]
    return x.reshape(n, 2, 3)


def interface_mean_g(cut: CutTopology, data: ProblemData) -> np.ndarray:
    """Mean of ``g`` on every interface segment (same rule as the load)."""
    if cut.n_cut == 0 or data.g is None:
        return np.zeros(cut.n_cut)
    ids, pts, w, _ = cut.interface_rule(QUAD_DEGREE)
    num = np.bincount(ids, weights=w * data.jump(pts), minlength=cut.n_cut)
    return num / cut.gamma_length


def sigma_g(mesh: Mesh, cut: CutTopology, data: ProblemData, matrices=None) -> tuple[np.ndarray, np.ndarray]:
    """Correction pair with zero edge fluxes and normal jump ``g_h`` on each cut cell.

    Returns ``(coeffs (ncut, 2, 3), g_mean (ncut,))``.
    """
    gm = interface_mean_g(cut, data)
    if cut.n_cut == 0 or not np.any(gm):
        return np.zeros((cut.n_cut, 2, 3)), gm
    x = irt_split(mesh, cut, data.k1, data.k2, np.zeros((cut.n_cut, 3)), gm, matrices)
    return x, gm


def reconstruct_flux(mesh: Mesh, cut: CutTopology, u: PrimalField, mult: MultiplierField,
                     data: ProblemData) -> ReconstructedFlux:
    """Assemble ``sigma_h`` (and ``sigma^g`` when ``g`` is given)."""
    phi = edge_fluxes(mesh, cut, u, mult, data)
    b = mesh.cell_edge_signs * phi[mesh.cell_edges]  # (nc, 3) outward fluxes
    coeffs = np.repeat(b[None], 2, axis=0)
    coeffs_g = np.zeros_like(coeffs)
    M = cut_cell_matrices(mesh, cut, data.k1, data.k2)
    if cut.n_cut:
        T = cut.cut_cells
        pair = irt_split(mesh, cut, data.k1, data.k2, b[T], None, M)
        coeffs[:, T, :] = pair.transpose(1, 0, 2)
        xg, gm = sigma_g(mesh, cut, data, M)
        coeffs_g[:, T, :] = xg.transpose(1, 0, 2)
    else:
        gm = np.zeros(0)
    return ReconstructedFlux(mesh, cut, phi, coeffs, coeffs_g, gm)


# -----------------------------------------------------------------------------
# evaluation and checks
# -----------------------------------------------------------------------------
def eval_flux(flux: ReconstructedFlux, cell: int, side: int, points, include_g: bool = True) -> np.ndarray:
    """RT0 field of ``cell`` (side ``side`` on cut cells) at ``points``."""
    if side not in (1, 2):
        raise ValueError("side must be 1 or 2")
    if not flux.cut.active[side - 1][cell]:
        raise ValueError(f"cell {cell} does not intersect subdomain {side}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = (flux.total() if include_g else flux.coeffs)[side - 1, cell]
    A = flux.mesh.vertices[flux.mesh.cells[cell]]
    return np.einsum("j,njd->nd", c, pts[:, None, :] - A[None]) / (2.0 * flux.mesh.cell_areas[cell])


def eval_flux_batch(mesh: Mesh, coeffs: np.ndarray, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Vectorised RT0 evaluation: ``coeffs`` (n, 3) aligned with ``cells`` and ``points``."""
    A = mesh.vertices[mesh.cells[cells]]
    return np.einsum("nj,njd->nd", coeffs, points[:, None, :] - A) / (2.0 * mesh.cell_areas[cells])[:, None]


def cell_source_integrals(cut: CutTopology, data: ProblemData) -> np.ndarray:
    """``int_T f`` per cell with the load quadrature (both sides on cut cells)."""
    out = np.zeros(cut.mesh.n_cells)
    for side in (1, 2):
        qc, qx, qw, _ = cut.volume_rule(side, QUAD_DEGREE)
        out += np.bincount(qc, weights=qw * data.source(qx, side), minlength=cut.mesh.n_cells)
    return out


def conservation_defect(flux: ReconstructedFlux, data: ProblemData) -> tuple[np.ndarray, float]:
    """Per-cell ``|int_T div_h sigma + int_T f|`` and the reference scale.

    ``div_h`` is taken piecewise on the sub-polygons of cut cells and includes
    ``sigma^g``.  The scale is ``max_T |T| sup_T |f|`` (sampled at quadrature
    points); for ``f = 0`` it falls back to the largest edge flux.
    """
    mesh, cut = flux.mesh, flux.cut
    div = flux.divergence(include_g=True)
    integ = np.zeros(mesh.n_cells)
    for side in (1, 2):
        integ += np.where(cut.active[side - 1], cut.sub_area(side) * div[side - 1], 0.0)
    fint = cell_source_integrals(cut, data)
    defect = np.abs(integ + fint)
    fmax = np.zeros(mesh.n_cells)
    for side in (1, 2):
        qc, qx, _, _ = cut.volume_rule(side, QUAD_DEGREE)
        np.maximum.at(fmax, qc, np.abs(data.source(qx, side)))
    scale = float((mesh.cell_areas * fmax).max(initial=0.0))
    if scale == 0.0:
        scale = float(np.abs(flux.edge_flux).max(initial=0.0)) or 1.0
    return defect, scale


def check_conservation(flux: ReconstructedFlux, data: ProblemData) -> float:
    """Largest relative conservation defect ``max_T defect_T / scale``."""
    d, s = conservation_defect(flux, data)
    return float(d.max(initial=0.0) / s)


def irt_condition_defects(flux: ReconstructedFlux, data: ProblemData, include_g: bool = False) -> np.ndarray:
    """(ncut, 3) relative defects of the cut-cell conditions.

    Columns: normal jump at ``x_Gamma`` minus ``g_h`` (only with
    ``include_g``), tangential jump of ``K^{-1} sigma`` at ``x_Gamma`` and
    divergence mismatch, each relative to the flux magnitude on the cell.
    """
    mesh, cut = flux.mesh, flux.cut
    T = cut.cut_cells
    c = flux.total() if include_g else flux.coeffs
    xg = cut.x_gamma
    s1 = eval_flux_batch(mesh, c[0, T], T, xg)
    s2 = eval_flux_batch(mesh, c[1, T], T, xg)
    mag = np.maximum(np.abs(c[:, T]).max(axis=(0, 2)) / mesh.cell_diameters[T], np.finfo(float).tiny)
    target = flux.g_mean if include_g else np.zeros(len(T))
    dn = np.einsum("nd,nd->n", s1 - s2, cut.normal) - target
    # also probe the normal jump at the segment endpoints (should be constant)
    for e in range(2):
        p = cut.gamma[:, e]
        a = eval_flux_batch(mesh, c[0, T], T, p) - eval_flux_batch(mesh, c[1, T], T, p)
        dn = np.where(np.abs(np.einsum("nd,nd->n", a, cut.normal) - target) > np.abs(dn),
                      np.einsum("nd,nd->n", a, cut.normal) - target, dn)
    dt = np.einsum("nd,nd->n", s1 / data.k1 - s2 / data.k2, cut.tangent) * min(data.k1, data.k2)
    dd = (c[0, T].sum(axis=1) - c[1, T].sum(axis=1)) / mesh.cell_areas[T] * mesh.cell_diameters[T]
    return np.abs(np.stack([dn, dt, dd], axis=1)) / mag[:, None]


def edge_normal_jumps(flux: ReconstructedFlux, include_g: bool = True):
    """Piecewise-constant normal-trace jumps on interior edges.

    Returns ``(edges, jumps (n, 2), lengths (n, 2))``: for each interior
    edge the jump ``sigma^- . n_F - sigma^+ . n_F`` on ``F cap Omega^1`` and
    ``F cap Omega^2`` together with the sub-lengths.
    """
    mesh, cut = flux.mesh, flux.cut
    c = flux.total() if include_g else flux.coeffs
    interior = np.nonzero(mesh.edge_cells[:, 1] >= 0)[0]
    tm, tp = mesh.edge_cells[interior, 0], mesh.edge_cells[interior, 1]
    jm = np.argmax(mesh.cell_edges[tm] == interior[:, None], axis=1)
    jp = np.argmax(mesh.cell_edges[tp] == interior[:, None], axis=1)
    h = mesh.edge_lengths[interior]
    # outward flux of T- equals flux along n_F, of T+ equals minus it
    xm = c[:, tm, jm]  # (2, n)
    xp = c[:, tp, jp]
    jumps = ((xm + xp) / h[None, :]).T
    lengths = cut.edge_sub_lengths()[interior]
    return interior, jumps, lengths


def edge_jump_means(flux: ReconstructedFlux, include_g: bool = True) -> tuple[np.ndarray, float]:
    """``int_F [[sigma . n_F]]`` per interior edge and the flux scale."""
    _, jumps, lengths = edge_normal_jumps(flux, include_g)
    mean = (jumps * lengths).sum(axis=1)
    scale = float(np.abs(flux.edge_flux).max(initial=0.0)) or 1.0
    return mean, scale
