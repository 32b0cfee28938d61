"""A posteriori indicators and exact error norms.

All volume integrals over cut cells are split over the two sub-polygons;
the discrete gradient of ``u_h`` on ``T cap Omega^i`` is that of ``u_{h,i}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import ProblemData
from .flux import ReconstructedFlux, edge_normal_jumps, eval_flux_batch
from .geometry import CutTopology
from .mesh import Mesh
from .spaces import PrimalField

ERROR_DEGREE = 4


@dataclass
class EstimatorReport:
    """Local indicators and their global aggregates."""

    eta_T: np.ndarray  # (nc,)
    eta_tilde: np.ndarray  # (ncut,)
    eta_F: np.ndarray  # (n cut interior edges,)
    eps_T: np.ndarray  # (nc,)
    cut_edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    energy_error: Optional[float] = None
    flux_error: Optional[float] = None

    @property
    def eta(self) -> float:
        return float(np.sqrt(np.sum(self.eta_T**2)))

    @property
    def eta_gamma(self) -> float:
        return float(np.sqrt(np.sum(self.eta_F**2) + np.sum(self.eta_tilde**2)))

    @property
    def eps(self) -> float:
        return float(np.sqrt(np.sum(self.eps_T**2)))

    @property
    def effectivity(self) -> float:
        if not self.energy_error:
            return float("nan")
        return self.eta / self.energy_error


# -----------------------------------------------------------------------------
# indicators
# -----------------------------------------------------------------------------
def eta_T(flux: ReconstructedFlux, u: PrimalField, data: ProblemData, degree: int = 2) -> np.ndarray:
    """``||K^{-1/2}(sigma_h - K grad_h u_h)||_T`` for every cell.

    The integrand is quadratic, so the degree-2 rule is exact.
    """
    mesh, cut = flux.mesh, flux.cut
    c = flux.total()
    sq = np.zeros(mesh.n_cells)
    for i, k in enumerate(data.k):
        qc, qx, qw, _ = cut.volume_rule(i + 1, degree)
        tau = eval_flux_batch(mesh, c[i, qc], qc, qx) - k * u.cell_gradients[i, qc]
        sq += np.bincount(qc, weights=qw * np.einsum("nd,nd->n", tau, tau) / k, minlength=mesh.n_cells)
    return np.sqrt(sq)


def eta_tilde(cut: CutTopology, u: PrimalField, data: ProblemData) -> np.ndarray:
    """``sqrt(h_T k_Gamma / (h_T^min |Gamma_T|)) ||[u_h]||_{Gamma_T}`` on cut cells."""
    if cut.n_cut == 0:
        return np.zeros(0)
    mesh = cut.mesh
    ids, pts, w, bary = cut.interface_rule(2)
    T = cut.cut_cells[ids]
    jump = np.einsum("na,na->n", bary, u.cell_values[0][T] - u.cell_values[1][T])
    sq = np.bincount(ids, weights=w * jump**2, minlength=cut.n_cut)
    _, _, kg = data.weights
    hT = mesh.cell_diameters[cut.cut_cells]
    return np.sqrt(hT * kg / (cut.h_min * cut.gamma_length) * sq)


def eta_F(flux: ReconstructedFlux, data: ProblemData, check_mean: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``sqrt(h_F / k_Gamma) ||[[sigma_h . n_F]]||_F`` on interior cut edges.

    The projection onto constants is omitted: the jump has zero mean on
    every edge, which is verified when ``check_mean`` is set.
    Returns ``(edges, values)``.
    """
    edges, jumps, lengths = edge_normal_jumps(flux, include_g=True)
    sel = flux.cut.edge_cut[edges]
    edges, jumps, lengths = edges[sel], jumps[sel], lengths[sel]
    if check_mean and len(edges):
        mean = (jumps * lengths).sum(axis=1)
        scale = max(float((np.abs(jumps) * lengths).sum(axis=1).max(initial=0.0)),
                    float(np.abs(flux.edge_flux).max(initial=0.0)))
        if np.abs(mean).max() > 1e-8 * max(scale, np.finfo(float).tiny):
            raise AssertionError(f"normal-flux jump has nonzero mean {np.abs(mean).max():.3e} on a cut edge")
    _, _, kg = data.weights
    h = flux.mesh.edge_lengths[edges]
    return edges, np.sqrt(h / kg * (jumps**2 * lengths).sum(axis=1))


def eps_data(mesh: Mesh, cut: CutTopology, data: ProblemData, degree: int = ERROR_DEGREE) -> np.ndarray:
    """Per-cell ``h_T / sqrt(delta_T) ||f - pi^0_T f||_T``.

    ``delta_T`` is ``k_i`` on uncut cells of subdomain ``i`` and ``k_Gamma``
    on cut cells.
    """
    nc = mesh.n_cells
    rules = [cut.volume_rule(s, degree) for s in (1, 2)]
    vals = [data.source(r[1], s) for s, r in zip((1, 2), rules)]
    mean = sum(np.bincount(r[0], weights=r[2] * v, minlength=nc) for r, v in zip(rules, vals)) / mesh.cell_areas
    sq = sum(np.bincount(r[0], weights=r[2] * (v - mean[r[0]]) ** 2, minlength=nc) for r, v in zip(rules, vals))
    _, _, kg = data.weights
    delta = np.where(cut.cell_class == 1, data.k1, np.where(cut.cell_class == 2, data.k2, kg))
    return mesh.cell_diameters * np.sqrt(sq / delta)


# -----------------------------------------------------------------------------
# exact errors
# -----------------------------------------------------------------------------
GradFn = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def energy_error(u: PrimalField, grad_exact: GradFn, data: ProblemData, degree: int = ERROR_DEGREE) -> float:
    """``(sum_i ||k_i^{1/2} grad(u - u_{h,i})||^2_{Omega^i})^{1/2}`` on the discrete subdomains."""
    cut = u.cut
    total = 0.0
    for i, k in enumerate(data.k):
        qc, qx, qw, _ = cut.volume_rule(i + 1, degree)
        e = grad_exact(qx[:, 0], qx[:, 1], i + 1) - u.cell_gradients[i, qc]
        total += k * float(np.dot(qw, np.einsum("nd,nd->n", e, e)))
    return float(np.sqrt(total))


def flux_error(flux: ReconstructedFlux, grad_exact: GradFn, data: ProblemData, degree: int = ERROR_DEGREE) -> float:
    """``||K^{-1/2}(K grad u - sigma_h)||`` with the side-wise flux fields."""
    mesh, cut = flux.mesh, flux.cut
    c = flux.total()
    total = 0.0
    for i, k in enumerate(data.k):
        qc, qx, qw, _ = cut.volume_rule(i + 1, degree)
        e = k * grad_exact(qx[:, 0], qx[:, 1], i + 1) - eval_flux_batch(mesh, c[i, qc], qc, qx)
        total += float(np.dot(qw, np.einsum("nd,nd->n", e, e))) / k
    return float(np.sqrt(total))


def estimate(flux: ReconstructedFlux, u: PrimalField, data: ProblemData,
             grad_exact: Optional[GradFn] = None) -> EstimatorReport:
    """All indicators (and exact errors when ``grad_exact`` is given)."""
    edges, etaF = eta_F(flux, data)
    rep = EstimatorReport(
        eta_T=eta_T(flux, u, data),
        eta_tilde=eta_tilde(flux.cut, u, data),
        eta_F=etaF,
        eps_T=eps_data(flux.mesh, flux.cut, data),
        cut_edges=edges,
    )
    if grad_exact is not None:
        rep.energy_error = energy_error(u, grad_exact, data)
        rep.flux_error = flux_error(flux, grad_exact, data)
    return rep
