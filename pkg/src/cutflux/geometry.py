"""Level-set interfaces, cut-cell geometry and quadrature over cut pieces.

The interface is linearised cell by cell: inside a cut triangle it is the
segment joining the zero crossings of the P1 interpolant of the level set on
the two edges whose end values change sign.  Subdomain 1 is ``phi < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .mesh import Mesh

INSIDE1, INSIDE2, CUT = 1, 2, 0

SNAP_TOL = 1e-12


# -----------------------------------------------------------------------------
# quadrature
# -----------------------------------------------------------------------------
@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and weights (summing to 1) exact to ``degree``."""
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    if degree == 2:
        bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        return bary, np.full(3, 1 / 3)
    if degree <= 4:
        # 6-point symmetric rule (Dunavant)
        a1, w1 = 0.445948490915965, 0.223381589678011
        a2, w2 = 0.091576213509771, 0.109951743655322
        pts = []
        for a in (a1, a2):
            b = 1.0 - 2.0 * a
            pts += [[b, a, a], [a, b, a], [a, a, b]]
        return np.array(pts), np.array([w1] * 3 + [w2] * 3)
    # collapsed Gauss-Legendre rule for anything higher
    n = (degree + 3) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    s, t = np.meshgrid(x, x, indexing="ij")
    ws = np.outer(w, w) * (1.0 - s)
    l1 = s.ravel()
    l2 = ((1.0 - s) * t).ravel()
    bary = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
    return bary, 2.0 * ws.ravel()


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points in [0, 1] and weights (summing to 1)."""
    n = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def quad_triangle(vertices, degree: int = 2):
    """Physical points and weights on a triangle given by its three vertices."""
    V = np.asarray(vertices, dtype=float)
    bary, w = triangle_rule(degree)
    area = 0.5 * abs((V[1, 0] - V[0, 0]) * (V[2, 1] - V[0, 1]) - (V[1, 1] - V[0, 1]) * (V[2, 0] - V[0, 0]))
    return bary @ V, w * area


def quad_polygon(polygon, degree: int = 2):
    """Quadrature on a convex polygon by fan triangulation from its first vertex.

    Returns empty arrays for a polygon of zero area.
    """
    P = np.asarray(polygon, dtype=float)
    pts, wts = [], []
    for k in range(1, len(P) - 1):
        x, w = quad_triangle(P[[0, k, k + 1]], degree)
        if w.sum() > 0.0:
            pts.append(x)
            wts.append(w)
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(pts), np.concatenate(wts)


def quad_segment(p0, p1, degree: int = 2):
    """Gauss-Legendre points and weights on the segment ``p0 -> p1``."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    s, w = segment_rule(degree)
    length = float(np.hypot(*(p1 - p0)))
    return p0 + s[:, None] * (p1 - p0), w * length


def polygon_area(polygon) -> float:
    P = np.asarray(polygon, dtype=float)
    x, y = P[:, 0], P[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# -----------------------------------------------------------------------------
# coefficients
# -----------------------------------------------------------------------------
def kappa_weights(k1: float, k2: float) -> tuple[float, float, float]:
    """Interface weights ``(omega1, omega2, k_gamma)`` for diffusivities k1, k2."""
    if not (k1 > 0 and k2 > 0):
        raise ValueError("diffusivities must be positive")
    s = k1 + k2
    return k2 / s, k1 / s, k1 * k2 / s


# -----------------------------------------------------------------------------
# classification
# -----------------------------------------------------------------------------
def snap_levelset(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Push vertex values with ``|phi| < 1e-12 h`` to ``+1e-12 h``."""
    values = np.array(values, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise ValueError("need one level-set value per vertex")
    if not np.all(np.isfinite(values)):
        raise ValueError("level-set values must be finite")
    h = np.zeros(mesh.n_vertices)
    np.maximum.at(h, mesh.cells.ravel(), np.repeat(mesh.cell_diameters, 3))
    small = np.abs(values) < SNAP_TOL * h
    values[small] = SNAP_TOL * h[small]
    return values


@dataclass(eq=False)
class CutTopology:
    """Classification of a mesh against a linearised interface.

    Attributes
    ----------
    phi : (nv,) vertex values of the level set (after snapping)
    vertex_side : (nv,) 1 or 2
    cell_class : (nc,) INSIDE1, INSIDE2 or CUT
    active : (2, nc) bool, membership of cells in the side meshes T_h^1, T_h^2
    edge_cut : (ne,) bool, edges whose end values change sign
    edge_cut_param : (ne,) position of the zero crossing along the edge,
        measured from ``mesh.edges[:, 0]`` (nan for uncut edges)
    edge_portion : (2, ne, 2) parameter interval of ``F cap Omega^i``
        along each edge (empty intervals have equal ends)
    edge_active : (2, ne) bool, the edge sets F_h^1 and F_h^2
    ghost : (2, ne) bool, ghost-penalty edge sets F_g^1 and F_g^2
    cut_cells : (ncut,) indices of cut cells; ``cut_index`` is its inverse
    gamma : (ncut, 2, 2) interface segment endpoints per cut cell
    normal, tangent : (ncut, 2) unit normal (1 -> 2) and clockwise tangent
    x_gamma : (ncut, 2) segment midpoints
    gamma_length : (ncut,)
    h_min : (ncut,) shortest sub-edge of the cut edges of each cut cell
    polygons : list of (poly1, poly2) per cut cell
    """

    mesh: Mesh
    phi: np.ndarray
    vertex_side: np.ndarray
    cell_class: np.ndarray
    active: np.ndarray
    edge_cut: np.ndarray
    edge_cut_param: np.ndarray
    edge_portion: np.ndarray
    edge_active: np.ndarray
    ghost: np.ndarray
    cut_cells: np.ndarray
    cut_index: np.ndarray
    gamma: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    x_gamma: np.ndarray
    gamma_length: np.ndarray
    h_min: np.ndarray
    polygons: list
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_cut(self) -> int:
        return len(self.cut_cells)

    def sub_area(self, side: int) -> np.ndarray:
        """Area of ``T cap Omega^side`` for every cell (0 where inactive)."""
        key = ("area", side)
        if key not in self._cache:
            cells, _, w, _ = self.volume_rule(side, 1)
            self._cache[key] = np.bincount(cells, weights=w, minlength=self.mesh.n_cells)
        return self._cache[key]

    def edge_sub_lengths(self) -> np.ndarray:
        """(ne, 2) lengths of ``F cap Omega^1`` and ``F cap Omega^2``."""
        por = self.edge_portion
        return (por[:, :, 1] - por[:, :, 0]).T * self.mesh.edge_lengths[:, None]

    def volume_rule(self, side: int, degree: int = 2):
        """Flattened quadrature over ``T cap Omega^side`` for all active cells.

        Returns ``(cells, points, weights, bary)`` where ``bary`` holds the
        barycentric coordinates of every point in its own cell.
        """
        key = ("vol", side, degree)
        if key in self._cache:
            return self._cache[key]
        mesh = self.mesh
        cls = INSIDE1 if side == 1 else INSIDE2
        whole = np.nonzero(self.cell_class == cls)[0]
        bary, w = triangle_rule(degree)
        nq = len(w)
        V = mesh.vertices[mesh.cells[whole]]  # (n, 3, 2)
        pts = np.einsum("qj,njd->nqd", bary, V).reshape(-1, 2)
        wts = (mesh.cell_areas[whole][:, None] * w[None, :]).ravel()
        cells = np.repeat(whole, nq)
        bar = np.tile(bary, (len(whole), 1))

        cc, cp, cw, cb = [cells], [pts], [wts], [bar]
        for k, T in enumerate(self.cut_cells):
            x, wk = quad_polygon(self.polygons[k][side - 1], degree)
            if len(wk) == 0:
                continue
            cc.append(np.full(len(wk), T))
            cp.append(x)
            cw.append(wk)
            cb.append(mesh.barycentric(T, x))
        out = (np.concatenate(cc), np.vstack(cp), np.concatenate(cw), np.vstack(cb))
        self._cache[key] = out
        return out

    def interface_rule(self, degree: int = 2):
        """Flattened quadrature on all interface segments.

        Returns ``(cut_ids, points, weights, bary)`` with ``cut_ids`` indexing
        ``cut_cells``.
        """
        key = ("gamma", degree)
        if key in self._cache:
            return self._cache[key]
        s, w = segment_rule(degree)
        n = self.n_cut
        G = self.gamma
        pts = G[:, None, 0, :] + s[None, :, None] * (G[:, None, 1, :] - G[:, None, 0, :])
        wts = self.gamma_length[:, None] * w[None, :]
        ids = np.repeat(np.arange(n), len(w))
        pts = pts.reshape(-1, 2)
        bary = np.zeros((len(ids), 3))
        for k, T in enumerate(self.cut_cells):
            sl = slice(k * len(w), (k + 1) * len(w))
            bary[sl] = self.mesh.barycentric(T, pts[sl])
        out = (ids, pts, wts.ravel(), bary)
        self._cache[key] = out
        return out

    def near_interface(self) -> np.ndarray:
        """Cells that are cut or share a vertex with a cut cell."""
        mark = np.zeros(self.mesh.n_vertices, dtype=bool)
        mark[self.mesh.cells[self.cut_cells].ravel()] = True
        return mark[self.mesh.cells].any(axis=1)


LevelSet = Callable[[np.ndarray, np.ndarray], np.ndarray]


def classify(mesh: Mesh, phi) -> CutTopology:
    """Classify cells and edges against the zero level of ``phi``.

    ``phi`` is either a callable ``phi(x, y)`` or an array of vertex values.
    """
    if callable(phi):
        values = np.asarray(phi(mesh.vertices[:, 0], mesh.vertices[:, 1]), dtype=float)
    else:
        values = np.asarray(phi, dtype=float)
    values = snap_levelset(mesh, values)
    if np.any(values == 0.0):
        raise ValueError("level set vanishes at a mesh vertex")

    V, C, E = mesh.vertices, mesh.cells, mesh.edges
    side = np.where(values < 0, 1, 2)
    cside = side[C]
    cell_class = np.full(mesh.n_cells, CUT)
    cell_class[np.all(cside == 1, axis=1)] = INSIDE1
    cell_class[np.all(cside == 2, axis=1)] = INSIDE2
    active = np.stack([cell_class != INSIDE2, cell_class != INSIDE1])

    pa, pb = values[E[:, 0]], values[E[:, 1]]
    edge_cut = (pa < 0) != (pb < 0)
    t = np.full(mesh.n_edges, np.nan)
    t[edge_cut] = pa[edge_cut] / (pa[edge_cut] - pb[edge_cut])

    # parameter interval of F cap Omega^i, parametrised from edges[:, 0]
    portion = np.zeros((2, mesh.n_edges, 2))
    first_neg = pa < 0
    for i, neg in ((0, True), (1, False)):
        whole = ~edge_cut & ((side[E[:, 0]] == 1) == neg)
        portion[i, whole] = (0.0, 1.0)
        starts_here = edge_cut & (first_neg == neg)
        portion[i, starts_here, 0] = 0.0
        portion[i, starts_here, 1] = t[starts_here]
        ends_here = edge_cut & (first_neg != neg)
        portion[i, ends_here, 0] = t[ends_here]
        portion[i, ends_here, 1] = 1.0

    # F_h^i: edges all of whose adjacent cells belong to T_h^i
    ec = mesh.edge_cells
    bnd = ec[:, 1] < 0
    edge_active = np.zeros((2, mesh.n_edges), dtype=bool)
    is_cut_cell = cell_class == CUT
    ghost = np.zeros((2, mesh.n_edges), dtype=bool)
    for i in range(2):
        a0 = active[i][ec[:, 0]]
        a1 = np.where(bnd, True, active[i][np.maximum(ec[:, 1], 0)])
        edge_active[i] = a0 & a1
        touches_cut = is_cut_cell[ec[:, 0]] | np.where(bnd, False, is_cut_cell[np.maximum(ec[:, 1], 0)])
        ghost[i] = edge_active[i] & ~bnd & touches_cut

    cut_cells = np.nonzero(is_cut_cell)[0]
    cut_index = np.full(mesh.n_cells, -1)
    cut_index[cut_cells] = np.arange(len(cut_cells))
    n = len(cut_cells)
    gamma = np.zeros((n, 2, 2))
    normal = np.zeros((n, 2))
    h_min = np.zeros(n)
    polygons = []
    sub_len = np.abs(portion[:, :, 1] - portion[:, :, 0]) * mesh.edge_lengths[None, :]
    grads = mesh.barycentric_gradients()
    for k, T in enumerate(cut_cells):
        tri = C[T]
        s = side[tri]
        # the lone vertex is the one whose side differs from the other two
        lone = next(j for j in range(3) if s[j] != s[(j + 1) % 3] and s[j] != s[(j + 2) % 3])
        j1, j2 = (lone + 1) % 3, (lone + 2) % 3
        a, b, c = V[tri[lone]], V[tri[j1]], V[tri[j2]]
        pab = _zero_crossing(a, b, values[tri[lone]], values[tri[j1]])
        pac = _zero_crossing(a, c, values[tri[lone]], values[tri[j2]])
        ce = mesh.cell_edges[T]
        # cut edges are local edges j2 (a-b) and j1 (a-c); edge j opposite vertex j
        if not (edge_cut[ce[j1]] and edge_cut[ce[j2]] and not edge_cut[ce[lone]]):
            raise RuntimeError(f"inconsistent cut pattern in cell {T}")
        lone_poly = np.array([a, pab, pac])
        other_poly = np.array([pab, b, c, pac])
        if s[lone] == 1:
            polygons.append((lone_poly, other_poly))
        else:
            polygons.append((other_poly, lone_poly))
        gamma[k] = (pab, pac)
        gphi = values[tri] @ grads[T]
        normal[k] = gphi / np.hypot(*gphi)
        h_min[k] = min(sub_len[0, ce[j1]], sub_len[1, ce[j1]], sub_len[0, ce[j2]], sub_len[1, ce[j2]])

    tangent = np.stack([normal[:, 1], -normal[:, 0]], axis=1) if n else np.zeros((0, 2))
    glen = np.hypot(*(gamma[:, 1] - gamma[:, 0]).T) if n else np.zeros(0)
    return CutTopology(
        mesh=mesh,
        phi=values,
        vertex_side=side,
        cell_class=cell_class,
        active=active,
        edge_cut=edge_cut,
        edge_cut_param=t,
        edge_portion=portion,
        edge_active=edge_active,
        ghost=ghost,
        cut_cells=cut_cells,
        cut_index=cut_index,
        gamma=gamma,
        normal=normal,
        tangent=tangent,
        x_gamma=gamma.mean(axis=1),
        gamma_length=glen,
        h_min=h_min,
        polygons=polygons,
    )


def _zero_crossing(p, q, fp, fq):
    t = fp / (fp - fq)
    return p + t * (q - p)
