"""Conforming triangular meshes, newest-vertex bisection and Dörfler marking.

Cells are stored counter-clockwise with the *newest vertex* in local
position 0, so the refinement edge of every cell is the edge opposite
local vertex 0.  Local edge ``j`` of a cell is always the edge opposite
local vertex ``j``.
"""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np


class Mesh:
    """Immutable 2D conforming triangulation with edge connectivity.

    Parameters
    ----------
    vertices : (nv, 2) array_like
        Vertex coordinates.
    cells : (nc, 3) array_like of int
        Vertex indices of each triangle.  Cells are re-oriented
        counter-clockwise if needed (this swaps local vertices 1 and 2 and
        keeps the refinement edge).
    parent : (nc,) array_like of int, optional
        Index of the cell of the previous mesh each cell descends from.

    Notes
    -----
    Edge normals ``edge_normals[F]`` point from ``edge_cells[F, 0]`` (the
    lower-indexed adjacent cell, ``T_F^-``) to ``edge_cells[F, 1]``
    (``T_F^+``); on boundary edges ``edge_cells[F, 1] == -1`` and the normal
    points outward.
    """

    def __init__(self, vertices, cells, parent=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
        p0, p1, p2 = (vertices[cells[:, j]] for j in range(3))
        signed = 0.5 * _cross(p1 - p0, p2 - p0)
        flip = signed < 0
        if flip.any():
            cells[flip] = cells[flip][:, [0, 2, 1]]
            signed = np.abs(signed)
        if np.any(signed <= 0):
            raise ValueError("mesh contains degenerate cells")

        self.vertices = vertices
        self.cells = cells
        self.parent = None if parent is None else np.asarray(parent, dtype=np.int64)
        self.cell_areas = signed
        self._build_edges()
        self._build_geometry()
        for arr in vars(self).values():
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False

    # -- construction helpers -------------------------------------------------
    def _build_edges(self):
        nc = len(self.cells)
        local = np.stack(
            [self.cells[:, [(j + 1) % 3, (j + 2) % 3]] for j in range(3)], axis=1
        )  # (nc, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(nc, 3)
        ne = len(edges)

        owner = np.repeat(np.arange(nc), 3)
        flat = inverse.ravel()
        order = np.lexsort((owner, flat))
        counts = np.bincount(flat, minlength=ne)
        if counts.max() > 2:
            raise ValueError("non-manifold mesh: an edge has more than two cells")
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_cells = np.full((ne, 2), -1, dtype=np.int64)
        edge_cells[:, 0] = owner[order][start]
        two = counts == 2
        edge_cells[two, 1] = owner[order][start[two] + 1]

        self.edges = edges
        self.cell_edges = inverse
        self.edge_cells = edge_cells

    def _build_geometry(self):
        V, C, E = self.vertices, self.cells, self.edges
        d = V[E[:, 1]] - V[E[:, 0]]
        self.edge_lengths = np.hypot(d[:, 0], d[:, 1])
        normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.edge_lengths[:, None]
        # orient from T^- towards T^+ (outward on the boundary): the vertex of
        # T^- opposite the edge must lie behind the normal
        tm = self.edge_cells[:, 0]
        opp = np.sum(C[tm], axis=1) - E[:, 0] - E[:, 1]
        behind = np.einsum("ij,ij->i", V[opp] - V[E[:, 0]], normal)
        normal[behind > 0] *= -1
        self.edge_normals = normal

        # s(T, F_j) = n_T . n_F
        sign = np.where(self.edge_cells[self.cell_edges, 0] == np.arange(len(C))[:, None], 1.0, -1.0)
        self.cell_edge_signs = sign
        self.cell_diameters = self.edge_lengths[self.cell_edges].max(axis=1)
        self.boundary_edges = self.edge_cells[:, 1] < 0
        bmask = np.zeros(len(V), dtype=bool)
        bmask[E[self.boundary_edges].ravel()] = True
        self.boundary_vertices = bmask

    # -- queries ---------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def barycentric_gradients(self) -> np.ndarray:
        """Constant gradients of the three P1 hat functions, shape (nc, 3, 2)."""
        V, C = self.vertices, self.cells
        grads = np.empty((len(C), 3, 2))
        for j in range(3):
            e = V[C[:, (j + 2) % 3]] - V[C[:, (j + 1) % 3]]
            # rotate the opposite edge inward and scale by 1/(2|T|)
            grads[:, j, 0] = -e[:, 1]
            grads[:, j, 1] = e[:, 0]
        return grads / (2.0 * self.cell_areas[:, None, None])

    def barycentric(self, cell: int, points) -> np.ndarray:
        """Barycentric coordinates of ``points`` with respect to ``cell``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        A = self.vertices[self.cells[cell]]
        M = np.array([[A[0, 0], A[1, 0], A[2, 0]], [A[0, 1], A[1, 1], A[2, 1]], [1.0, 1.0, 1.0]])
        rhs = np.vstack([pts.T, np.ones(len(pts))])
        return np.linalg.solve(M, rhs).T

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


# -----------------------------------------------------------------------------
# structured meshes
# -----------------------------------------------------------------------------
def build_structured_mesh(domain: str, a: float, b: float, n: int) -> Mesh:
    """Structured right-triangle mesh of ``[a, b]^2`` or of an L-shape.

    Parameters
    ----------
    domain : {"square", "lshape"}
        ``"lshape"`` removes the quadrant ``[m, b] x [a, m]`` with ``m`` the
        midpoint of ``[a, b]``.
    a, b : float
        Bounds of the enclosing square.
    n : int
        Subdivisions per axis of the enclosing square (even for the L-shape).
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    if domain not in ("square", "lshape"):
        raise ValueError(f"unknown domain {domain!r}")
    if domain == "lshape" and n % 2:
        raise ValueError("the L-shape needs an even number of subdivisions")

    xs = np.linspace(a, b, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    keep_sq = np.ones((n, n), dtype=bool)
    if domain == "lshape":
        keep_sq[n // 2 :, : n // 2] = False

    I, J = np.nonzero(keep_sq)
    p00, p10 = vid[I, J], vid[I + 1, J]
    p11, p01 = vid[I + 1, J + 1], vid[I, J + 1]
    # right angle at local vertex 0 so the hypotenuse is the refinement edge
    t1 = np.stack([p10, p11, p00], axis=1)
    t2 = np.stack([p01, p00, p11], axis=1)
    cells = np.stack([t1, t2], axis=1).reshape(-1, 3)

    used = np.unique(cells)
    remap = np.full((n + 1) ** 2, -1)
    remap[used] = np.arange(len(used))
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)[used]
    return Mesh(verts, remap[cells])


# -----------------------------------------------------------------------------
# refinement
# -----------------------------------------------------------------------------
def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Newest-vertex bisection of the marked cells with conforming closure.

    Every marked cell is bisected at least once; neighbours are bisected as
    needed to keep the mesh free of hanging vertices.  ``result.parent`` maps
    each new cell to the cell of ``mesh`` it lies in.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked, dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_cells:
        raise IndexError("marked cell index out of range")

    ce = mesh.cell_edges
    ref_edge = ce[:, 0]
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[ref_edge[marked]] = True
    while True:
        need = edge_marked[ce].any(axis=1) & ~edge_marked[ref_edge]
        if not need.any():
            break
        edge_marked[ref_edge[need]] = True

    me = np.nonzero(edge_marked)[0]
    nv = mesh.n_vertices
    mid = np.full(mesh.n_edges, -1, dtype=np.int64)
    mid[me] = nv + np.arange(len(me))
    E = mesh.edges
    new_vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[E[me, 0]] + mesh.vertices[E[me, 1]])])

    C = mesh.cells
    split = edge_marked[ref_edge]
    keep_idx = np.nonzero(~split)[0]
    out_cells = [C[keep_idx]]
    out_parent = [keep_idx]

    s = np.nonzero(split)[0]
    a, b, c = C[s, 0], C[s, 1], C[s, 2]
    m = mid[ref_edge[s]]
    # children (m, a, b) with refinement edge (a, b) = old local edge 2,
    # and (m, c, a) with refinement edge (c, a) = old local edge 1
    for child, edge_local in (((m, a, b), 2), ((m, c, a), 1)):
        cm, ca, cb = child
        e = ce[s, edge_local]
        again = edge_marked[e]
        once = ~again
        out_cells.append(np.stack([cm[once], ca[once], cb[once]], axis=1))
        out_parent.append(s[once])
        m2 = mid[e[again]]
        g0 = np.stack([m2, cm[again], ca[again]], axis=1)
        g1 = np.stack([m2, cb[again], cm[again]], axis=1)
        out_cells += [g0, g1]
        out_parent += [s[again], s[again]]

    cells = np.vstack(out_cells)
    parent = np.concatenate(out_parent)
    order = np.argsort(parent, kind="stable")
    return Mesh(new_vertices, cells[order], parent=parent[order])


def refine_uniform(mesh: Mesh, times: int = 1) -> Mesh:
    """Bisect every cell twice per step, halving all cell diameters."""
    for _ in range(2 * times):
        mesh = refine(mesh, np.arange(mesh.n_cells))
    return mesh


# -----------------------------------------------------------------------------
# marking
# -----------------------------------------------------------------------------
def dorfler_mark(indicators, theta: float) -> np.ndarray:
    """Smallest set of cells whose squared indicators reach ``theta`` of the total.

    Ties are broken by ascending cell index.  Returns a sorted index array.
    """
    eta = np.asarray(indicators, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if not np.all(np.isfinite(eta)) or np.any(eta < 0):
        raise ValueError("indicators must be finite and nonnegative")
    sq = eta**2
    total = sq.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-sq, kind="stable")
    csum = np.cumsum(sq[order])
    target = theta * total
    # guard against the last partial sum rounding just below the total
    k = int(np.searchsorted(csum, target * (1.0 - 1e-14), side="left")) + 1
    return np.sort(order[: min(k, len(order))])


def mark_fraction_near(mesh: Mesh, marked: np.ndarray, near: np.ndarray) -> float:
    """Fraction of ``marked`` cells flagged in the boolean mask ``near``."""
    marked = np.asarray(marked)
    if marked.size == 0:
        return 0.0
    return float(np.mean(near[marked]))


def vertex_cell_incidence(mesh: Mesh, mask: Optional[np.ndarray] = None):
    """Sparse (nv, nc) vertex-to-cell incidence, optionally restricted to ``mask``."""
    from scipy import sparse

    cells = np.arange(mesh.n_cells)
    if mask is not None:
        cells = cells[mask]
    rows = mesh.cells[cells].ravel()
    cols = np.repeat(cells, 3)
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(mesh.n_vertices, mesh.n_cells))
