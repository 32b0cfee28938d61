"""Exact solutions of the benchmark interface problems.

Each :class:`ExactSolution` bundles the level set, diffusivities, the
subdomain-wise solution and gradient (smooth extensions of each branch,
evaluated anywhere), the source ``f = -div(k_i grad u_i)`` and the flux
jump ``g = [K grad u . n]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .assembly import ProblemData

EXAMPLES = ("ellipse", "lshape", "petal", "linear-patch", "manufactured-g")


@dataclass
class ExactSolution:
    name: str
    k1: float
    k2: float
    phi: Callable
    u: Callable  # (x, y, side) -> values
    grad: Callable  # (x, y, side) -> (n, 2)
    f: Callable  # (x, y, side) -> values
    domain: tuple  # (kind, a, b) for build_structured_mesh
    g: Optional[Callable] = None
    interface_points: Optional[Callable] = None  # n -> (n, 2) points on Gamma

    def problem_data(self, gamma: float = 10.0, gamma_g: float = 0.1) -> ProblemData:
        return ProblemData(self.k1, self.k2, f=self.f, g=self.g, boundary=self.u, gamma=gamma, gamma_g=gamma_g)

    def normal(self, x, y, h: float = 1e-6) -> np.ndarray:
        """Unit normal ``grad phi / |grad phi|`` by central differences."""
        gx = (self.phi(x + h, y) - self.phi(x - h, y)) / (2 * h)
        gy = (self.phi(x, y + h) - self.phi(x, y - h)) / (2 * h)
        n = np.stack([gx, gy], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


def _by_side(side, v1, v2):
    side = np.asarray(side)
    return np.where(side == 1, v1, v2)


def _by_side_vec(side, v1, v2):
    side = np.asarray(side)
    return np.where((side == 1)[..., None], v1, v2)


# -----------------------------------------------------------------------------
# ellipse family
# -----------------------------------------------------------------------------
ELLIPSE_A = np.pi / 6.18
ELLIPSE_B = 1.5 * ELLIPSE_A


def _rho(x, y, a=ELLIPSE_A, b=ELLIPSE_B):
    return np.sqrt(x**2 / a**2 + y**2 / b**2)


def _ellipse_points(n, a=ELLIPSE_A, b=ELLIPSE_B):
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False) + 0.1234
    return np.stack([a * np.cos(t), b * np.sin(t)], axis=1)


def ellipse(mu: float, p: int = 5) -> ExactSolution:
    """``u_i = rho^p / k_i`` plus a constant making ``u`` continuous; ``k1 = 1, k2 = mu``."""
    a, b = ELLIPSE_A, ELLIPSE_B
    k1, k2 = 1.0, float(mu)

    def u(x, y, side):
        r = _rho(x, y) ** p
        return _by_side(side, r / k1, r / k2 + 1 / k1 - 1 / k2)

    def grad(x, y, side):
        r = _rho(x, y)
        gp = (p * r ** (p - 2))[..., None] * np.stack([x / a**2, y / b**2], axis=-1)
        k = _by_side(side, k1, k2)
        return gp / np.asarray(k)[..., None]

    def f(x, y, side):
        r = _rho(x, y)
        lap = p * r ** (p - 2) * (1 / a**2 + 1 / b**2) + p * (p - 2) * r ** (p - 4) * (x**2 / a**4 + y**2 / b**4)
        return -lap + 0.0 * np.asarray(side)

    return ExactSolution("ellipse", k1, k2, lambda x, y: _rho(x, y) - 1.0, u, grad, f,
                         ("square", -1.0, 1.0), None, _ellipse_points)


def linear_patch() -> ExactSolution:
    """``u = x + y`` on both sides, ``k1 = k2 = 1``, ellipse interface."""

    def u(x, y, side):
        return x + y + 0.0 * np.asarray(side)

    def grad(x, y, side):
        return np.stack([np.ones_like(x + 0.0 * np.asarray(side)), np.ones_like(y + 0.0 * np.asarray(side))], axis=-1)

    def f(x, y, side):
        return np.zeros_like(x + 0.0 * np.asarray(side))

    return ExactSolution("linear-patch", 1.0, 1.0, lambda x, y: _rho(x, y) - 1.0, u, grad, f,
                         ("square", -1.0, 1.0), None, _ellipse_points)


def manufactured_g(k1: float = 1.0, k2: float = 3.0) -> ExactSolution:
    """``u_1 = u_2 = rho^2`` with unequal diffusivities: ``[u] = 0`` but ``g != 0``.

    ``g = (k1 - k2) grad(rho^2) . n`` with ``n = grad rho / |grad rho|``
    extended off the ellipse.
    """
    a, b = ELLIPSE_A, ELLIPSE_B

    def u(x, y, side):
        return _rho(x, y) ** 2 + 0.0 * np.asarray(side)

    def grad(x, y, side):
        g = np.stack([2 * x / a**2, 2 * y / b**2], axis=-1)
        return g + 0.0 * np.asarray(side)[..., None]

    def f(x, y, side):
        k = _by_side(side, k1, k2)
        return -k * (2 / a**2 + 2 / b**2) + 0.0 * x

    def g(x, y):
        r = _rho(x, y)
        grad_r = np.hypot(x / a**2, y / b**2) / r
        return (k1 - k2) * 2.0 * r * grad_r

    return ExactSolution("manufactured-g", k1, k2, lambda x, y: _rho(x, y) - 1.0, u, grad, f,
                         ("square", -1.0, 1.0), g, _ellipse_points)


# -----------------------------------------------------------------------------
# L-shaped domain
# -----------------------------------------------------------------------------
LSHAPE_R0 = 2.0 * np.sqrt(2.0)


def _polar(x, y):
    r = np.hypot(x, y)
    t = np.mod(np.arctan2(y, x), 2 * np.pi)
    return r, t


def lshape(mu: float = 5.0) -> ExactSolution:
    """Corner singularity ``rho^{2/3} sin(2 theta / 3)`` inside the circle ``rho = rho0``."""
    r0 = LSHAPE_R0
    k1, k2 = 1.0, float(mu)
    A = r0 ** (2 / 3)
    B = 2.0 / (3.0 * mu) * r0 ** (-1 / 3)

    def u(x, y, side):
        r, t = _polar(x, y)
        s = np.sin(2 * t / 3)
        return _by_side(side, r ** (2 / 3) * s, s * (A + B * (r - r0)))

    def grad(x, y, side):
        r, t = _polar(x, y)
        s, c = np.sin(2 * t / 3), np.cos(2 * t / 3)
        er = np.stack([np.cos(t), np.sin(t)], axis=-1)
        et = np.stack([-np.sin(t), np.cos(t)], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            g1 = (2 / 3) * r[..., None] ** (-1 / 3) * (s[..., None] * er + c[..., None] * et)
        R = A + B * (r - r0)
        g2 = (s * B)[..., None] * er + ((2 / 3) * c * R / r)[..., None] * et
        return _by_side_vec(side, g1, g2)

    def f(x, y, side):
        r, t = _polar(x, y)
        s = np.sin(2 * t / 3)
        f2 = -mu * s * (B / r - (4 / 9) * (A + B * (r - r0)) / r**2)
        return _by_side(side, np.zeros_like(f2), f2)

    def points(n):
        t = np.linspace(0.0, 1.5 * np.pi, n + 2)[1:-1]
        return np.stack([r0 * np.cos(t), r0 * np.sin(t)], axis=1)

    return ExactSolution("lshape", k1, k2, lambda x, y: np.hypot(x, y) - r0, u, grad, f,
                         ("lshape", -5.0, 5.0), None, points)


# -----------------------------------------------------------------------------
# petal interface
# -----------------------------------------------------------------------------
def _petal_phi(x, y):
    t = np.arctan2(y, x)
    return (x**2 + y**2) ** 2 * (1 + 0.5 * np.sin(12 * t)) - 0.3


def petal(mu: float = 100.0) -> ExactSolution:
    """``u_1 = phi`` and ``u_2 = phi / mu`` with ``k1 = 1``, ``k2 = mu``."""
    k1, k2 = 1.0, float(mu)

    def u(x, y, side):
        p = _petal_phi(x, y)
        return _by_side(side, p / k1, p / k2)

    def grad(x, y, side):
        t = np.arctan2(y, x)
        r2 = x**2 + y**2
        gfac = 1 + 0.5 * np.sin(12 * t)
        gx = r2 * (4 * gfac * x - 6 * np.cos(12 * t) * y)
        gy = r2 * (4 * gfac * y + 6 * np.cos(12 * t) * x)
        g = np.stack([gx, gy], axis=-1)
        k = _by_side(side, k1, k2)
        return g / np.asarray(k)[..., None]

    def f(x, y, side):
        t = np.arctan2(y, x)
        return -(x**2 + y**2) * (16 - 64 * np.sin(12 * t)) + 0.0 * np.asarray(side)

    def points(n):
        t = np.linspace(0.0, 2 * np.pi, n, endpoint=False) + 0.0321
        r = (0.3 / (1 + 0.5 * np.sin(12 * t))) ** 0.25
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)

    return ExactSolution("petal", k1, k2, _petal_phi, u, grad, f, ("square", -1.0, 1.0), None, points)


def make_example(name: str, mu: Optional[float] = None) -> ExactSolution:
    """Build a benchmark by name; ``mu`` is the contrast ``k2 / k1`` where it applies."""
    if name == "ellipse":
        return ellipse(1.0 if mu is None else mu)
    if name == "lshape":
        return lshape(5.0 if mu is None else mu)
    if name == "petal":
        return petal(100.0 if mu is None else mu)
    if name == "linear-patch":
        return linear_patch()
    if name == "manufactured-g":
        return manufactured_g()
    raise ValueError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")


def interface_defects(ex: ExactSolution, n: int = 100) -> tuple[float, float]:
    """``max |[u]|`` and ``max |[K grad u . n] - g|`` at ``n`` interface points."""
    P = ex.interface_points(n)
    x, y = P[:, 0], P[:, 1]
    ju = np.abs(ex.u(x, y, 1) - ex.u(x, y, 2)).max()
    nrm = ex.normal(x, y)
    flux = ex.k1 * np.einsum("nd,nd->n", ex.grad(x, y, 1), nrm) - ex.k2 * np.einsum("nd,nd->n", ex.grad(x, y, 2), nrm)
    g = ex.g(x, y) if ex.g is not None else 0.0
    return float(ju), float(np.abs(flux - g).max())
