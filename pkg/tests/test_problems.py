import numpy as np
import pytest

from cutflux.problems import EXAMPLES, interface_defects, make_example

H = 1e-5


def _sample(ex, rng, n=100):
    kind, a, b = ex.domain
    pts = []
    while len(pts) < n:
        x, y = rng.uniform(a, b, 2)
        if kind == "lshape":
            m = 0.5 * (a + b)
            # removed quadrant, reentrant corner and the branch line of the angle
            if (x > m and y < m) or np.hypot(x, y) < 0.2 or (abs(x) < 1e-3 and y < 0):
                continue
        if np.hypot(x, y) < 0.05:
            continue
        pts.append((x, y))
    return np.array(pts)


@pytest.mark.parametrize("name", EXAMPLES)
@pytest.mark.parametrize("side", [1, 2])
def test_source_matches_finite_difference_laplacian(name, side):
    ex = make_example(name)
    k = ex.k1 if side == 1 else ex.k2
    rng = np.random.default_rng(10 * EXAMPLES.index(name) + side)
    P = _sample(ex, rng)
    x, y = P[:, 0], P[:, 1]
    u = lambda a, b: ex.u(a, b, np.full(len(a), side))
    lap = (u(x + H, y) + u(x - H, y) + u(x, y + H) + u(x, y - H) - 4 * u(x, y)) / H**2
    fd = -k * lap
    f = ex.f(x, y, np.full(len(x), side))
    scale = max(np.abs(f).max(), 1.0)
    assert np.abs(fd - f).max() <= 1e-4 * scale


@pytest.mark.parametrize("name", EXAMPLES)
@pytest.mark.parametrize("side", [1, 2])
def test_gradient_matches_finite_differences(name, side):
    ex = make_example(name)
    rng = np.random.default_rng(7)
    P = _sample(ex, rng, 50)
    x, y = P[:, 0], P[:, 1]
    s = np.full(len(x), side)
    h = 1e-6
    gx = (ex.u(x + h, y, s) - ex.u(x - h, y, s)) / (2 * h)
    gy = (ex.u(x, y + h, s) - ex.u(x, y - h, s)) / (2 * h)
    g = ex.grad(x, y, s)
    scale = max(np.abs(g).max(), 1.0)
    assert np.abs(np.stack([gx, gy], -1) - g).max() <= 1e-6 * scale


@pytest.mark.parametrize("name", EXAMPLES)
def test_interface_conditions(name):
    ju, jf = interface_defects(make_example(name), 100)
    assert ju <= 1e-8
    assert jf <= 1e-8


@pytest.mark.parametrize("mu", [1, 10, 10000])
def test_ellipse_continuity_for_all_contrasts(mu):
    ju, jf = interface_defects(make_example("ellipse", mu))
    assert ju <= 1e-8 and jf <= 1e-8


def test_interface_points_lie_on_interface():
    for name in EXAMPLES:
        ex = make_example(name)
        P = ex.interface_points(100)
        assert np.abs(ex.phi(P[:, 0], P[:, 1])).max() < 1e-12


def test_manufactured_g_has_nonzero_flux_jump():
    ex = make_example("manufactured-g")
    P = ex.interface_points(100)
    assert np.abs(ex.g(P[:, 0], P[:, 1])).min() > 0.1
    assert ex.k1 != ex.k2


def test_lshape_inside_is_harmonic():
    ex = make_example("lshape")
    x = np.array([0.5, -1.0, -0.3])
    y = np.array([1.0, 0.2, -1.5])
    assert np.all(ex.f(x, y, np.ones(3, dtype=int)) == 0)


def test_unknown_example():
    with pytest.raises(ValueError):
        make_example("circle")
