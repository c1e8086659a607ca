import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from campanato_t1 import czkernel as cz
from campanato_t1 import geometry as geo
from campanato_t1.errors import ConfigError, DomainError

from conftest import polar_tchi_square

KERNELS = [cz.beurling_re(), cz.beurling_im(), cz.riesz_second(1, 1), cz.riesz_second(1, 2)]


def polar_tchi_disk_exterior(k, y):
    """int over the unit disk of K(y - x) dx for |y| > 1 by rays from y."""
    y = np.asarray(y, float)
    r0 = np.hypot(*y)
    half = math.asin(1 / r0)
    base = math.atan2(-y[1], -y[0])

    def f(th):
        u = np.array([math.cos(th), math.sin(th)])
        b = float(y @ u)
        disc = math.sqrt(max(b * b - r0 * r0 + 1, 0.0))
        r1, r2 = -b - disc, -b + disc
        return float(k.omega(-u)) * math.log(r2 / r1)

    return integrate.quad(f, base - half, base + half, epsabs=1e-14, epsrel=1e-13, limit=400)[0]


def test_beurling_value():
    assert cz.beurling_re()(np.array([1.0, 0.0])) == pytest.approx(-1 / math.pi)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_homogeneity_and_evenness(a, b):
    x = np.array([a, b])
    if np.hypot(a, b) < 1e-3:
        return
    for k in KERNELS:
        v = k(x)
        assert k(2 * x) == pytest.approx(v / 4, rel=1e-12, abs=1e-300)
        assert k(-x) == pytest.approx(v, rel=1e-12, abs=1e-300)


def test_zero_spherical_mean():
    for k in KERNELS:
        assert abs(k.spherical_mean()) < 1e-12


def test_kernel_at_origin_is_undefined():
    with pytest.raises(DomainError):
        cz.kernel_eval(cz.beurling_re(), np.zeros(2))


def test_sampled_kernel_projection_and_validation():
    th = 2 * np.pi * np.arange(512) / 512
    k = cz.sampled_kernel(np.cos(2 * th) + 0.3, name="c2")
    assert k.projection == pytest.approx(0.3)
    assert k.even
    assert abs(k.spherical_mean()) < 1e-10
    ref = cz.riesz_second(1, 1)
    u = np.array([[0.6, 0.8]])
    assert k.omega(u)[0] == pytest.approx(2 * ref.omega(u)[0], abs=1e-8)
    with pytest.raises(ConfigError):
        cz.sampled_kernel(np.ones(16))
    with pytest.raises(ConfigError):
        cz.Kernel("bad", lambda u: u[..., 0] ** 2)


def test_kernel_dict_roundtrip():
    for k in KERNELS:
        k2 = cz.kernel_from_dict(k.to_dict())
        assert k2.name == k.name
    with pytest.raises(ConfigError):
        cz.kernel_from_dict({"name": "nope"})


def test_ball_center_vanishes(ball, bre):
    assert abs(cz.pv_tchi(ball, bre, np.zeros(2))) < 1e-10


def test_square_center_vanishes(square, bre):
    assert abs(cz.pv_tchi(square, bre, np.array([0.5, 0.5]))) < 1e-10


@pytest.mark.parametrize("y", [(0.3, 0.4), (0.1, 0.8), (0.5, 0.02), (0.9, 0.9)])
@pytest.mark.parametrize("k", KERNELS, ids=lambda k: k.name)
def test_square_against_polar_oracle(square, k, y):
    ref = polar_tchi_square(k, y)
    assert cz.pv_tchi(square, k, np.array(y)) == pytest.approx(ref, abs=2 * cz.DEFAULT_TOL)


def test_quadtree_agrees_with_boundary(square, bre):
    y = np.array([0.3, 0.4])
    a = cz.pv_tchi(square, bre, y, tol=1e-5, method="quadtree")
    assert a == pytest.approx(polar_tchi_square(bre, y), abs=1e-4)


def test_exterior_disk(ball, bre):
    v = cz.pv_tchi_exterior(ball, bre, np.array([2.0, 0.0]))
    assert v == pytest.approx(polar_tchi_disk_exterior(bre, (2.0, 0.0)), abs=2 * cz.DEFAULT_TOL)
    assert cz.pv_tchi_exterior(ball, bre, np.array([-2.0, 0.0])) == pytest.approx(v, abs=1e-12)
    # area times kernel is the leading term, so |value| |y|^2 levels off
    r = np.array([4.0, 8.0, 16.0])
    vals = np.abs(cz.pv_tchi_exterior(ball, bre, np.stack([r, 0 * r], -1)))
    c = vals * r ** 2
    assert np.all(c <= 1.05 * c[-1]) and c[-1] == pytest.approx(1.0, rel=0.01)


def test_interior_exterior_guards(square, bre):
    with pytest.raises(DomainError):
        cz.pv_tchi(square, bre, np.array([1.5, 0.5]))
    with pytest.raises(DomainError):
        cz.pv_tchi_exterior(square, bre, np.array([0.5, 0.5]))
    with pytest.raises(DomainError):
        cz.pv_tchi(square, bre, np.array([0.5, 1e-9]))


def test_gradient_ball_vanishes(ball):
    for k in KERNELS:
        g = cz.grad_tchi_boundary(ball, k, np.array([0.3, 0.1]))
        assert np.all(np.abs(g) < 1e-9)


def test_gradient_square_center(square, bre):
    assert np.all(np.abs(cz.grad_tchi_boundary(square, bre, np.array([0.5, 0.5]))) < 1e-10)


def test_gradient_against_finite_differences(square, bre):
    y = np.array([0.25, 0.5])
    h = 1e-3
    fd = np.array([(cz.pv_tchi(square, bre, y + h * e) - cz.pv_tchi(square, bre, y - h * e)) / (2 * h)
                   for e in np.eye(2)])
    g = cz.grad_tchi_boundary(square, bre, y)
    assert np.linalg.norm(g - fd) <= 1e-2 * np.linalg.norm(fd)


def test_gradient_refinement_is_consistent(gdisk, bre):
    y = np.array([[0.05, 0.1], [-0.2, 0.5]])
    a = cz.grad_tchi_boundary(gdisk, bre, y)
    b = cz.grad_tchi_boundary(gdisk, bre, y, refinement=1)
    assert np.allclose(a, b, rtol=1e-8, atol=1e-10)


def test_cancellation_examples():
    rng = np.random.default_rng(3)
    for ball, k in [(geo.Ball(), cz.beurling_re()), (geo.Ball(), cz.riesz_second(1, 2)),
                    (geo.Ball((0.3, 0.3), 0.2), cz.beurling_re())]:
        r = 0.9 * ball.radius * np.sqrt(rng.uniform(0, 1, 50))
        th = rng.uniform(0, 2 * np.pi, 50)
        probes = ball.center + np.stack([r * np.cos(th), r * np.sin(th)], -1)
        rep = cz.cancellation_report(ball, k, probes)
        assert rep["max_abs"] <= 1e-4
    with pytest.raises(ConfigError):
        cz.cancellation_report(geo.unit_square(), cz.beurling_re(), np.zeros((1, 2)))


def test_threads_do_not_change_values(notch, bre):
    y = np.random.default_rng(0).uniform(0.05, 0.3, (700, 2))
    a = cz.pv_tchi(notch, bre, y)
    b = cz.pv_tchi(notch, bre, y, threads=3)
    assert np.array_equal(a, b)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_odd_symmetry_of_square(x, y):
    # BeurlingIm is odd under x1 -> 1 - x1 reflection of the square
    k = cz.beurling_im()
    d = geo.unit_square()
    a = cz.pv_tchi(d, k, np.array([x, y]))
    b = cz.pv_tchi(d, k, np.array([1 - x, y]))
    assert a == pytest.approx(-b, abs=1e-9)
