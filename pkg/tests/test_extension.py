import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from campanato_t1 import extension as ex
from campanato_t1 import geometry as geo
from campanato_t1 import moduli
from campanato_t1 import t1
from campanato_t1.errors import PoisonedValueError


@pytest.fixture(scope="module")
def notch_ext(notch):
    return ex.extend(geo.coordinate_field(0), notch, min_level=-8)


def log_mean_unit_square():
    """Mean of ln(1/|u|) over [-1/2, 1/2]^2 by polar integration over one octant."""
    # on 0 < th < pi/4 the ray leaves the square at r = 1/(2 cos th)
    def inner(th):
        R = 0.5 / math.cos(th)
        return R * R * (0.5 - math.log(R)) / 2   # int_0^R -ln(r) r dr
    return 8 * integrate.quad(inner, 0, math.pi / 4, epsabs=1e-14)[0]


def test_cube_mean_examples():
    c = geo.constant_field(2.5)
    assert ex.cube_mean(c, geo.DyadicCube(-3, 1, 2)) == pytest.approx(2.5, abs=1e-14)
    assert ex.cube_mean(geo.coordinate_field(0), geo.DyadicCube(0, 0, 0)) == pytest.approx(0.5, abs=1e-14)


def test_cube_mean_of_phi_grows_like_log():
    phi = t1.phi_tau(moduli.constant(), (0.0, 0.0))
    c0 = log_mean_unit_square()
    for ell in (2.0 ** -2, 2.0 ** -6, 2.0 ** -10):
        q = geo.GeneralCube(np.zeros(2), ell)
        assert ex.cube_mean(phi, q) == pytest.approx(math.log(1 / ell) + c0, abs=2e-3)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(1e-3, 1.0))
def test_cube_mean_of_affine_field_is_center_value(a, b, s):
    f = geo.ScalarField(lambda p: 3 * p[..., 0] - p[..., 1] + 1)
    q = geo.GeneralCube(np.array([a, b]), s)
    assert ex.cube_mean(f, q) == pytest.approx(3 * a - b + 1, abs=1e-10)


def test_cube_means_reject_nan():
    f = geo.ScalarField(lambda p: np.where(p[..., 0] > 0.5, np.nan, 0.0))
    with pytest.raises(PoisonedValueError):
        ex.cube_mean(f, geo.DyadicCube(0, 0, 0))


def test_extension_agrees_on_domain(notch_ext, notch):
    rng = np.random.default_rng(0)
    p = rng.uniform(0, 1, (5000, 2))
    ins = notch.contains(p)
    assert np.array_equal(notch_ext(p[ins]), p[ins, 0])


def test_extension_of_one(notch):
    e = ex.extend(geo.constant_field(1.0), notch, min_level=-8)
    rng = np.random.default_rng(1)
    p = rng.uniform(-0.3, 1.3, (20000, 2))
    v = e(p)
    ins = notch.contains(p)
    assert np.all(v[ins] == 1.0)
    # outside, points whose bumps all come from cubes below the cutoff see value 1
    pp, cc, _ = e.partition.bumps(p[~ins])
    bad = np.zeros(int((~ins).sum()), dtype=bool)
    bad[pp[~e.active[cc]]] = True
    covered = e.partition.denominator(p[~ins]) > 0
    good = covered & ~bad
    assert good.sum() > 1000
    assert np.max(np.abs(v[~ins][good] - 1.0)) < 1e-12


def test_compact_support(notch_ext):
    lo, hi = notch_ext.support
    far = np.array([[lo[0] - 0.1, 0.5], [0.5, hi[1] + 0.1], [5.0, 5.0]])
    assert np.all(notch_ext(far) == 0.0)
    assert notch_ext.bump_count(far)[-1] == 0
    assert np.all(hi - lo < 2.0)


def test_extension_gradient(notch_ext):
    pts = notch_ext.exterior.overlap_samples(30, seed=3)
    pts = pts[~notch_ext.domain.contains(pts)]
    g = notch_ext.exterior_gradient(pts)
    h = 1e-7
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (notch_ext(pts + e) - notch_ext(pts - e)) / (2 * h)
        assert np.allclose(g[:, k], fd, rtol=1e-4, atol=1e-4)


def test_extension_near_boundary_tracks_f(notch_ext, notch):
    # outside the uncovered collar the reflected cubes lie within a few distances
    d = 0.03
    p = np.array([[0.2, -d], [0.7, -d], [1 + d, 0.3]])
    assert notch_ext.exterior.collar_width() < d
    assert np.allclose(notch_ext(p), p[:, 0], atol=4 * d)
    inside_collar = np.array([[0.2, -0.002]])
    assert notch_ext(inside_collar)[0] == 0.0


def test_means_are_cached(notch):
    calls = []

    def fn(p):
        calls.append(p.shape[0])
        return p[..., 1]

    e = ex.extend(geo.ScalarField(fn), notch, min_level=-6)
    p = np.array([[0.5, -0.1], [0.3, -0.12]])
    first = e(p)
    n = len(calls)
    assert n > 0 and np.all(first > 0)
    assert np.array_equal(e(p), first)
    assert len(calls) == n


def test_oscillation_transfer(notch_ext):
    cubes = [(np.array([0.2, 0.0]), 2.0 ** -5), (np.array([1.0, 0.3]), 2.0 ** -6)]
    res = ex.oscillation_transfer(notch_ext, cubes)
    assert res["c"] in (2, 4, 8)
    assert np.isfinite(res["C"])
