import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from campanato_t1 import geometry as geo
from campanato_t1 import whitney as wh
from campanato_t1.errors import DomainError


@pytest.fixture(scope="module")
def sq_cov(square):
    return wh.build_whitney(square, "interior", -9)


@pytest.fixture(scope="module")
def notch_pair(notch):
    ext = wh.build_whitney(notch, "exterior", -7)
    inn = wh.build_whitney(notch, "interior", -10)
    return inn, ext


def test_center_cube_rule(square):
    # the concentric cube of side 1/4 is 3/8 from the boundary, inside [diam, 4 diam]
    q = geo.GeneralCube(np.array([0.5, 0.5]), 0.25)
    d = float(square.box_distance(q.lo[None], q.hi[None])[0])
    assert d == pytest.approx(3 / 8)
    assert q.diam <= d <= 4 * q.diam


def test_square_covering_properties(sq_cov):
    rep = sq_cov.verify(samples=500)
    assert rep["violations"] == 0
    assert rep["N10"] < 1000
    d = sq_cov.boundary_distance()
    assert np.all(d >= math.sqrt(2) * sq_cov.sides * (1 - 1e-12))


def test_square_covered_area():
    cov = wh.build_whitney(geo.unit_square(), "interior", -12)
    assert cov.covered_area() >= 1 - 1e-2
    assert 1 - cov.covered_area() <= 16 * math.sqrt(2) * 2.0 ** -12


def test_covering_is_maximal(sq_cov, square):
    # the parent of every accepted cube was not acceptable
    par_lo = np.stack([sq_cov.i // 2, sq_cov.j // 2], -1) * (2 * sq_cov.sides[:, None])
    par_hi = par_lo + 2 * sq_cov.sides[:, None]
    d = square.box_distance(par_lo, par_hi)
    diam = math.sqrt(2) * 2 * sq_cov.sides
    parent_ok = (d >= diam) & (d <= 4 * diam)
    top = sq_cov.level == sq_cov.level.max()
    assert not np.any(parent_ok & ~top)


def test_exterior_covering(notch_pair):
    _, ext = notch_pair
    rep = ext.verify(samples=500)
    assert rep["violations"] == 0
    assert not np.any(ext.domain.contains(ext.centers))


def test_reflection_distance_condition(notch_pair):
    inn, ext = notch_pair
    m = wh.reflection_map(inn, ext)
    assert np.all(m >= 0)
    dq = ext.boundary_distance()
    gap = geo.box_box_distance(ext.lo, ext.hi, inn.lo[m], inn.hi[m])
    assert np.all(gap <= 2 * dq * (1 + 1e-12))


def test_reflection_is_deterministic(notch):
    a = wh.build_whitney(notch, "exterior", -6)
    b = wh.build_whitney(notch, "exterior", -6)
    i1 = wh.build_whitney(notch, "interior", -9)
    i2 = wh.build_whitney(notch, "interior", -9)
    assert np.array_equal(wh.reflection_map(i1, a), wh.reflection_map(i2, b))


def test_strip_reflection_brute_force():
    strip = geo.Polygon([[-2, 0], [2, 0], [2, 1], [-2, 1]])
    inn = wh.build_whitney(strip, "interior", -9)
    ext = wh.build_whitney(strip, "exterior", -6)
    # exterior cubes right below the edge near the middle
    sel = np.nonzero((np.abs(ext.centers[:, 0]) < 0.3) & (ext.centers[:, 1] < 0)
                     & (ext.centers[:, 1] > -0.3))[0]
    assert sel.size > 0
    m = wh.reflection_map(inn, ext)
    dq = ext.boundary_distance()
    for n in sel:
        gap = geo.box_box_distance(ext.lo[n], ext.hi[n], inn.lo, inn.hi)
        best = inn.sides[gap <= 2 * dq[n] * (1 + 1e-12)].max()
        assert inn.sides[m[n]] == best
        assert 0.25 <= inn.sides[m[n]] / ext.sides[n] <= 4


def test_reflected_cube_lookup(notch_pair):
    inn, ext = notch_pair
    q = ext.cube(len(ext) // 2)
    r = wh.reflected_cube(inn, q, ext)
    assert r.side > 0
    with pytest.raises(DomainError):
        wh.reflected_cube(inn, geo.DyadicCube(-7, 10 ** 6, 0), ext)


def test_partition_center_and_support(notch_pair):
    _, ext = notch_pair
    pu = wh.build_partition(ext)
    rng = np.random.default_rng(0)
    picks = rng.integers(0, len(ext), 50)
    for n in picks:
        c = ext.centers[n][None]
        # center of Q lies in 4/5 Q; neighbours may reach it only if they are larger
        p, cc, b = pu.bumps(c)
        assert b[cc == n][0] == 1.0
        # points in the shell outside 5/4 Q
        t = rng.uniform(0, 2 * np.pi, 16)
        shell = ext.centers[n] + 0.63 * ext.sides[n] * np.stack([np.sign(np.cos(t)), np.sin(t)], -1)
        assert np.all(pu.psi(n, shell) == 0)


def test_partition_center_exact_when_isolated(notch_pair):
    _, ext = notch_pair
    pu = wh.build_partition(ext)
    cnt = pu.active_count(ext.centers)
    alone = np.nonzero(cnt == 1)[0]
    assert alone.size > 0
    for n in alone[:20]:
        assert pu.psi(n, ext.centers[n][None])[0] == 1.0


def test_partition_sums_to_one(notch_pair):
    _, ext = notch_pair
    pu = wh.build_partition(ext)
    pts = ext.overlap_samples(10_000, seed=4)
    s = pu.combine(pts, np.ones(len(ext)))
    assert np.max(np.abs(s - 1)) < 1e-12


@given(st.floats(-1.0, 2.0), st.floats(-1.0, 2.0))
def test_partition_sum_property(x, y):
    d = geo.notched_square()
    ext = _cached_ext(d)
    pu = wh.build_partition(ext)
    p = np.array([[x, y]])
    if pu.denominator(p)[0] > 0:
        assert pu.combine(p, np.ones(len(ext)))[0] == pytest.approx(1.0, abs=1e-12)


_EXT = {}


def _cached_ext(d):
    if "ext" not in _EXT:
        _EXT["ext"] = wh.build_whitney(d, "exterior", -6)
    return _EXT["ext"]


def test_partition_gradient_matches_difference(notch_pair):
    _, ext = notch_pair
    pu = wh.build_partition(ext)
    rng = np.random.default_rng(5)
    coeff = rng.normal(size=len(ext))
    pts = ext.overlap_samples(40, seed=2)
    h = 1e-7
    _, g = pu.combine(pts, coeff, with_grad=True)
    for e, k in ((np.array([h, 0]), 0), (np.array([0, h]), 1)):
        fd = (pu.combine(pts + e, coeff) - pu.combine(pts - e, coeff)) / (2 * h)
        assert np.allclose(g[:, k], fd, rtol=1e-4, atol=1e-3)


def test_vertical_lines_flat_edge(square):
    cov = wh.build_whitney(square, "interior", -10)
    w = square.window_at(np.array([0.5, 0.0]), size=0.25)
    for k in range(-10, int(cov.level.max()) + 1):
        assert wh.vertical_line_count(cov, w, k) <= 2
    assert wh.vertical_line_count(cov, w, 5) == 0


def test_vertical_lines_bounded_on_polygons(notch):
    cov = wh.build_whitney(notch, "interior", -10)
    counts = []
    # edge midpoints, notch corners and an outer corner
    for a in ([0.5, 0.0], [0.0, 0.5], [0.4, 0.75], [0.5, 0.5], [0.4, 1.0], [0.4, 0.5], [1.0, 1.0]):
        w = notch.window_at(np.array(a))
        counts.append(max(wh.vertical_line_count(cov, w, k) for k in range(-10, 0)))
    assert max(counts) <= 8
    assert counts[0] <= 2


def test_dict_roundtrip(sq_cov):
    d = sq_cov.to_dict()
    assert len(d["cubes"]) == len(sq_cov)
    assert d["cubes"][0] == [int(sq_cov.level[0]), int(sq_cov.i[0]), int(sq_cov.j[0])]
