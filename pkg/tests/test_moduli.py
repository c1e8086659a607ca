import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from campanato_t1 import moduli
from campanato_t1.errors import DomainError

xs = st.floats(min_value=2.0 ** -30, max_value=1.0)
alphas = st.floats(min_value=0.05, max_value=0.95)


def test_eval_examples():
    assert moduli.constant()(0.5) == 1.0
    assert moduli.power(0.5)(0.25) == pytest.approx(0.5, abs=1e-15)
    lp = moduli.log_power(0.5)
    assert lp(math.exp(-4)) == pytest.approx(0.5, rel=1e-14)


def test_log_power_matches_its_tabulation():
    lp = moduli.log_power(0.5)
    t = np.geomspace(2.0 ** -40, 1.0, 2000)
    tab = moduli.tabulated(t, lp(t))
    assert tab(math.exp(-4)) == pytest.approx(0.5, rel=1e-6)


def test_eval_outside_domain():
    for bad in (0.0, -0.1, 1.5, np.nan):
        with pytest.raises(DomainError):
            moduli.power(0.5)(bad)


def test_dini_closed_forms_against_scipy():
    for a in (0.25, 0.5, 0.75):
        m = moduli.power(a)
        for x in (1e-8, 1e-3, 0.3):
            # in u = ln t the integrand is the smooth e^{a u}
            ref = integrate.quad(lambda u: math.exp(a * u), math.log(x), 0.0, epsabs=0, epsrel=1e-13)[0]
            assert m.dini_integral(x) == pytest.approx(ref, rel=1e-10)
            assert m.dini_integral(x) == pytest.approx((1 - x ** a) / a, rel=1e-14)
    assert moduli.constant().dini_integral(0.01) == pytest.approx(math.log(100), rel=1e-14)


def test_dini_logpower_below_knot():
    m = moduli.log_power(0.5)
    x = math.exp(-4)
    # log^{1/2}(e^4) / (1/2) = 4, frozen
    assert m.dini_integral(x) == pytest.approx(4.0, rel=1e-12)
    assert m.dini_integral(x, method="quad") == pytest.approx(4.0, rel=1e-9)


@given(alphas, xs)
def test_dini_auto_equals_quad(a, x):
    m = moduli.power(a)
    assert m.dini_integral(x) == pytest.approx(m.dini_integral(x, method="quad"), rel=1e-9)


def test_is_dini():
    assert moduli.is_dini(moduli.power(0.5)).verdict is True
    assert moduli.is_dini(moduli.constant()).verdict is False
    est = moduli.is_dini(moduli.log_power(0.5))
    assert est.verdict is False
    vals = [v for _, v in est.probes]
    assert np.all(np.diff(vals) > 0)


def test_tilde_closed_forms():
    x = np.geomspace(2.0 ** -30, 0.25, 200)
    assert np.allclose(moduli.constant().tilde()(x), 1 / np.log(1 / x), rtol=1e-6, atol=0)
    a = 0.5
    assert np.allclose(moduli.power(a).tilde()(x), a * x ** a / (1 - x ** a), rtol=1e-6, atol=0)
    # frozen: 0.5 * 2^-5 / (1 - 2^-5) at x = 2^-10
    assert moduli.power(a).tilde()(2.0 ** -10) == pytest.approx(0.016129032258064516, rel=1e-6)


def test_tilde_of_power_tends_to_alpha_times_omega():
    m = moduli.power(0.3)
    mt = m.tilde()
    x = np.array([2.0 ** -30, 2.0 ** -20])
    r = mt(x) / m(x)
    assert np.allclose(r, 0.3 / (1 - x ** 0.3), rtol=1e-6)
    assert np.all(np.diff(np.abs(r - 0.3)) > 0)


def test_tilde_domain_stops_before_one():
    mt = moduli.constant().tilde()
    assert mt.upper < 1.0
    with pytest.raises(DomainError):
        mt(1.0)


@given(st.sampled_from([0.1, 0.5, 0.9]), xs, xs)
def test_monotone(a, x, y):
    lo, hi = min(x, y), max(x, y)
    for m in (moduli.power(a), moduli.log_power(a), moduli.constant()):
        assert m(lo) <= m(hi) * (1 + 1e-14)
        assert m.dini_integral(lo) >= m.dini_integral(hi) * (1 - 1e-14)


@given(st.sampled_from([0.0, 0.5]), st.floats(min_value=2.0 ** -30, max_value=0.99))
def test_tilde_is_monotone(a, x):
    mt = moduli.log_power(a).tilde()
    y = min(0.99, 1.5 * x)
    assert mt(x) <= mt(y) * (1 + 1e-12)


@given(st.sampled_from(["constant", "power", "logpower"]), alphas)
def test_serialization_roundtrip(fam, a):
    m = {"constant": moduli.constant, "power": lambda: moduli.power(a),
         "logpower": lambda: moduli.log_power(a)}[fam]()
    m2 = moduli.Modulus.from_dict(m.to_dict())
    x = np.geomspace(1e-9, 1, 17)
    assert np.array_equal(m(x), m2(x))


def test_tabulated_roundtrip():
    mt = moduli.power(0.5).tilde()
    m2 = moduli.Modulus.from_dict(mt.to_dict())
    x = np.geomspace(1e-9, 0.9, 17)
    assert np.allclose(mt(x), m2(x), rtol=1e-12)


def test_extremal_phi():
    c = moduli.constant()
    assert moduli.extremal_phi(c, np.array([0.5, 0.0])) == pytest.approx(math.log(2))
    assert moduli.extremal_phi(moduli.power(0.3), np.array([1.5, 0.0])) == 0.0
    assert moduli.extremal_phi(moduli.power(0.5), np.array([0.0, 0.25])) == pytest.approx(1.0)
    assert np.isfinite(moduli.extremal_phi(c, np.zeros(2)))


def test_almost_decreasing():
    for m in (moduli.power(0.5), moduli.constant(), moduli.log_power(0.5)):
        ok, worst = moduli.certify_almost_decreasing(m)
        assert ok and worst >= 1.0
