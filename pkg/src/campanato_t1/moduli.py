"""Moduli of continuity and the scalar functionals built from them.

A modulus is an increasing function on (0, 1] (or the constant 1).  Besides
point evaluation we need the Dini-type integral

    I(x) = int_x^1 w(t) dt / t,

the smoothed modulus  w~(x) = w(x) / I(x)  and the radial extremal function
phi(t) = I(|t|) on the unit ball.  Built-in families have closed forms for
I; a tabulated modulus integrates its interpolant.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import DomainError, OverflowFailure, QuadratureFailure

__all__ = [
    "Modulus", "DiniEstimate", "constant", "power", "log_power", "tabulated",
    "dini_integral", "is_dini", "tilde", "extremal_phi", "certify_almost_decreasing",
]

QUAD_RTOL = 1e-10
LOG_KNOT = math.exp(-1.0)        # LogPower switches to its continuation here
TABLE_FLOOR = 2.0 ** -40
TILDE_MARGIN = 2.0 ** -10
TILDE_NODES = 1024

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _empirical_constant(fn, eps, lo, hi, n=4096):
    """Smallest C with g(s) <= C g(t) for all sampled t < s, g = w(t)/t^eps."""
    t = np.geomspace(lo, hi, n)
    g = fn(t) / t ** eps
    running_min = np.minimum.accumulate(g)
    return float(max(1.0, np.max(g / running_min)))


class Modulus:
    """An immutable modulus of continuity.

    Use the constructors :func:`constant`, :func:`power`, :func:`log_power`
    and :func:`tabulated` rather than calling this directly.
    """

    def __init__(self, family, alpha=None, eps=None, C=None, t=None, w=None,
                 interp="pchip"):
        self.family = family
        self.alpha = None if alpha is None else float(alpha)
        self.interp = interp
        self.upper = 1.0
        if family == "constant":
            pass
        elif family == "power":
            if not 0.0 < self.alpha < 1.0:
                raise DomainError(f"power modulus needs 0 < alpha < 1, got {alpha}")
        elif family == "logpower":
            if not 0.0 <= self.alpha < 1.0:
                raise DomainError(f"log-power modulus needs 0 <= alpha < 1, got {alpha}")
            # Continuation on [e^-1, 1]: linear in log t, chosen so that
            # I(x) = log^{1-a}(1/x) / (1-a) holds exactly below the knot.
            self._beta = 2.0 * self.alpha / (1.0 - self.alpha)
        elif family == "tabulated":
            self._init_table(t, w, interp)
        else:
            raise DomainError(f"unknown modulus family {family!r}")

        if eps is None:
            eps = {"constant": 0.5, "power": None, "logpower": 0.5}.get(family, 0.5)
            if family == "power":
                eps = 0.5 * (1.0 + self.alpha)
        self.eps = float(eps)
        if not 0.0 < self.eps < 1.0:
            raise DomainError("almost-decreasing exponent must lie in (0, 1)")
        if C is None:
            if family in ("constant", "power"):
                C = 1.0
            else:
                C = _empirical_constant(self.eval, self.eps, TABLE_FLOOR, self.upper)
        self.C = float(C)

    # -- tabulated support -------------------------------------------------

    def _init_table(self, t, w, interp):
        t = np.array(t, dtype=float)
        w = np.array(w, dtype=float)
        if t.ndim != 1 or t.shape != w.shape or t.size < 4:
            raise DomainError("tabulated modulus needs >= 4 matching sample pairs")
        if np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > 1.0:
            raise DomainError("tabulation nodes must increase inside (0, 1]")
        if np.any(w <= 0) or np.any(np.diff(w) < 0):
            raise DomainError("tabulated values must be positive and nondecreasing")
        t.setflags(write=False)
        w.setflags(write=False)
        self._t, self._w = t, w
        self.upper = float(t[-1])
        u, lw = np.log(t), np.log(w)
        if interp == "spline":
            self._spline = CubicSpline(u, lw)
        elif interp == "pchip":
            self._spline = PchipInterpolator(u, lw)
        else:
            raise DomainError(f"unknown interpolation {interp!r}")
        self._dspline = self._spline.derivative()
        # power-law continuation below the first node
        self._slope0 = max(float(self._dspline(u[0])), 0.0)
        # cumulative int_{u_i}^{u_last} exp(S(u)) du at the nodes
        a, b = u[:-1], u[1:]
        half = 0.5 * (b - a)
        nodes = 0.5 * (a + b)[:, None] + half[:, None] * _GL_X[None, :]
        seg = half * (np.exp(self._spline(nodes)) @ _GL_W)
        self._cum = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        self._u = u

        fine = np.geomspace(t[0], t[-1], max(2048, 4 * t.size))
        vals = self._table_eval(fine)
        if np.any(np.diff(vals) < -1e-12 * np.abs(vals[1:])):
            raise DomainError("tabulated modulus interpolant is not monotone")

    def _table_eval(self, x):
        u = np.log(x)
        below = u < self._u[0]
        out = np.exp(self._spline(np.where(below, self._u[0], u)))
        if np.any(below):
            w0 = self._w[0]
            out = np.where(below, w0 * np.exp(self._slope0 * (u - self._u[0])), out)
        return out

    def _table_dini(self, x):
        u = np.log(x)
        u0 = self._u[0]
        uc = np.maximum(u, u0)
        idx = np.clip(np.searchsorted(self._u, uc, side="right") - 1, 0, self._u.size - 2)
        b = self._u[idx + 1]
        half = 0.5 * (b - uc)
        nodes = (0.5 * (b + uc))[..., None] + half[..., None] * _GL_X
        partial = half * (np.exp(self._spline(nodes)) @ _GL_W)
        out = partial + self._cum[idx + 1]
        below = u < u0
        if np.any(below):
            w0, s = self._w[0], self._slope0
            if s > 0:
                extra = w0 * (1.0 - np.exp(s * (u - u0))) / s
            else:
                extra = w0 * (u0 - u)
            out = out + np.where(below, extra, 0.0)
        return out

    # -- evaluation --------------------------------------------------------

    def _check(self, x, upper=None):
        upper = self.upper if upper is None else upper
        if np.any(~(x > 0)) or np.any(x > upper * (1 + 1e-14)):
            raise DomainError(f"modulus argument outside (0, {upper}]")

    def _raw(self, x):
        if self.family == "constant":
            return np.ones_like(x)
        if self.family == "power":
            return x ** self.alpha
        if self.family == "logpower":
            xs = np.minimum(x, LOG_KNOT)
            low = (-np.log(xs)) ** (-self.alpha) if self.alpha else np.ones_like(x)
            high = 1.0 + self._beta * (np.log(np.maximum(x, LOG_KNOT)) + 1.0)
            return np.where(x < LOG_KNOT, low, high)
        return self._table_eval(x)

    def eval(self, x):
        """w(x) for 0 < x <= 1 (vectorized)."""
        arr, scalar = _as_array(x)
        self._check(arr)
        out = self._raw(arr)
        return float(out) if scalar else out

    __call__ = eval

    def deriv(self, x):
        """dw/dx, used for boundary tangents of graph domains."""
        arr, scalar = _as_array(x)
        self._check(arr)
        if self.family == "constant":
            out = np.zeros_like(arr)
        elif self.family == "power":
            out = self.alpha * arr ** (self.alpha - 1.0)
        elif self.family == "logpower":
            xs = np.minimum(arr, LOG_KNOT)
            L = -np.log(xs)
            low = self.alpha * L ** (-self.alpha - 1.0) / xs
            out = np.where(arr < LOG_KNOT, low, self._beta / arr)
        else:
            u = np.log(arr)
            below = u < self._u[0]
            s = np.where(below, self._slope0, self._dspline(np.where(below, self._u[0], u)))
            out = self._table_eval(arr) * s / arr
        return float(out) if scalar else out

    def _closed_dini(self, x):
        if self.family == "constant":
            return -np.log(x)
        if self.family == "power":
            return (1.0 - x ** self.alpha) / self.alpha
        if self.family == "logpower":
            a = self.alpha
            L = -np.log(np.minimum(x, LOG_KNOT))
            low = L ** (1.0 - a) / (1.0 - a)
            u = np.log(np.maximum(x, LOG_KNOT))
            high = -u + 0.5 * self._beta * (1.0 - (u + 1.0) ** 2)
            return np.where(x < LOG_KNOT, low, high)
        if self.upper < 1.0:
            if np.any(x < 1.0):
                raise DomainError("tabulation ends before 1; the integral up to 1 is undefined")
        return self._table_dini(x)

    def dini_integral(self, x, method="auto"):
        return dini_integral(self, x, method)

    def tilde(self, margin=TILDE_MARGIN, n=TILDE_NODES):
        return tilde(self, margin, n)

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        d = {"family": self.family}
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.family == "tabulated":
            d["t"] = self._t.tolist()
            d["w"] = self._w.tolist()
            d["interp"] = self.interp
        d["eps"] = self.eps
        d["C"] = self.C
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        fam = str(d.pop("family", "")).lower().replace("_", "")
        eps, C = d.pop("eps", None), d.pop("C", None)
        if fam == "constant":
            return cls("constant", eps=eps, C=C)
        if fam == "power":
            return cls("power", alpha=d["alpha"], eps=eps, C=C)
        if fam in ("logpower", "log"):
            return cls("logpower", alpha=d.get("alpha", 0.0), eps=eps, C=C)
        if fam == "tabulated":
            return cls("tabulated", t=d["t"], w=d["w"], interp=d.get("interp", "pchip"),
                       eps=eps, C=C)
        raise DomainError(f"unknown modulus family {fam!r}")

    def __repr__(self):
        if self.family in ("power", "logpower"):
            return f"Modulus({self.family}, alpha={self.alpha})"
        if self.family == "tabulated":
            return f"Modulus(tabulated, n={self._t.size}, upper={self.upper:.6g})"
        return "Modulus(constant)"


def constant():
    return Modulus("constant")


def power(alpha):
    return Modulus("power", alpha=alpha)


def log_power(alpha):
    return Modulus("logpower", alpha=alpha)


def tabulated(t, w, eps=0.5, C=None, interp="pchip"):
    return Modulus("tabulated", t=t, w=w, eps=eps, C=C, interp=interp)


def _quad_dini(m, x):
    lo = math.log(x)
    points = [-1.0] if (m.family == "logpower" and lo < -1.0) else None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(lambda u: float(m._raw(np.asarray(math.exp(u)))),
                                      lo, 0.0, epsabs=0.0, epsrel=QUAD_RTOL,
                                      limit=400, points=points)
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(f"Dini quadrature did not converge: {exc}",
                                    bracket=(x, 1.0)) from exc
    return val


def dini_integral(m, x, method="auto"):
    """int_x^1 w(t)/t dt.

    ``method="auto"`` uses the closed form (exact for the interpolant in the
    tabulated case); ``method="quad"`` runs adaptive quadrature in log t.
    """
    arr, scalar = _as_array(x)
    m._check(arr, upper=1.0)
    if method == "auto":
        out = m._closed_dini(arr)
    elif method == "quad":
        if m.upper < 1.0:
            raise DomainError("tabulation ends before 1; the integral up to 1 is undefined")
        out = np.vectorize(lambda v: _quad_dini(m, v), otypes=[float])(arr)
    else:
        raise DomainError(f"unknown method {method!r}")
    return float(out) if scalar else out


@dataclass
class DiniEstimate:
    verdict: bool | None          # None means inconclusive
    probes: list = field(default_factory=list)   # (x, I(x)) pairs
    tail_ratio: float = float("nan")
    tail_estimate: float = float("nan")

    @property
    def status(self):
        return {True: "dini", False: "not-dini", None: "inconclusive"}[self.verdict]

    def __bool__(self):
        return bool(self.verdict)


def is_dini(m, probe_floor=2.0 ** -40):
    """Decide convergence of int_0 w(t)/t dt from dyadic probes.

    The increments over [2^-(k+1), 2^-k] decay geometrically for a Dini
    modulus and at most algebraically otherwise; the ratio of the last
    increment to the one halfway down the probe range separates the two.
    """
    kmax = int(round(-math.log2(probe_floor)))
    xs = 2.0 ** -np.arange(1, kmax + 1, dtype=float)
    vals = dini_integral(m, xs)
    probes = list(zip(xs.tolist(), vals.tolist()))
    inc = np.diff(vals)
    if np.any(inc < 0) or inc[-1] == 0.0:
        return DiniEstimate(None, probes)
    mid = inc.size // 2
    r = float(inc[-1] / inc[mid])
    q = r ** (1.0 / (inc.size - 1 - mid))
    tail = float(inc[-1] * q / (1.0 - q)) if q < 1 else float("inf")
    if r <= 0.45:
        verdict = True
    elif r >= 0.55:
        verdict = False
    else:
        verdict = None
    return DiniEstimate(verdict, probes, r, tail)


def _logit_grid(lo, hi, n):
    a, b = math.log(lo / (1 - lo)), math.log(hi / (1 - hi))
    v = np.linspace(a, b, n)
    return 1.0 / (1.0 + np.exp(-v))


def tilde(m, margin=TILDE_MARGIN, n=TILDE_NODES):
    """The smoothed modulus w(x) / int_x^1 w(t) dt/t, tabulated on (0, 1-margin].

    Nodes are uniform in logit(t), so they are log-spaced near 0 and cluster
    geometrically toward 1 where the denominator vanishes.
    """
    if n < 512:
        raise DomainError("tilde needs at least 512 nodes")
    t = _logit_grid(TABLE_FLOOR, 1.0 - margin, n)
    den = dini_integral(m, t)
    if np.any(den < 1e-300):
        raise OverflowFailure("tilde denominator underflow")
    w = m.eval(t) / den
    if np.any(np.diff(w) < 0):
        raise DomainError("tilde samples are not monotone")
    return Modulus("tabulated", t=t, w=w, eps=m.eps, interp="spline")


def extremal_phi(m, t):
    """phi(t) = int_{|t|}^1 w(u)/u du inside the unit ball, 0 outside.

    ``t`` has shape (..., 2).  The radius is floored at 1e-300 so the
    non-Dini singularity at the origin stays finite.
    """
    pts = np.asarray(t, dtype=float)
    r = np.hypot(pts[..., 0], pts[..., 1])
    inside = r < 1.0
    rr = np.clip(r, 1e-300, 1.0)
    out = np.where(inside, m._closed_dini(np.where(inside, rr, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def certify_almost_decreasing(m, n=4096):
    """Sampled check of w(s)/s^eps <= C w(t)/t^eps; returns the worst ratio."""
    worst = _empirical_constant(m.eval, m.eps, TABLE_FLOOR, m.upper, n)
    return worst <= m.C * (1 + 1e-9), worst
