"""The T1 condition (T chi_D) chi_D in C_{w~}(D), Bloch profiles near the
boundary, the restricted operator f -> T(f chi_D) chi_D, and the mean
growth of the extremal function."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import czkernel as cz
from . import geometry as geo
from . import moduli
from . import seminorm as sn
from . import whitney as wh
from .errors import DomainError, RoughnessError
from .extension import cube_means

FIELD_COLLAR = 2.0 ** -10
TREND_MIN = -0.1
DEFAULT_THRESHOLD = 100.0


def tchi_field(domain, k, grid_n=128, tol=cz.DEFAULT_TOL, threads=None):
    """(T chi_D) chi_D sampled on a grid over the bounding box.

    Nodes inside D with rho >= 2^-10 diam(D) get exact values; the remaining
    nodes copy the nearest exact node, so bilinear interpolation is defined
    everywhere.  The result is multiplied by chi_D.
    """
    if grid_n < 64:
        raise DomainError("grid_n must be at least 64")
    lo, hi = (np.asarray(v, float) for v in domain.bbox)
    xs = np.linspace(lo[0], hi[0], grid_n)
    ys = np.linspace(lo[1], hi[1], grid_n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], -1)
    rho = -domain.signed_distance(nodes)
    good = rho >= FIELD_COLLAR * domain.diameter
    vals = np.zeros(nodes.shape[0])
    vals[good] = cz.pv_tchi(domain, k, nodes[good], tol=tol, threads=threads)
    bad = np.nonzero(~good)[0]
    if bad.size:
        _, near = cKDTree(nodes[good]).query(nodes[bad])
        vals[bad] = vals[np.nonzero(good)[0][near]]
    grid = vals.reshape(grid_n, grid_n)
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]

    def evaluate(p):
        shape = p.shape[:-1]
        q = p.reshape(-1, 2)
        u = np.clip((q[:, 0] - lo[0]) / hx, 0, grid_n - 1 - 1e-12)
        v = np.clip((q[:, 1] - lo[1]) / hy, 0, grid_n - 1 - 1e-12)
        i, j = u.astype(int), v.astype(int)
        a, b = u - i, v - j
        out = ((1 - a) * (1 - b) * grid[i, j] + a * (1 - b) * grid[i + 1, j]
               + (1 - a) * b * grid[i, j + 1] + a * b * grid[i + 1, j + 1])
        return (out * domain.contains(q)).reshape(shape)

    def gradient(p):
        shape = p.shape[:-1]
        q = p.reshape(-1, 2)
        out = np.zeros(q.shape)
        ins = domain.contains(q)
        if np.any(ins):
            out[ins] = cz.grad_tchi_boundary(domain, k, q[ins], threads=threads)
        return out.reshape(shape + (2,))

    f = geo.ScalarField(evaluate, gradient, bbox=(lo, hi), resolution=max(hx, hy),
                        name=f"Tchi[{k.name}]")
    f.grid = grid
    f.nodes = (xs, ys)
    return f


# ---------------------------------------------------------------------------
# Bloch profile

def _normal_line_origin(domain):
    if hasattr(domain, "tangency"):
        return np.asarray(domain.tangency, float), np.array([0.0, 1.0])
    # midpoint of the first boundary piece; CCW orientation puts the interior on the left
    p, d = domain.piece_eval(np.array([0]), np.array([0.5]))
    d = d[0] / np.linalg.norm(d[0])
    return p[0], np.array([-d[1], d[0]])


@dataclass
class BlochProfile:
    deltas: np.ndarray
    grad: np.ndarray
    ratio: np.ndarray
    skipped: list
    origin: list

    @property
    def band(self):
        r = self.ratio
        if r.size == 0 or r.max() == 0:
            return 1.0
        return float(r.max() / r.min()) if r.min() > 0 else math.inf

    @property
    def slope(self):
        r = self.ratio
        if r.size < 2 or np.all(r == 0):
            return 0.0
        return float(np.polyfit(np.log(self.deltas), np.log(np.maximum(r, 1e-300)), 1)[0])

    columns = ("delta", "grad", "ratio")

    def rows(self):
        for d, g, r in zip(self.deltas, self.grad, self.ratio):
            yield {"delta": d, "grad": g, "ratio": r}

    def summary(self):
        return {"band": self.band, "slope": self.slope, "max_ratio": float(self.ratio.max()) if self.ratio.size else 0.0,
                "n": int(self.deltas.size), "skipped": self.skipped, "origin": self.origin}


def bloch_profile(domain, k, m, deltas=None, refinement=0):
    """|grad T chi_D| at distance delta along the inward normal, scaled by delta / w(delta)."""
    if deltas is None:
        deltas = np.logspace(-4, -1, 12)
    deltas = np.asarray(deltas, float)
    a, nrm = _normal_line_origin(domain)
    keep = deltas >= cz.COLLAR
    skipped = deltas[~keep].tolist()
    d = deltas[keep]
    y = a + d[:, None] * nrm
    g = np.linalg.norm(cz.grad_tchi_boundary(domain, k, y, refinement), axis=-1)
    ratio = g * d / m.eval(d)
    return BlochProfile(d, g, ratio, skipped, a.tolist())


# ---------------------------------------------------------------------------
# T1 check

def grid_resolution(domain, grid_n):
    lo, hi = domain.bbox
    return float(np.max(np.asarray(hi, float) - np.asarray(lo, float))) / (grid_n - 1)


def t1_sampler(domain, resolution, whitney_level=-6, n_random=1000, seed=0):
    """Interior cubes (2Q in D) no smaller than four grid cells."""
    kmin = int(math.ceil(math.log2(4 * resolution)))
    s = sn.default_sampler(domain, interior=True, whitney_level=whitney_level,
                           n_random=n_random, seed=seed, levels=(kmin, -1))
    return s.subset(s.sides >= 4 * resolution)


def finest_trend(report, generations=2):
    """Least-squares slope of log(max ratio) against log(side) over the finest levels."""
    lv = np.floor(np.log2(report.sides) + 1e-9).astype(int)
    levels = np.unique(lv)[:generations]
    xs, ys = [], []
    for L in levels:
        r = report.ratio[lv == L].max()
        xs.append(L * math.log(2))
        ys.append(r)
    ys = np.asarray(ys)
    if len(xs) < 2 or np.all(ys <= 1e-12):
        return 0.0
    return float(np.polyfit(xs, np.log(np.maximum(ys, 1e-300)), 1)[0])


@dataclass
class T1Report:
    domain: dict
    kernel: str
    modulus: dict
    seminorm: sn.OscillationReport
    profile: BlochProfile
    threshold: float
    trend_min: float
    provenance: dict = field(default_factory=dict)

    def aggregate(self):
        sup = self.seminorm.sup
        slope = finest_trend(self.seminorm)
        bounded = sup <= self.threshold
        no_trend = slope >= self.trend_min
        return {"sup_ratio": sup, "threshold": self.threshold, "bounded": bool(bounded),
                "trend_slope": slope, "trend_min": self.trend_min, "no_upward_trend": bool(no_trend),
                "pass": bool(bounded and no_trend),
                "profile": self.profile.summary() if self.profile is not None else None}

    @property
    def verdict(self):
        return self.aggregate()

    @property
    def passed(self):
        return self.aggregate()["pass"]


def t1_check(domain, k, m, grid_n=128, tol=cz.DEFAULT_TOL, threshold=DEFAULT_THRESHOLD,
             seed=0, n_random=1000, whitney_level=-6, profile=True, threads=None, use_tilde=True,
             sampler=None):
    """Estimate the w~-seminorm of (T chi_D) chi_D and attach a Bloch profile.

    Pass ``sampler`` to hold the cube family fixed across grid refinements.
    """
    mt = m.tilde() if use_tilde else m
    field_ = tchi_field(domain, k, grid_n, tol, threads)
    if sampler is None:
        sampler = t1_sampler(domain, field_.resolution, whitney_level, n_random, seed)
    rep = sn.campanato_seminorm(field_, domain, mt, 1, sampler, interior=True)
    prof = bloch_profile(domain, k, m) if profile else None
    prov = {"grid_n": grid_n, "tol": tol, "resolution": field_.resolution, "seed": seed,
            "sampler": sampler.descriptor, "tilde": use_tilde, "collar": FIELD_COLLAR}
    return T1Report(domain.to_dict(), k.name, m.to_dict(), rep, prof, threshold, TREND_MIN, prov)


# ---------------------------------------------------------------------------
# restricted operator

def _polar_part(f, k, y, r, fy, n_theta=64):
    """int over B_r(y) of (f(x) - f(y)) K(y - x) dx with r' = r e^{-s}."""
    th = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
    u = np.stack([np.cos(th), np.sin(th)], -1)
    om = k.omega(-u)
    gx, gw = np.polynomial.legendre.leggauss(16)
    edges = [0.0, 0.5, 1, 2, 4, 8, 16, 32, 64]
    parts = []
    for a, b in zip(edges[:-1], edges[1:]):
        s = a + (b - a) * (gx + 1) / 2
        rr = r * np.exp(-s)
        pts = y + rr[:, None, None] * u[None]
        v = (f(pts) - fy) * om[None]
        parts.append(np.sum(v.sum(axis=1) * gw) * (b - a) / 2 * (2 * np.pi / n_theta))
    return float(sum(parts)), abs(parts[-1]) + abs(parts[-2])


def _area_part(domain, k, f, y, r, fy, tol, budget):
    g = lambda x: f(x) - fy
    prev = None
    used = 0
    for L in range(6, 25):
        val, cells = cz._quadtree_pass(domain, k, y, r, L, budget - used, weight=g)
        used += cells
        if prev is not None and abs(val - prev) < tol:
            return val
        prev = val
    raise RoughnessError("area integral did not converge", estimate=prev)


def restricted_apply(domain, k, f, y, tol=1e-4, budget=cz.QUADTREE_BUDGET):
    """PV int_D f(x) K(y - x) dx = f(y) T chi_D(y) + int_D (f - f(y)) K(y - x) dx."""
    y = np.asarray(y, float)
    if not domain.contains(y[None])[0]:
        raise DomainError("restricted_apply needs an interior point")
    rho = -float(domain.signed_distance(y))
    fy = float(f(y[None])[0])
    base = fy * cz.pv_tchi(domain, k, y) if fy != 0 else 0.0
    r = 0.5 * rho
    near, tail = _polar_part(f, k, y, r, fy)
    if not np.isfinite(near) or tail > tol:
        raise RoughnessError(f"oscillation integral does not settle at {y.tolist()} (tail {tail:.2g})",
                             estimate=near, error_bound=tail)
    far = _area_part(domain, k, f, y, r, fy, tol, budget)
    return float(base + near + far)


# ---------------------------------------------------------------------------
# necessity mechanism

def phi_tau(m, tau):
    """The extremal function centred at tau."""
    tau = np.asarray(tau, float)
    return geo.ScalarField(lambda p: moduli.extremal_phi(m, p - tau), name=f"phi@{tau.tolist()}")


def necessity_demo(domain, k, m, tau, scales, quad_n=32, tol=cz.DEFAULT_TOL):
    """Per cube Q centred at tau: mean of phi_tau chi_D against int_ell^1 w/t,
    and the oscillation of T chi_D on Q scaled by w~(ell)."""
    tau = np.asarray(tau, float)
    scales = np.asarray(scales, float)
    lo = tau - scales[:, None]
    hi = tau + scales[:, None]
    ok = domain.box_inside(lo, hi)
    if not np.all(ok):
        raise DomainError("cubes with 2Q not inside D were requested")
    phi = phi_tau(m, tau)
    f = geo.ScalarField(lambda p: phi(p) * domain.contains(p.reshape(-1, 2)).reshape(p.shape[:-1]))
    means = cube_means(f, tau - 0.5 * scales[:, None], scales, quad_n)
    bound = m.dini_integral(scales)
    mt = m.tilde()
    osc = np.empty(scales.size)
    g = (np.arange(16) + 0.5) / 16 - 0.5
    G = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    for n, s in enumerate(scales):
        v = cz.pv_tchi(domain, k, tau + s * G, tol=tol)
        osc[n] = np.mean(np.abs(v - np.median(v)))
    return {"side": scales, "mean_phi": means, "dini_bound": bound, "mean_ratio": means / bound,
            "osc_T": osc, "osc_T_over_wtilde": osc / mt.eval(scales),
            "columns": ("side", "mean_phi", "dini_bound", "mean_ratio", "osc_T", "osc_T_over_wtilde")}
