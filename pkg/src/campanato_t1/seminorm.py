"""Campanato and weighted Bloch seminorm estimators.

Oscillation over a cube is measured on an n x n midpoint grid; the best
constant is the sample median (p = 1) or mean (p = 2), which are the exact
minimizers for the discrete samples.  Every sup is over finitely many cubes
or probes, so reported values are lower estimates of the true seminorm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import moduli
from . import whitney as wh
from .errors import CapabilityError, EmptyReportError
from .extension import _eval_chunked, _midpoint_nodes, cube_means

SAMPLE_N = 32
MIN_SIDE = 2.0 ** -20
BLOCH_COLLAR = 2.0 ** -20
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# cube samplers

@dataclass
class CubeSample:
    """A finite family of axis-parallel cubes (centers, sides) with a label."""
    centers: np.ndarray
    sides: np.ndarray
    descriptor: dict = field(default_factory=dict)

    def __len__(self):
        return self.sides.size

    @staticmethod
    def of(cubes, descriptor=None):
        if isinstance(cubes, CubeSample):
            return cubes
        c = np.asarray([q[0] for q in cubes], dtype=float).reshape(-1, 2)
        s = np.asarray([q[1] for q in cubes], dtype=float).reshape(-1)
        return CubeSample(c, s, descriptor or {"kind": "explicit", "n": int(s.size)})

    def concat(self, other):
        d = {"kind": "union", "parts": [self.descriptor, other.descriptor]}
        return CubeSample(np.concatenate([self.centers, other.centers]),
                          np.concatenate([self.sides, other.sides]), d)

    def subset(self, mask):
        return CubeSample(self.centers[mask], self.sides[mask], self.descriptor)


def admissible(domain, centers, sides, interior):
    """Q inside D (interior=False) or 2Q inside D (interior=True)."""
    if domain is None:
        return np.ones(sides.size, dtype=bool)
    f = 1.0 if interior else 0.5
    lo = centers - f * sides[:, None]
    hi = centers + f * sides[:, None]
    return domain.box_inside(lo, hi)


def random_cubes(domain, n, seed=0, interior=True, levels=(-12, -1), region=None, max_tries=50):
    """n random admissible cubes with sides 2**k, k uniform over the level range."""
    rng = np.random.default_rng(seed)
    if region is None:
        lo, hi = domain.bbox
    else:
        lo, hi = region
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    ks = np.arange(levels[0], levels[1] + 1)
    C, S = [], []
    have = 0
    for _ in range(max_tries):
        m = 4 * (n - have)
        k = rng.choice(ks, size=m)
        s = np.ldexp(1.0, k)
        c = lo + rng.uniform(0, 1, (m, 2)) * (hi - lo)
        ok = admissible(domain, c, s, interior)
        C.append(c[ok])
        S.append(s[ok])
        have += int(ok.sum())
        if have >= n:
            break
    c = np.concatenate(C)[:n]
    s = np.concatenate(S)[:n]
    return CubeSample(c, s, {"kind": "random", "n": int(s.size), "seed": seed, "levels": list(levels)})


def boundary_cubes(domain, n, seed=0, levels=(-6, -1)):
    """Random cubes centred near the boundary (for whole-plane seminorms)."""
    rng = np.random.default_rng(seed)
    q = domain.boundary_quadrature(2)
    pick = rng.integers(0, len(q), size=n)
    k = rng.integers(levels[0], levels[1] + 1, size=n)
    s = np.ldexp(1.0, k)
    c = q.points[pick] + rng.uniform(-0.5, 0.5, (n, 2)) * s[:, None]
    return CubeSample(c, s, {"kind": "boundary", "n": n, "seed": seed, "levels": list(levels)})


def whitney_sample(cov, domain=None, interior=True, dilations=(1.0, 9 / 8), min_side=MIN_SIDE):
    """Whitney cubes and their dilations, kept where admissible."""
    C, S = [], []
    for t in dilations:
        C.append(cov.centers)
        S.append(t * cov.sides)
    c, s = np.concatenate(C), np.concatenate(S)
    keep = s >= min_side
    c, s = c[keep], s[keep]
    ok = admissible(domain, c, s, interior) if domain is not None else np.ones(s.size, bool)
    return CubeSample(c[ok], s[ok], {"kind": "whitney", "side": cov.side, "min_level": cov.min_level,
                                     "dilations": list(dilations)})


def default_sampler(domain, interior=True, whitney_level=-6, n_random=1000, seed=0,
                    levels=(-12, -1), min_side=MIN_SIDE):
    """Interior Whitney cubes, their 9/8 dilations, and random admissible cubes."""
    cov = wh.build_whitney(domain, "interior", whitney_level)
    ws = whitney_sample(cov, domain, interior, min_side=min_side)
    rs = random_cubes(domain, n_random, seed, interior, levels)
    out = ws.concat(rs)
    return out.subset(out.sides >= min_side)


def plane_sampler(domain, support, whitney_level=-6, n_random=1000, seed=0, levels=(-6, -1)):
    """Cubes for whole-plane seminorms of an extended field."""
    parts = []
    for side in ("interior", "exterior"):
        cov = wh.build_whitney(domain, side, whitney_level)
        parts.append(whitney_sample(cov, None, dilations=(1.0, 9 / 8)))
    parts.append(random_cubes(None, n_random // 2, seed, levels=levels, region=support))
    parts.append(boundary_cubes(domain, n_random - n_random // 2, seed + 1, levels))
    out = parts[0]
    for p in parts[1:]:
        out = out.concat(p)
    lo, hi = support
    inside = np.all((out.centers >= lo) & (out.centers <= hi), axis=1)
    return out.subset(inside & (out.sides >= math.ldexp(1.0, levels[0])))


# ---------------------------------------------------------------------------
# oscillation reports

@dataclass
class OscillationReport:
    centers: np.ndarray
    sides: np.ndarray
    b: np.ndarray
    osc: np.ndarray
    ratio: np.ndarray
    p: int
    modulus: dict
    interior: bool
    sampler: dict
    n: int

    @property
    def sup(self):
        return float(self.ratio.max()) if self.ratio.size else 0.0

    @property
    def argmax(self):
        return int(np.argmax(self.ratio)) if self.ratio.size else -1

    def __len__(self):
        return self.sides.size

    def rows(self):
        for c, s, b, o, r in zip(self.centers, self.sides, self.b, self.osc, self.ratio):
            yield {"cx": c[0], "cy": c[1], "side": s, "b": b, "osc": o, "ratio": r}

    columns = ("cx", "cy", "side", "b", "osc", "ratio")

    def summary(self):
        i = self.argmax
        return {"sup_ratio": self.sup, "p": self.p, "n_cubes": len(self), "interior": self.interior,
                "argmax_center": self.centers[i].tolist() if i >= 0 else None,
                "argmax_side": float(self.sides[i]) if i >= 0 else None,
                "modulus": self.modulus, "sampler": self.sampler, "sample_n": self.n}

    def by_scale(self):
        """Largest ratio at each side length (sorted by side)."""
        s = np.unique(self.sides)
        return s, np.array([self.ratio[self.sides == v].max() for v in s])


def _oscillations(f, centers, sides, p, n):
    g = _midpoint_nodes(n) - 0.5
    b = np.empty(sides.size)
    osc = np.empty(sides.size)
    step = max(1, (1 << 18) // (n * n))
    for s in range(0, sides.size, step):
        pts = centers[s:s + step, None, :] + sides[s:s + step, None, None] * g[None]
        v = _eval_chunked(f, pts)
        if p == 1:
            bb = np.median(v, axis=1)
            oo = np.mean(np.abs(v - bb[:, None]), axis=1)
        else:
            bb = np.mean(v, axis=1)
            oo = np.sqrt(np.mean((v - bb[:, None]) ** 2, axis=1))
        b[s:s + step] = bb
        osc[s:s + step] = oo
    return b, osc


def campanato_seminorm(f, domain, m, p=1, sampler=None, interior=False, n=SAMPLE_N, seed=0):
    """Sup over sampled cubes of osc_p(f, Q) / w(ell(Q)).

    ``domain=None`` means the whole plane.  ``interior=True`` keeps cubes
    with 2Q in D, otherwise cubes with Q in D.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if sampler is None:
        if domain is None:
            raise EmptyReportError("a sampler is required for whole-plane seminorms")
        sampler = default_sampler(domain, interior, seed=seed)
    cs = CubeSample.of(sampler)
    ok = (cs.sides >= MIN_SIDE) & (cs.sides <= min(1.0, m.upper))
    ok &= admissible(domain, cs.centers, cs.sides, interior)
    c, s = cs.centers[ok], cs.sides[ok]
    if s.size == 0:
        raise EmptyReportError("no admissible cube in the sample")
    b, osc = _oscillations(f, c, s, p, n)
    ratio = osc / m.eval(s)
    return OscillationReport(c, s, b, osc, ratio, p, m.to_dict() if m.family != "tabulated" else
                             {"family": "tabulated"}, interior, cs.descriptor, n)


def lp_equivalence_check(f, domain, m, sampler, interior=False, n=SAMPLE_N):
    """osc_2 / osc_1 on identical cubes (ratio 1 where both vanish)."""
    r1 = campanato_seminorm(f, domain, m, 1, sampler, interior, n)
    r2 = campanato_seminorm(f, domain, m, 2, sampler, interior, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(r1.osc > 0, r2.osc / np.where(r1.osc > 0, r1.osc, 1.0),
                     np.where(r2.osc > 0, np.inf, 1.0))
    return {"min": float(q.min()), "max": float(q.max()), "C_eq": float(q.max()),
            "ratios": q, "sup1": r1.sup, "sup2": r2.sup, "reports": (r1, r2)}


# ---------------------------------------------------------------------------
# Bloch seminorm

@dataclass
class BlochReport:
    points: np.ndarray
    rho: np.ndarray
    grad: np.ndarray
    ratio: np.ndarray
    modulus: dict

    @property
    def sup(self):
        return float(self.ratio.max()) if self.ratio.size else 0.0

    columns = ("x", "y", "rho", "grad", "ratio")

    def rows(self):
        for p, r, g, q in zip(self.points, self.rho, self.grad, self.ratio):
            yield {"x": p[0], "y": p[1], "rho": r, "grad": g, "ratio": q}

    def summary(self):
        i = int(np.argmax(self.ratio)) if self.ratio.size else -1
        return {"sup_ratio": self.sup, "n_probes": int(self.ratio.size),
                "argmax": self.points[i].tolist() if i >= 0 else None, "modulus": self.modulus}


def bloch_probes(domain, n_lines=32, n_random=500, seed=0, deltas=None):
    """Normal-line sweeps from boundary nodes plus random interior points."""
    rng = np.random.default_rng(seed)
    diam = domain.diameter
    if deltas is None:
        deltas = np.logspace(math.log10(BLOCH_COLLAR * diam), math.log10(0.25 * domain.window_size), 24)
    q = domain.boundary_quadrature(1)
    pick = np.linspace(0, len(q) - 1, n_lines).astype(int)
    pts = (q.points[pick, None, :] - deltas[None, :, None] * q.normals[pick, None, :]).reshape(-1, 2)
    lo, hi = domain.bbox
    rnd = rng.uniform(lo, hi, (4 * n_random, 2))
    rnd = rnd[domain.contains(rnd)][:n_random]
    return np.concatenate([pts, rnd])


def bloch_seminorm(f, domain, m, probes=None, seed=0):
    """Sup over probes of |grad f(x)| rho(x) / w(rho(x))."""
    if not f.has_gradient:
        raise CapabilityError("the Bloch seminorm needs a field with a gradient")
    pts = bloch_probes(domain, seed=seed) if probes is None else np.asarray(probes, float).reshape(-1, 2)
    pts = pts[domain.contains(pts)]
    rho = -domain.signed_distance(pts)
    keep = (rho >= BLOCH_COLLAR * domain.diameter) & (rho <= m.upper)
    pts, rho = pts[keep], rho[keep]
    g = np.linalg.norm(f.gradient(pts), axis=-1)
    ratio = g * rho / m.eval(rho)
    return BlochReport(pts, rho, g, ratio, m.to_dict() if m.family != "tabulated" else {"family": "tabulated"})


# ---------------------------------------------------------------------------
# consequences checked on fixtures

def mean_growth_check(f, domain, m, cubes, norm=1.0, quad_n=SAMPLE_N):
    """|f_Q| against norm * int_ell^1 w(t)/t dt on each cube."""
    cs = CubeSample.of(cubes)
    means = cube_means(f, cs.centers - 0.5 * cs.sides[:, None], cs.sides, quad_n)
    bound = m.dini_integral(np.minimum(cs.sides, 1 - 1e-15))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(means) / (norm * bound)
    order = np.argsort(cs.sides)
    nonmono = np.nonzero(np.diff(bound[order]) > 1e-14)[0]
    return {"means": means, "bound": bound, "ratio": ratio, "C": float(np.nanmax(ratio)),
            "sides": cs.sides, "centers": cs.centers, "monotone_violations": nonmono.tolist()}


def telescoping_drift(f, m, M, centers, sides, quad_n=SAMPLE_N):
    """|f_Q - f_2Q| / (4^2 M w(2 ell)) for nested concentric cubes."""
    centers = np.asarray(centers, float).reshape(-1, 2)
    sides = np.asarray(sides, float).reshape(-1)
    a = cube_means(f, centers - 0.5 * sides[:, None], sides, quad_n)
    b = cube_means(f, centers - sides[:, None], 2 * sides, quad_n)
    return np.abs(a - b) / (16.0 * M * m.eval(np.minimum(2 * sides, m.upper)))


def imbedding_constant(campanato_report, bloch_report):
    """Ratio of the interior Campanato estimate to the Bloch estimate."""
    if bloch_report.sup == 0:
        return 0.0 if campanato_report.sup == 0 else math.inf
    return campanato_report.sup / bloch_report.sup


HARMONIC_CONSTANT = 3.0 / (7.0 * math.pi)


def harmonic_gradient_bound(f, x0, R, n_r=64, n_t=256):
    """For harmonic f near x0: |grad f(x0)| and C R^-3 int_{B(x0,2R)} |f - c|.

    With c the mean over the ball and C = 3/(7 pi), the inequality
    follows from the mean value property of the derivatives on circles of
    radius r in [R, 2R] weighted by r^2.
    """
    if not f.has_gradient:
        raise CapabilityError("harmonic check needs an analytic gradient")
    x0 = np.asarray(x0, float).reshape(-1, 2)
    R = np.broadcast_to(np.asarray(R, float), (x0.shape[0],))
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = (xr + 1) / 2                       # in (0, 1), scaled by 2R below
    th = 2 * np.pi * (np.arange(n_t) + 0.5) / n_t
    grad = np.linalg.norm(f.gradient(x0), axis=-1)
    rhs = np.empty(x0.shape[0])
    for k in range(x0.shape[0]):
        rad = 2 * R[k] * r
        pts = x0[k] + rad[:, None, None] * np.stack([np.cos(th), np.sin(th)], -1)[None]
        v = f(pts)
        w = (wr * R[k] * rad)[:, None] * (2 * np.pi / n_t)     # dr * r dtheta
        c = np.sum(v * w) / (math.pi * 4 * R[k] ** 2)
        rhs[k] = HARMONIC_CONSTANT * R[k] ** -3 * np.sum(np.abs(v - c) * w)
    return grad, rhs
