"""Homogeneous kernels K(x) = Omega(x/|x|)/|x|^2 and integrals of K over domains.

The principal value PV int_D K(y - x) dx is reduced to a boundary integral.
With z = x - y, the field F(z) = z Omega(-z/|z|) ln|z| / |z|^2 has
divergence K(-z) away from 0, and its flux through any small circle around
y is ln(eps) * int Omega = 0.  Hence

    T chi_D(y) = int_{dD} Omega((y-x)/|y-x|) ln|x-y| ((x-y).nu) / |x-y|^2 dS(x)

for y inside or outside D.  The integrand is smooth on the boundary, so
Gauss-Legendre panels refined toward the target give near machine accuracy.
The gradient is  d_i T chi_D(y) = -int_{dD} K(y-x) nu_i(x) dS(x).

An area quadtree (`method="quadtree"`) integrates K over D minus B_r(y),
using that the PV over the ball B_r(y) vanishes exactly.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.interpolate import CubicSpline

from . import geometry as geo
from .errors import ConfigError, DomainError, QuadratureFailure

DEFAULT_TOL = 1e-6
PANEL_ETA = 1.5          # split a panel while its length exceeds eta * distance to target
MAX_PANEL_DEPTH = 64
TARGET_CHUNK = 512
COLLAR = 2.0 ** -20
QUADTREE_BUDGET = 1_000_000

_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)


class Kernel:
    """Angular symbol Omega on the unit circle; K(x) = Omega(x/|x|) / |x|^2."""

    def __init__(self, name, omega, even=True, projection=0.0, lipschitz=None, descriptor=None):
        self.name = name
        self._omega = omega
        self.even = bool(even)
        self.projection = float(projection)
        self.lipschitz = lipschitz
        self.descriptor = descriptor or {"name": name}
        self.dimension = 2
        mean = self.spherical_mean()
        if abs(mean) > 1e-10:
            raise ConfigError(f"kernel {name} has nonzero spherical mean {mean:.3g}")
        if self.even:
            th = np.linspace(0, 2 * np.pi, 97)
            if np.max(np.abs(self.omega_angle(th) - self.omega_angle(th + np.pi))) > 1e-12:
                raise ConfigError(f"kernel {name} declared even but is not")

    def omega(self, u):
        """Omega at unit vectors u of shape (..., 2)."""
        return self._omega(np.asarray(u, dtype=float))

    def omega_angle(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.omega(np.stack([np.cos(theta), np.sin(theta)], -1))

    def spherical_mean(self, n=512):
        th = 2 * np.pi * np.arange(n) / n
        return float(np.mean(self.omega_angle(th)) * 2 * np.pi)

    def __call__(self, x):
        return kernel_eval(self, x)

    def to_dict(self):
        return dict(self.descriptor)

    def __repr__(self):
        return f"Kernel({self.name})"


def _beurling_re(u):
    return -(u[..., 0] ** 2 - u[..., 1] ** 2) / np.pi


def _beurling_im(u):
    return -2.0 * u[..., 0] * u[..., 1] / np.pi


def beurling_re():
    return Kernel("BeurlingRe", _beurling_re, descriptor={"name": "BeurlingRe"})


def beurling_im():
    return Kernel("BeurlingIm", _beurling_im, descriptor={"name": "BeurlingIm"})


def riesz_second(i, j):
    """x_i x_j / |x|^2 - delta_ij / 2 as a symbol (indices 1 or 2)."""
    if i not in (1, 2) or j not in (1, 2):
        raise ConfigError("Riesz indices must be 1 or 2")
    a, b, dl = i - 1, j - 1, 0.5 if i == j else 0.0

    def om(u):
        return u[..., a] * u[..., b] - dl

    return Kernel(f"RieszSecond_{i}{j}", om, descriptor={"name": "RieszSecond", "i": i, "j": j})


def sampled_kernel(values, name="user", even=None):
    """Kernel from Omega sampled at n >= 256 equispaced angles on [0, 2 pi).

    The samples are made mean-free by subtracting their average; the amount
    removed is kept in ``projection``.  Between nodes a periodic cubic spline
    is used, and a discrete Lipschitz bound of the samples is recorded.
    """
    v = np.asarray(values, dtype=float).ravel()
    n = v.size
    if n < 256:
        raise ConfigError("sampled kernels need at least 256 angle nodes")
    if not np.all(np.isfinite(v)):
        raise ConfigError("kernel samples must be finite")
    mean = float(v.mean())
    v = v - mean
    th = 2 * np.pi * np.arange(n + 1) / n
    spl = CubicSpline(th, np.append(v, v[0]), bc_type="periodic")
    # remove the small mean the spline itself introduces
    xs = np.linspace(0, 2 * np.pi, 8 * n, endpoint=False)
    shift = float(np.mean(spl(xs)))
    lip = float(np.max(np.abs(np.diff(np.append(v, v[0])))) * n / (2 * np.pi))
    if even is None:
        even = n % 2 == 0 and np.allclose(v, np.roll(v, n // 2), atol=1e-12)

    def om(u):
        ang = np.mod(np.arctan2(u[..., 1], u[..., 0]), 2 * np.pi)
        return spl(ang) - shift

    return Kernel(name, om, even=even, projection=mean, lipschitz=lip,
                  descriptor={"name": "sampled", "label": name, "values": (v + mean).tolist()})


def kernel_from_dict(d):
    if isinstance(d, str):
        d = {"name": d}
    name = str(d.get("name", "")).lower()
    if name == "beurlingre":
        return beurling_re()
    if name == "beurlingim":
        return beurling_im()
    if name.startswith("rieszsecond"):
        if "i" in d:
            return riesz_second(int(d["i"]), int(d["j"]))
        suffix = name[len("rieszsecond"):].strip("_")
        if len(suffix) != 2:
            raise ConfigError(f"bad Riesz kernel name {d.get('name')!r}")
        return riesz_second(int(suffix[0]), int(suffix[1]))
    if name == "sampled":
        return sampled_kernel(d["values"], d.get("label", "user"), d.get("even"))
    raise ConfigError(f"unknown kernel {d.get('name')!r}")


def kernel_eval(k, x):
    x = np.asarray(x, dtype=float)
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    if np.any(r2 == 0):
        raise DomainError("kernel is singular at the origin")
    r = np.sqrt(r2)
    out = k.omega(x / r[..., None]) / r2
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# target-adaptive boundary integration

def _panel_geometry(domain, pid, t0, t1):
    tm = 0.5 * (t0 + t1)
    pm, dm = domain.piece_eval(pid, tm)
    p0, _ = domain.piece_eval(pid, t0)
    p1, _ = domain.piece_eval(pid, t1)
    chord = np.hypot(*(p1 - p0).T)
    arc = np.hypot(*dm.T) * (t1 - t0)
    return pm, np.maximum(chord, arc)


def boundary_integral(domain, targets, integrand, ncomp=1, eta=PANEL_ETA):
    """sum over the boundary of integrand(x, nu, y) dS for every target y.

    Panels are split per target until length <= eta * distance(midpoint, y).
    ``integrand`` receives arrays x (n, 16, 2), nu (n, 16, 2), y (n, 1, 2)
    and returns (n, 16) or (n, 16, ncomp).
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    out = np.zeros((targets.shape[0], ncomp))
    base = domain.base_panels()
    nb = base.pid.size
    # geometry of the base panels is shared by all targets
    b_mid, b_len = _panel_geometry(domain, base.pid, base.t0, base.t1)
    bq = geo.panel_nodes(domain, base)
    b_x = bq.points.reshape(nb, -1, 2)
    b_nu = bq.normals.reshape(nb, -1, 2)
    b_w = bq.weights.reshape(nb, -1)
    for s in range(0, targets.shape[0], TARGET_CHUNK):
        ys = targets[s:s + TARGET_CHUNK]
        nt = ys.shape[0]
        acc = np.zeros((nt, ncomp))
        # depth 0 on cached nodes
        tid = np.repeat(np.arange(nt), nb)
        bidx = np.tile(np.arange(nb), nt)
        dist = np.hypot(*(b_mid[bidx] - ys[tid]).T)
        split = b_len[bidx] > eta * dist
        done = ~split
        if np.any(done):
            val = integrand(b_x[bidx[done]], b_nu[bidx[done]], ys[tid[done]][:, None, :])
            if val.ndim == 2:
                val = val[..., None]
            contrib = np.einsum("pk,pkc->pc", b_w[bidx[done]], val)
            for c in range(ncomp):
                acc[:, c] += np.bincount(tid[done], contrib[:, c], minlength=nt)
        sb = bidx[split]
        tid = np.repeat(tid[split], 2)
        pid = np.repeat(base.pid[sb], 2)
        a, b = base.t0[sb], base.t1[sb]
        m = 0.5 * (a + b)
        t0 = np.stack([a, m], 1).ravel()
        t1 = np.stack([m, b], 1).ravel()
        for depth in range(1, MAX_PANEL_DEPTH + 1):
            if tid.size == 0:
                break
            pm, length = _panel_geometry(domain, pid, t0, t1)
            dist = np.hypot(*(pm - ys[tid]).T)
            split = length > eta * dist
            if depth == MAX_PANEL_DEPTH:
                split[:] = False
            done = ~split
            if np.any(done):
                q = geo.panel_nodes(domain, geo.Panels(pid[done], t0[done], t1[done]))
                n = int(done.sum())
                x = q.points.reshape(n, -1, 2)
                nu = q.normals.reshape(n, -1, 2)
                w = q.weights.reshape(n, -1)
                val = integrand(x, nu, ys[tid[done]][:, None, :])
                if val.ndim == 2:
                    val = val[..., None]
                contrib = np.einsum("pk,pkc->pc", w, val)
                for c in range(ncomp):
                    acc[:, c] += np.bincount(tid[done], contrib[:, c], minlength=nt)
            tm = 0.5 * (t0 + t1)
            tid = np.repeat(tid[split], 2)
            pid = np.repeat(pid[split], 2)
            a, m, b = t0[split], tm[split], t1[split]
            t0 = np.stack([a, m], 1).ravel()
            t1 = np.stack([m, b], 1).ravel()
        out[s:s + nt] = acc
    return out


def _tchi_integrand(k):
    def f(x, nu, y):
        z = x - y
        r2 = z[..., 0] ** 2 + z[..., 1] ** 2
        r = np.sqrt(r2)
        om = k.omega(-z / r[..., None])
        return om * np.log(r) * np.einsum("...i,...i->...", z, nu) / r2
    return f


def _grad_integrand(k):
    def f(x, nu, y):
        z = y - x
        r2 = z[..., 0] ** 2 + z[..., 1] ** 2
        kv = k.omega(z / np.sqrt(r2)[..., None]) / r2
        return -kv[..., None] * nu
    return f


def _map_chunks(fn, pts, threads):
    """Apply fn to row chunks of pts, optionally in a thread pool, in order."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if threads is None or threads <= 1 or pts.shape[0] <= TARGET_CHUNK:
        return fn(pts)
    chunks = [pts[i:i + TARGET_CHUNK] for i in range(0, pts.shape[0], TARGET_CHUNK)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(fn, chunks))
    return np.concatenate(parts, axis=0)


def _tchi_boundary(domain, k, pts, tol, threads=None):
    f = _tchi_integrand(k)

    def run(p):
        v1 = boundary_integral(domain, p, f)[:, 0]
        v2 = boundary_integral(domain, p, f, eta=PANEL_ETA / 2)[:, 0]
        return np.stack([v2, np.abs(v2 - v1)], -1)

    res = _map_chunks(run, pts, threads)
    val, err = res[:, 0], res[:, 1]
    bad = err > tol
    if np.any(bad):
        i = int(np.argmax(err))
        raise QuadratureFailure(f"boundary quadrature did not reach tol {tol:g} "
                                f"at {np.asarray(pts).reshape(-1, 2)[i].tolist()}",
                                estimate=float(val[i]), error_bound=float(err[i]))
    return val


def _squeeze(val, shape):
    val = val.reshape(shape + val.shape[1:])
    return float(val) if val.ndim == 0 else val


def pv_tchi(domain, k, y, tol=DEFAULT_TOL, method="boundary", radius=None, threads=None,
            budget=QUADTREE_BUDGET):
    """T chi_D(y) = PV int_D K(y - x) dx for interior points y."""
    y = np.asarray(y, dtype=float)
    shape = y.shape[:-1]
    pts = y.reshape(-1, 2)
    if not np.all(domain.contains(pts)):
        raise DomainError("pv_tchi needs interior points; use pv_tchi_exterior")
    rho = -domain.signed_distance(pts)
    if np.any(rho < COLLAR):
        raise DomainError(f"point closer than {COLLAR:g} to the boundary")
    if method == "boundary":
        return _squeeze(_tchi_boundary(domain, k, pts, tol, threads), shape)
    if method == "quadtree":
        r = 0.5 * rho if radius is None else np.broadcast_to(np.asarray(radius, float), rho.shape)
        if np.any(r > rho):
            raise DomainError("cancellation radius must not exceed the distance to the boundary")
        vals = np.array([quadtree_integral(domain, k, p, rr, tol, budget) for p, rr in zip(pts, r)])
        return _squeeze(vals, shape)
    raise ConfigError(f"unknown method {method!r}")


def pv_tchi_exterior(domain, k, y, tol=DEFAULT_TOL, method="boundary", threads=None,
                     budget=QUADTREE_BUDGET):
    """int_D K(y - x) dx for points y outside the closure of D."""
    y = np.asarray(y, dtype=float)
    shape = y.shape[:-1]
    pts = y.reshape(-1, 2)
    if np.any(domain.contains(pts)):
        raise DomainError("pv_tchi_exterior needs exterior points")
    if np.any(domain.signed_distance(pts) < COLLAR):
        raise DomainError(f"point closer than {COLLAR:g} to the boundary")
    if method == "boundary":
        return _squeeze(_tchi_boundary(domain, k, pts, tol, threads), shape)
    if method == "quadtree":
        vals = np.array([quadtree_integral(domain, k, p, 0.0, tol, budget) for p in pts])
        return _squeeze(vals, shape)
    raise ConfigError(f"unknown method {method!r}")


def grad_tchi_boundary(domain, k, y, refinement=0, threads=None):
    """Gradient of T chi_D at interior points from the boundary formula."""
    y = np.asarray(y, dtype=float)
    shape = y.shape[:-1]
    pts = y.reshape(-1, 2)
    if np.any(np.abs(domain.signed_distance(pts)) < 1e-12):
        raise DomainError("gradient target lies on the boundary")
    eta = PANEL_ETA / 2 ** refinement
    f = _grad_integrand(k)
    res = _map_chunks(lambda p: boundary_integral(domain, p, f, ncomp=2, eta=eta), pts, threads)
    return res.reshape(shape + (2,))


def cancellation_report(ball, k, probes, tol=DEFAULT_TOL, threads=None):
    """Largest |T chi_B| over interior probes of a ball (vanishes for even kernels)."""
    if not isinstance(ball, geo.Ball):
        raise ConfigError("cancellation_report needs a Ball domain")
    if not k.even:
        raise ConfigError("extra cancellation holds for even kernels only")
    probes = np.asarray(probes, dtype=float).reshape(-1, 2)
    rho = -ball.signed_distance(probes)
    if np.any(rho < ball.radius / 10):
        raise DomainError("probes must keep distance radius/10 from the sphere")
    vals = pv_tchi(ball, k, probes, tol=tol, threads=threads)
    vals = np.atleast_1d(vals)
    i = int(np.argmax(np.abs(vals)))
    return {"max_abs": float(abs(vals[i])), "argmax": probes[i].tolist(),
            "values": vals, "kernel": k.name, "n_probes": int(probes.shape[0])}


# ---------------------------------------------------------------------------
# quadtree area quadrature

def _box_point_dist(lo, hi, y):
    d = np.maximum(0.0, np.maximum(lo - y, y - hi))
    return np.hypot(d[:, 0], d[:, 1])


def _box_point_far(lo, hi, y):
    d = np.maximum(np.abs(lo - y), np.abs(hi - y))
    return np.hypot(d[:, 0], d[:, 1])


def _quadtree_pass(domain, k, y, r, max_depth, budget, nsub=8, weight=None):
    lo0, hi0 = domain.bbox
    side = float(np.max(hi0 - lo0)) * (1 + 1e-9)
    lo = lo0[None, :].astype(float)
    h = side
    total = 0.0
    cells = 0
    for depth in range(max_depth + 1):
        n = lo.shape[0]
        cells += n
        if cells > budget:
            raise QuadratureFailure("quadtree cell budget exhausted", estimate=total)
        hi = lo + h
        dmin = _box_point_dist(lo, hi, y)
        dmax = _box_point_far(lo, hi, y)
        keep = dmax > r                             # not entirely inside the ball
        lo, hi, dmin = lo[keep], hi[keep], dmin[keep]
        bd = domain.box_distance(lo, hi)
        center = lo + 0.5 * h
        clean = bd > 0
        inside = clean & domain.contains(center)
        keep = ~clean | inside                      # drop cells fully outside D
        lo, hi, dmin, inside = lo[keep], hi[keep], dmin[keep], inside[keep]
        off_ball = dmin >= r
        smooth = dmin >= 2.0 * h * math.sqrt(2.0)
        ok = inside & off_ball & smooth & (dmin > 0)
        if np.any(ok):
            xs = lo[ok][:, None, None, :] + 0.5 * h * (1 + np.stack(np.meshgrid(_GL4_X, _GL4_X, indexing="ij"), -1))[None]
            w = np.outer(_GL4_W, _GL4_W) * (0.5 * h) ** 2
            kv = kernel_eval(k, y - xs)
            if weight is not None:
                kv = kv * weight(xs)
            total += float(np.sum(kv * w))
        rest = ~ok
        lo = lo[rest]
        if depth == max_depth:
            # membership-weighted midpoint rule on the unresolved cells
            u = (np.arange(nsub) + 0.5) / nsub
            g = np.stack(np.meshgrid(u, u, indexing="ij"), -1).reshape(-1, 2)
            for s in range(0, lo.shape[0], 4096):
                pts = lo[s:s + 4096, None, :] + h * g[None]
                z = y - pts
                rr = np.hypot(z[..., 0], z[..., 1])
                m = domain.contains(pts.reshape(-1, 2)).reshape(rr.shape) & (rr > max(r, 1e-300))
                with np.errstate(divide="ignore", invalid="ignore"):
                    kv = np.where(m, k.omega(z / np.where(rr > 0, rr, 1)[..., None]) / np.where(rr > 0, rr, 1) ** 2, 0.0)
                if weight is not None:
                    kv = kv * np.where(m, weight(pts), 0.0)
                total += float(np.sum(kv) * (h / nsub) ** 2)
            break
        # subdivide
        c = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float) * (0.5 * h)
        lo = (lo[:, None, :] + c[None]).reshape(-1, 2)
        h *= 0.5
    return total, cells


def quadtree_integral(domain, k, y, r, tol=1e-6, budget=QUADTREE_BUDGET, start_depth=6, max_depth=24):
    """int over D minus B_r(y) of K(y - x) dx by a graded quadtree.

    The deepest level is raised until two consecutive estimates agree to tol.
    """
    y = np.asarray(y, dtype=float)
    prev = None
    used = 0
    for L in range(start_depth, max_depth + 1):
        val, cells = _quadtree_pass(domain, k, y, float(r), L, budget - used)
        used += cells
        if prev is not None and abs(val - prev) < tol:
            return val
        prev = val
    raise QuadratureFailure("quadtree did not converge", estimate=prev,
                            error_bound=abs(val - prev) if prev is not None else None)
