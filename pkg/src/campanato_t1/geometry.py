"""Dyadic cubes, scalar fields and bounded planar domains.

Every domain exposes membership, signed distance (negative inside), exact
distance from an axis-parallel box to its boundary, and a boundary made of
parametrized pieces traversed counterclockwise.  Boundary integrals are
built from Gauss-Legendre panels on those pieces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from . import moduli
from .errors import CapabilityError, DomainError, GeometryError

GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


# ---------------------------------------------------------------------------
# cubes

@dataclass(frozen=True, order=True)
class DyadicCube:
    level: int
    i: int
    j: int

    @property
    def side(self):
        return math.ldexp(1.0, self.level)

    @property
    def lo(self):
        s = self.side
        return np.array([self.i * s, self.j * s])

    @property
    def hi(self):
        return self.lo + self.side

    @property
    def center(self):
        return self.lo + 0.5 * self.side

    @property
    def diam(self):
        return self.side * math.sqrt(2.0)

    def children(self):
        k, i, j = self.level - 1, 2 * self.i, 2 * self.j
        return [DyadicCube(k, i, j), DyadicCube(k, i + 1, j),
                DyadicCube(k, i, j + 1), DyadicCube(k, i + 1, j + 1)]

    def dilate(self, s):
        return dilate(self, s)

    def key(self):
        return (self.level, self.i, self.j)


@dataclass(frozen=True)
class GeneralCube:
    center: tuple
    side: float

    def __post_init__(self):
        if not self.side > 0:
            raise DomainError("cube side must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def lo(self):
        return np.asarray(self.center) - 0.5 * self.side

    @property
    def hi(self):
        return np.asarray(self.center) + 0.5 * self.side

    @property
    def diam(self):
        return self.side * math.sqrt(2.0)

    def dilate(self, s):
        return dilate(self, s)


def dilate(q, s):
    """sQ: same center, side s * side(Q)."""
    if not s > 0:
        raise DomainError("dilation factor must be positive")
    return GeneralCube(tuple(q.center), s * q.side)


def box_box_distance(lo1, hi1, lo2, hi2):
    gap = np.maximum(0.0, np.maximum(lo1 - hi2, lo2 - hi1))
    return np.hypot(gap[..., 0], gap[..., 1])


# ---------------------------------------------------------------------------
# scalar fields

class ScalarField:
    """A real function on the plane, evaluated on arrays of shape (..., 2)."""

    def __init__(self, fn, grad=None, bbox=None, resolution=None, name=""):
        self._fn = fn
        self._grad = grad
        self.bbox = bbox
        self.resolution = resolution
        self.name = name

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.asarray(self._fn(pts), dtype=float)

    @property
    def has_gradient(self):
        return self._grad is not None

    def gradient(self, pts):
        if self._grad is None:
            raise CapabilityError(f"field {self.name or '?'} has no gradient")
        return np.asarray(self._grad(np.asarray(pts, dtype=float)), dtype=float)

    def __repr__(self):
        return f"ScalarField({self.name or 'anonymous'})"


def constant_field(c=1.0):
    return ScalarField(lambda p: np.full(p.shape[:-1], float(c)),
                       lambda p: np.zeros(p.shape), name=f"const({c})")


def coordinate_field(axis=0):
    def grad(p):
        g = np.zeros(p.shape)
        g[..., axis] = 1.0
        return g
    return ScalarField(lambda p: p[..., axis].copy(), grad, name=f"x{axis + 1}")


# ---------------------------------------------------------------------------
# boundary pieces

def _smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def _smooth_step_deriv(u):
    inside = (u > 0) & (u < 1)
    uu = np.where(inside, u, 0.5)
    a = np.exp(-1.0 / uu)
    b = np.exp(-1.0 / (1.0 - uu))
    da = a / uu ** 2
    db = -b / (1.0 - uu) ** 2
    s = a + b
    return np.where(inside, (da * s - a * (da + db)) / s ** 2, 0.0)


class ArcPiece:
    def __init__(self, center, radius, theta0, theta1, nbase=None):
        self.c = np.asarray(center, dtype=float)
        self.r = float(radius)
        self.t0, self.t1 = float(theta0), float(theta1)
        n = nbase or max(4, int(math.ceil(abs(theta1 - theta0) / (math.pi / 8))))
        self.breaks = np.linspace(0.0, 1.0, n + 1)

    def point(self, t):
        th = self.t0 + t * (self.t1 - self.t0)
        return np.stack([self.c[0] + self.r * np.cos(th), self.c[1] + self.r * np.sin(th)], -1)

    def deriv(self, t):
        th = self.t0 + t * (self.t1 - self.t0)
        k = self.r * (self.t1 - self.t0)
        return np.stack([-k * np.sin(th), k * np.cos(th)], -1)


class SegmentPiece:
    def __init__(self, a, b, grade=6):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        g = 0.5 ** np.arange(1, grade + 1)
        self.breaks = np.unique(np.concatenate([[0.0, 1.0], g, 1.0 - g]))

    def point(self, t):
        t = np.asarray(t)[..., None]
        return self.a + t * (self.b - self.a)

    def deriv(self, t):
        return np.broadcast_to(self.b - self.a, np.shape(t) + (2,)).copy()


class GraphPiece:
    """(s, g(s)) for s running from s0 to s1, with grading toward s = 0."""

    def __init__(self, s0, s1, g, dg, knots=(), grade=40):
        self.s0, self.s1 = float(s0), float(s1)
        self.g, self.dg = g, dg
        span = self.s1 - self.s0
        br = [0.0, 1.0] + [(k - self.s0) / span for k in knots if min(s0, s1) < k < max(s0, s1)]
        br += list(np.linspace(0, 1, 9))
        base = np.unique(np.array(br))
        if self.s0 == 0.0 or self.s1 == 0.0:
            # geometric grading at the tangency point
            first = base[base > 0].min() if self.s0 == 0.0 else 1 - base[base < 1].max()
            geo = first * 0.5 ** np.arange(1, grade + 1)
            base = np.unique(np.concatenate([base, geo if self.s0 == 0.0 else 1 - geo]))
        self.breaks = base

    def _s(self, t):
        return self.s0 + np.asarray(t) * (self.s1 - self.s0)

    def point(self, t):
        s = self._s(t)
        return np.stack([s, self.g(s)], -1)

    def deriv(self, t):
        s = self._s(t)
        k = self.s1 - self.s0
        return np.stack([np.full(s.shape, k), k * self.dg(s)], -1)


@dataclass
class Panels:
    """A batch of boundary panels: piece index and parameter interval."""
    pid: np.ndarray
    t0: np.ndarray
    t1: np.ndarray


@dataclass
class BoundaryQuadrature:
    points: np.ndarray      # (n, 2)
    normals: np.ndarray     # (n, 2), unit outward
    weights: np.ndarray     # (n,), arc length

    def __len__(self):
        return self.weights.size

    def __iter__(self):
        return iter(zip(self.points, self.normals, self.weights))


@dataclass
class Window:
    """An R-window: local frame with boundary given by xi2 = A(xi1)."""
    origin: np.ndarray
    rotation: np.ndarray    # rows: tangent e1, inward normal e2
    size: float
    xs: np.ndarray
    A: np.ndarray
    delta: float
    slope: float

    def to_local(self, pts):
        return (np.asarray(pts) - self.origin) @ self.rotation.T

    def to_world(self, pts):
        return np.asarray(pts) @ self.rotation + self.origin


# ---------------------------------------------------------------------------
# polyline helper

def _point_segment_dist(p, a, b):
    ab = b - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.einsum("...i,...i->...", p - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[..., None] * ab
    d = p - proj
    return np.hypot(d[..., 0], d[..., 1]), t


def _point_box_dist(p, lo, hi):
    d = np.maximum(0.0, np.maximum(lo - p, p - hi))
    return np.hypot(d[..., 0], d[..., 1])


def _segment_hits_box(a, b, lo, hi):
    """Liang-Barsky test, vectorized over broadcast shapes."""
    d = b - a
    t0 = np.zeros(np.broadcast_shapes(a.shape[:-1], lo.shape[:-1]))
    t1 = np.ones_like(t0)
    ok = np.ones(t0.shape, dtype=bool)
    for k in range(2):
        dk = d[..., k]
        for p, q in ((-dk, a[..., k] - lo[..., k]), (dk, hi[..., k] - a[..., k])):
            p = np.broadcast_to(p, t0.shape)
            q = np.broadcast_to(q, t0.shape)
            par = p == 0
            ok &= ~(par & (q < 0))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(par, 0.0, q / np.where(par, 1.0, p))
            t0 = np.where(~par & (p < 0), np.maximum(t0, r), t0)
            t1 = np.where(~par & (p > 0), np.minimum(t1, r), t1)
    return ok & (t0 <= t1)


class _Polyline:
    def __init__(self, verts, pid=None, tpar=None):
        self.v = np.asarray(verts, dtype=float)
        self.a = self.v
        self.b = np.roll(self.v, -1, axis=0)
        self.pid, self.tpar = pid, tpar
        self.mid = 0.5 * (self.a + self.b)
        seg = self.b - self.a
        self.len = np.hypot(seg[:, 0], seg[:, 1])
        self.maxlen = float(self.len.max())
        self.small = self.a.shape[0] <= 64
        self.tree = None if self.small else cKDTree(self.mid)

    def _pairs(self, centers, radii):
        lists = self.tree.query_ball_point(centers, radii)
        counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
        seg = np.fromiter((j for x in lists for j in x), dtype=np.int64, count=int(counts.sum()))
        owner = np.repeat(np.arange(len(lists)), counts)
        return owner, seg, counts

    def distance(self, p, return_segment=False):
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        if self.small:
            d, _ = _point_segment_dist(p[:, None, :], self.a[None], self.b[None])
            k = np.argmin(d, axis=1)
            out = d[np.arange(p.shape[0]), k]
            return (out, k) if return_segment else out
        kq = min(16, self.a.shape[0])
        dm, cand = self.tree.query(p, k=kq)
        d, _ = _point_segment_dist(p[:, None, :], self.a[cand], self.b[cand])
        j = np.argmin(d, axis=1)
        rows = np.arange(p.shape[0])
        out, best = d[rows, j], cand[rows, j]
        # a segment outside the candidate set is at least dm[:, -1] - maxlen/2 away;
        # fall back to a radius search only when that bound is not conclusive
        # at the level of one segment length
        loose = np.nonzero(dm[:, -1] - 0.5 * self.maxlen < out - self.maxlen)[0]
        if loose.size:
            owner, seg, counts = self._pairs(p[loose], out[loose] + 0.5 * self.maxlen + 1e-15)
            dd, _ = _point_segment_dist(p[loose][owner], self.a[seg], self.b[seg])
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            order = np.lexsort((dd, owner))
            out[loose] = dd[order[starts]]
            best[loose] = seg[order[starts]]
        return (out, best) if return_segment else out

    def box_distance(self, lo, hi):
        lo = np.asarray(lo, dtype=float).reshape(-1, 2)
        hi = np.asarray(hi, dtype=float).reshape(-1, 2)
        c = 0.5 * (lo + hi)
        if self.small:
            L, H = lo[:, None, :], hi[:, None, :]
            A, B = self.a[None], self.b[None]
            hit = _segment_hits_box(A, B, L, H).any(axis=1)
            dA = _point_box_dist(A, L, H)
            dB = _point_box_dist(B, L, H)
            corners = [np.stack([lo[:, 0], lo[:, 1]], -1), np.stack([hi[:, 0], lo[:, 1]], -1),
                       np.stack([lo[:, 0], hi[:, 1]], -1), np.stack([hi[:, 0], hi[:, 1]], -1)]
            dc = [_point_segment_dist(q[:, None, :], A, B)[0] for q in corners]
            d = np.minimum(np.minimum(dA, dB), np.minimum.reduce(dc)).min(axis=1)
            return np.where(hit, 0.0, d)
        h = 0.5 * np.hypot(*(hi - lo).T)
        ub = self.distance(c)
        owner, seg, counts = self._pairs(c, ub + h + 0.5 * self.maxlen + 1e-15)
        L, H = lo[owner], hi[owner]
        A, B = self.a[seg], self.b[seg]
        hit = _segment_hits_box(A, B, L, H)
        d = np.minimum(_point_box_dist(A, L, H), _point_box_dist(B, L, H))
        for q in (L, H, np.stack([L[:, 0], H[:, 1]], -1), np.stack([H[:, 0], L[:, 1]], -1)):
            d = np.minimum(d, _point_segment_dist(q, A, B)[0])
        d = np.where(hit, 0.0, d)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        return np.minimum.reduceat(d, starts)

    def vertical_crossings(self, xs, ymax):
        """For each abscissa in xs (local frame), y-values where the polyline meets x = const."""
        out = []
        a, b = self.a, self.b
        for x in xs:
            lo = np.minimum(a[:, 0], b[:, 0])
            hi = np.maximum(a[:, 0], b[:, 0])
            sel = (lo <= x) & (x < hi) | ((lo == hi) & (lo == x))
            ys = []
            for k in np.nonzero(sel)[0]:
                if b[k, 0] == a[k, 0]:
                    ys.extend([a[k, 1], b[k, 1]])
                else:
                    t = (x - a[k, 0]) / (b[k, 0] - a[k, 0])
                    ys.append(a[k, 1] + t * (b[k, 1] - a[k, 1]))
            ys = [y for y in ys if abs(y) <= ymax * (1 + 1e-9) + 1e-15]
            out.append(ys)
        return out


# ---------------------------------------------------------------------------
# domains

WINDOW_HEIGHT = 4.0

class Domain:
    """Common interface; subclasses provide pieces, membership and distances."""

    kind = "domain"
    pieces: list

    # -- to be provided by subclasses -------------------------------------
    def contains(self, x):
        raise NotImplementedError

    def _unsigned_distance(self, x):
        raise NotImplementedError

    def box_distance(self, lo, hi):
        """Euclidean distance from the closed boxes [lo, hi] to the boundary."""
        raise NotImplementedError

    # -- shared behaviour --------------------------------------------------
    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        flat = x.reshape(-1, 2)
        d = self._unsigned_distance(flat)
        s = np.where(self.contains(flat), -d, d).reshape(shape)
        return float(s) if s.ndim == 0 else s

    def distance_to_boundary(self, x):
        return np.abs(self.signed_distance(x))

    def box_inside(self, lo, hi):
        """True where the closed box lies in the open domain."""
        lo = np.asarray(lo, dtype=float).reshape(-1, 2)
        hi = np.asarray(hi, dtype=float).reshape(-1, 2)
        c = 0.5 * (lo + hi)
        return self.contains(c) & (self.box_distance(lo, hi) > 0)

    @property
    def diameter(self):
        lo, hi = self.bbox
        return float(np.hypot(*(hi - lo)))

    def piece_eval(self, pid, t):
        pid = np.asarray(pid)
        t = np.asarray(t, dtype=float)
        pts = np.empty(t.shape + (2,))
        der = np.empty(t.shape + (2,))
        for k, pc in enumerate(self.pieces):
            m = pid == k
            if np.any(m):
                pts[m] = pc.point(t[m])
                der[m] = pc.deriv(t[m])
        return pts, der

    def base_panels(self):
        pid, t0, t1 = [], [], []
        for k, pc in enumerate(self.pieces):
            br = pc.breaks
            pid.append(np.full(br.size - 1, k))
            t0.append(br[:-1])
            t1.append(br[1:])
        return Panels(np.concatenate(pid), np.concatenate(t0), np.concatenate(t1))

    def boundary_quadrature(self, refinement=0):
        """Gauss-Legendre nodes on the base panels split 2**refinement times."""
        if refinement < 0:
            raise DomainError("refinement must be >= 0")
        bp = self.base_panels()
        n = 2 ** refinement
        frac = np.arange(n + 1) / n
        t0 = (bp.t0[:, None] + (bp.t1 - bp.t0)[:, None] * frac[None, :-1]).ravel()
        t1 = (bp.t0[:, None] + (bp.t1 - bp.t0)[:, None] * frac[None, 1:]).ravel()
        pid = np.repeat(bp.pid, n)
        return panel_nodes(self, Panels(pid, t0, t1))

    @cached_property
    def polyline(self):
        verts, pid, tp = [], [], []
        for k, pc in enumerate(self.pieces):
            t = self._polyline_params(pc)
            verts.append(pc.point(t[:-1]))
            pid.append(np.full(t.size - 1, k))
            tp.append(t[:-1])
        return _Polyline(np.concatenate(verts), np.concatenate(pid), np.concatenate(tp))

    def _polyline_params(self, pc):
        if isinstance(pc, SegmentPiece):
            return np.array([0.0, 1.0])
        ts = []
        for a, b in zip(pc.breaks[:-1], pc.breaks[1:]):
            ts.append(np.linspace(a, b, 33)[:-1])
        ts.append([1.0])
        return np.concatenate(ts)

    @cached_property
    def perimeter(self):
        return float(self.boundary_quadrature(2).weights.sum())

    @cached_property
    def area(self):
        q = self.boundary_quadrature(2)
        return float(0.5 * np.sum(np.einsum("ij,ij->i", q.points, q.normals) * q.weights))

    # -- windows -------------------------------------------------------------
    def _frame_at(self, a):
        raise NotImplementedError

    def window_at(self, a, size=None, nsamples=201):
        """R-window centred at the boundary point a."""
        a = np.asarray(a, dtype=float)
        if abs(self.signed_distance(a)) > 1e-9:
            raise DomainError(f"point {a.tolist()} is not on the boundary")
        R = self.window_size if size is None else float(size)
        rot = self._frame_at(a)
        pl0 = self.polyline
        la = (pl0.a - a) @ rot.T
        lb = (pl0.b - a) @ rot.T
        # the window is a box of half-width R/2 and half-height WINDOW_HEIGHT * R/2,
        # tall enough for graphs steeper than slope 1 (acute polygon corners)
        H = getattr(self, "window_height", WINDOW_HEIGHT) * 0.5 * R
        box = np.array([0.75 * R, 1.5 * H])
        keep = _segment_hits_box(la, lb, -box[None], box[None])
        pl = _Polyline.__new__(_Polyline)
        pl.a, pl.b = la[keep], lb[keep]
        xs = np.linspace(-0.5 * R, 0.5 * R, nsamples)
        crossings = pl.vertical_crossings(xs, H)
        A = np.empty(nsamples)
        for n, ys in enumerate(crossings):
            ys = np.unique(np.round(ys, 13))
            if ys.size != 1:
                raise GeometryError(f"boundary is not a graph in the window at {a.tolist()} "
                                    f"(abscissa {xs[n]:.3g}: {ys.size} crossings)")
            A[n] = ys[0]
        slope = float(np.max(np.abs(np.diff(A) / np.diff(xs))))
        if slope > self.lipschitz_delta * (1 + 1e-6) + 1e-12:
            raise GeometryError(f"window slope {slope:.4g} exceeds delta {self.lipschitz_delta:.4g}")
        return Window(a, rot, R, xs, A, self.lipschitz_delta, slope)

    def _estimate_delta(self, probes):
        worst = 0.0
        saved = getattr(self, "lipschitz_delta", None)
        self.lipschitz_delta = np.inf
        try:
            for a in probes:
                worst = max(worst, self.window_at(a).slope)
        finally:
            self.lipschitz_delta = saved
        return worst

    def to_dict(self):
        raise NotImplementedError

    def translated(self, v):
        raise NotImplementedError


class Ball(Domain):
    kind = "ball"

    def __init__(self, center=(0.0, 0.0), radius=1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")
        self.pieces = [ArcPiece(self.center, self.radius, 0.0, 2 * math.pi, nbase=16)]
        self.bbox = (self.center - self.radius, self.center + self.radius)
        self.window_size = 0.5 * self.radius
        self.lipschitz_delta = 1.0 / math.sqrt(15.0)

    def _polyline_params(self, pc):
        return np.linspace(0.0, 1.0, 8193)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        d = x - self.center
        return np.hypot(d[..., 0], d[..., 1]) < self.radius

    def _unsigned_distance(self, x):
        d = x - self.center
        return np.abs(np.hypot(d[..., 0], d[..., 1]) - self.radius)

    def box_distance(self, lo, hi):
        lo = np.asarray(lo, dtype=float).reshape(-1, 2)
        hi = np.asarray(hi, dtype=float).reshape(-1, 2)
        near = _point_box_dist(self.center, lo, hi)
        far = np.hypot(np.maximum(np.abs(lo - self.center), np.abs(hi - self.center))[:, 0],
                       np.maximum(np.abs(lo - self.center), np.abs(hi - self.center))[:, 1])
        inside = far <= self.radius
        outside = near >= self.radius
        return np.where(inside, self.radius - far, np.where(outside, near - self.radius, 0.0))

    @property
    def area(self):
        return math.pi * self.radius ** 2

    @property
    def perimeter(self):
        return 2 * math.pi * self.radius

    def _frame_at(self, a):
        n = self.center - a
        n = n / np.hypot(*n)
        return np.array([[n[1], -n[0]], n])

    def to_dict(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}

    def translated(self, v):
        return Ball(self.center + np.asarray(v), self.radius)


def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2))
            or (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2)))


class Polygon(Domain):
    kind = "polygon"

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise DomainError("polygon needs at least three 2-d vertices")
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        n = v.shape[0]
        signed = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if abs(signed) < 1e-14:
            raise DomainError("polygon has zero area")
        if signed < 0:
            v = v[::-1].copy()
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise DomainError(f"polygon is not simple: edges {i} and {j} intersect")
        lens = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
        if np.any(lens < 1e-14):
            raise DomainError("polygon has repeated vertices")
        v.setflags(write=False)
        self.vertices = v
        self.pieces = [SegmentPiece(v[i], v[(i + 1) % n]) for i in range(n)]
        self.bbox = (v.min(axis=0), v.max(axis=0))
        sep = lens.min()
        for i in range(n):
            for j in range(n):
                if j in (i, (i + 1) % n, (i - 1) % n):
                    continue
                d1, _ = _point_segment_dist(v[j], v[i], v[(i + 1) % n])
                sep = min(sep, float(d1))
        self.window_size = 0.25 * sep
        e_in = v - np.roll(v, 1, axis=0)
        e_out = np.roll(v, -1, axis=0) - v
        turn = np.arctan2(e_in[:, 0] * e_out[:, 1] - e_in[:, 1] * e_out[:, 0],
                          np.einsum("ij,ij->i", e_in, e_out))
        opening = np.pi - np.abs(turn)          # min(angle, 2 pi - angle) at each vertex
        self.window_height = max(WINDOW_HEIGHT, 1.25 / math.tan(0.5 * float(opening.min())))
        probes = list(v) + [0.5 * (v[i] + v[(i + 1) % n]) for i in range(n)]
        self.lipschitz_delta = self._estimate_delta(probes)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        px, py = x[..., 0][..., None], x[..., 1][..., None]
        a, b = self.vertices, np.roll(self.vertices, -1, axis=0)
        cond = (a[:, 1] > py) != (b[:, 1] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = a[:, 0] + (py - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
        return (np.count_nonzero(cond & (px < xint), axis=-1) % 2) == 1

    def _unsigned_distance(self, x):
        return self.polyline.distance(x)

    def box_distance(self, lo, hi):
        return self.polyline.box_distance(lo, hi)

    @cached_property
    def polyline(self):
        n = self.vertices.shape[0]
        return _Polyline(self.vertices, np.arange(n), np.zeros(n))

    @property
    def area(self):
        v = self.vertices
        return float(0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))

    @property
    def perimeter(self):
        return float(np.sum(np.hypot(*(np.roll(self.vertices, -1, axis=0) - self.vertices).T)))

    def _frame_at(self, a):
        v = self.vertices
        n = v.shape[0]
        dv = np.hypot(*(v - a).T)
        k = int(np.argmin(dv))
        if dv[k] < self.window_size:
            e_in = v[k] - v[k - 1]
            e_out = v[(k + 1) % n] - v[k]
            nrm = (np.array([-e_in[1], e_in[0]]) / np.hypot(*e_in)
                   + np.array([-e_out[1], e_out[0]]) / np.hypot(*e_out))
        else:
            d, _ = _point_segment_dist(a, v, np.roll(v, -1, axis=0))
            e = int(np.argmin(d))
            t = v[(e + 1) % n] - v[e]
            nrm = np.array([-t[1], t[0]])
        nrm = nrm / np.hypot(*nrm)
        return np.array([[nrm[1], -nrm[0]], nrm])

    def to_dict(self):
        return {"type": "polygon", "vertices": self.vertices.tolist()}

    def translated(self, v):
        return Polygon(self.vertices + np.asarray(v))


def unit_square():
    return Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])


def notched_square(width=0.2, depth=0.5):
    a, b = 0.5 - width / 2, 0.5 + width / 2
    return Polygon([(0, 0), (1, 0), (1, 1), (b, 1), (b, 1 - depth),
                    (a, 1 - depth), (a, 1), (0, 1)])


class GraphPerturbedDisk(Domain):
    """Disk of radius ``radius`` resting on the origin whose bottom arc is
    replaced near 0 by the graph x2 = c0 |x1| w(|x1|).

    For |x1| <= r0 the graph is exactly c0|x1|w(|x1|); on [r0, 2 r0] it is
    blended with a smooth step into the circle, which it joins at
    |x1| = radius * sin(60 deg).  The tangency point is the origin and the
    inward normal there is +x2.
    """
    kind = "graph_disk"

    def __init__(self, modulus, c0=0.5, r0=0.25, radius=1.0, offset=(0.0, 0.0)):
        self.modulus = modulus
        self.c0, self.r0, self.radius = float(c0), float(r0), float(radius)
        self.offset = np.asarray(offset, dtype=float)
        self.r1 = 2.0 * self.r0
        self.s1 = self.radius * math.sin(math.pi / 3)
        if not (0 < self.r0 and self.r1 < self.s1 and self.r1 <= 1.0):
            raise DomainError("graph disk needs 0 < 2 r0 < radius sin(60deg) and r0 <= 1/2")
        if self.c0 <= 0:
            raise DomainError("c0 must be positive")
        ox, oy = self.offset
        self.center = np.array([ox, oy + self.radius])

        def g(s):
            return oy + self._g(np.asarray(s, dtype=float) - ox)

        def dg(s):
            return self._dg(np.asarray(s, dtype=float) - ox)

        knots = [ox - self.r1, ox - self.r0, ox + self.r0, ox + self.r1]
        self.pieces = [
            GraphPiece(ox - self.s1, ox, g, dg, knots),
            GraphPiece(ox, ox + self.s1, g, dg, knots),
            ArcPiece(self.center, self.radius, -math.pi / 6, 7 * math.pi / 6, nbase=24),
        ]
        self.bbox = (np.array([ox - self.radius, oy]), np.array([ox + self.radius, oy + 2 * self.radius]))
        self.window_size = self.r0
        self.tangency = self.offset.copy()
        probes = [self.tangency] + [self._boundary_point(k) for k in np.linspace(0.02, 0.98, 25)]
        self.lipschitz_delta = self._estimate_delta(probes)

    def _boundary_point(self, frac):
        t = np.asarray([frac * 3 % 1.0])
        pc = self.pieces[min(int(frac * 3), 2)]
        return pc.point(t)[0]

    # graph function in offset-free coordinates
    def _A(self, s):
        a = np.abs(s)
        pos = a > 0
        w = self.modulus.eval(np.where(pos, np.minimum(a, self.r1), self.r1))
        return np.where(pos, self.c0 * a * w, 0.0)

    def _dA(self, s):
        a = np.abs(s)
        pos = a > 0
        aa = np.where(pos, np.minimum(a, self.r1), self.r1)
        m = self.modulus
        d = self.c0 * (m.eval(aa) + aa * m.deriv(aa))
        if m.family == "constant":
            d0 = 0.0
        else:
            d0 = 0.0
        return np.where(pos, np.sign(s) * d, d0)

    def _C(self, s):
        return self.radius - np.sqrt(np.maximum(self.radius ** 2 - s ** 2, 0.0))

    def _dC(self, s):
        return s / np.sqrt(np.maximum(self.radius ** 2 - s ** 2, 1e-300))

    def _chi(self, s):
        return _smooth_step((np.abs(s) - self.r0) / (self.r1 - self.r0))

    def _g(self, s):
        chi = self._chi(s)
        return (1 - chi) * self._A(s) + chi * self._C(s)

    def _dg(self, s):
        chi = self._chi(s)
        dchi = np.sign(s) * _smooth_step_deriv((np.abs(s) - self.r0) / (self.r1 - self.r0)) / (self.r1 - self.r0)
        return (1 - chi) * self._dA(s) + chi * self._dC(s) + dchi * (self._C(s) - self._A(s))

    def graph(self, s):
        """Boundary height A(x') in the window at the tangency point."""
        return self._g(np.asarray(s, dtype=float))

    def graph_bound(self, s):
        s = np.abs(np.asarray(s, dtype=float))
        return self.c0 * s * self.modulus.eval(np.clip(s, 1e-300, 1.0))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        X = x[..., 0] - self.offset[0]
        Y = x[..., 1] - self.offset[1]
        in_circle = np.hypot(X, Y - self.radius) < self.radius
        lower = (np.abs(X) <= self.s1) & (Y < self.radius)
        above = Y > self._g(np.where(lower, X, 0.0))
        return np.where(lower, above, in_circle)

    def _polyline_params(self, pc):
        if isinstance(pc, ArcPiece):
            return np.linspace(0.0, 1.0, 4097)
        ts = []
        for a, b in zip(pc.breaks[:-1], pc.breaks[1:]):
            n = 8 if (b - a) < 0.02 else int(math.ceil((b - a) * 2048))
            ts.append(np.linspace(a, b, n + 1)[:-1])
        ts.append([1.0])
        return np.concatenate(ts)

    def _unsigned_distance(self, x):
        pl = self.polyline
        d, seg = pl.distance(x, return_segment=True)
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        nseg = pl.a.shape[0]
        k = seg
        pid = pl.pid[k]
        prev, nxt, nxt2 = (k - 1) % nseg, (k + 1) % nseg, (k + 2) % nseg
        t_lo = np.where(pl.pid[prev] == pid, pl.tpar[prev], pl.tpar[k])
        t_hi = np.where(pl.pid[nxt] == pid,
                        np.where(pl.pid[nxt2] == pid, pl.tpar[nxt2], 1.0), 1.0)
        t_hi = np.where(t_hi <= t_lo, 1.0, t_hi)
        return np.minimum(d, self._golden(x, pid, t_lo, t_hi))

    def _golden(self, x, pid, a, b, iters=48):
        """Golden-section refinement of |p(t) - x| on [a, b] within one piece."""
        gr = (math.sqrt(5) - 1) / 2
        a, b = a.astype(float).copy(), b.astype(float).copy()

        def f(t):
            p, _ = self.piece_eval(pid, t)
            return np.hypot(*(p - x).T)

        c = b - gr * (b - a)
        d = a + gr * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(iters):
            left = fc < fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            c_new = b - gr * (b - a)
            d_new = a + gr * (b - a)
            # reuse one evaluation per branch
            c, d = np.where(left, c_new, d), np.where(left, c, d_new)
            fd_new = np.where(left, fc, np.nan)
            fc_new = np.where(left, np.nan, fd)
            need_c = left
            need_d = ~left
            fc = np.where(need_c, f(c), fc_new)
            fd = np.where(need_d, f(d), fd_new)
        return np.minimum(np.minimum(fc, fd), np.minimum(f(a), f(b)))

    def box_distance(self, lo, hi):
        return self.polyline.box_distance(lo, hi)

    def _frame_at(self, a):
        if np.hypot(*(a - self.tangency)) < self.window_size:
            # near the tangency point the graph frame itself is a window
            return np.eye(2)
        pl = self.polyline
        _, seg = pl.distance(a[None], return_segment=True)
        k = int(seg[0])
        pid = pl.pid[k]
        # parameter of the closest point on this piece
        t = self._closest_param(a, pid, pl.tpar[k], pl.tpar[(k + 1) % pl.a.shape[0]]
                                if pl.pid[(k + 1) % pl.a.shape[0]] == pid else 1.0)
        _, der = self.piece_eval(np.array([pid]), np.array([t]))
        tan = der[0] / np.hypot(*der[0])
        nrm = np.array([-tan[1], tan[0]])
        return np.array([tan, nrm])

    def _closest_param(self, x, pid, a, b):
        ts = np.linspace(a, b, 2001)
        p, _ = self.piece_eval(np.full(ts.size, pid), ts)
        return float(ts[np.argmin(np.hypot(*(p - x).T))])

    def to_dict(self):
        return {"type": "graph_disk", "modulus": self.modulus.to_dict(), "c0": self.c0,
                "r0": self.r0, "radius": self.radius, "offset": self.offset.tolist()}

    def translated(self, v):
        return GraphPerturbedDisk(self.modulus, self.c0, self.r0, self.radius, self.offset + np.asarray(v))


def panel_nodes(domain, panels):
    """Gauss-Legendre nodes, unit outward normals and arc-length weights."""
    half = 0.5 * (panels.t1 - panels.t0)
    t = (0.5 * (panels.t0 + panels.t1))[:, None] + half[:, None] * _GL_X[None, :]
    pid = np.repeat(panels.pid[:, None], GL_ORDER, axis=1)
    pts, der = domain.piece_eval(pid, t)
    speed = np.hypot(der[..., 0], der[..., 1])
    nrm = np.stack([der[..., 1], -der[..., 0]], -1) / speed[..., None]
    w = speed * half[:, None] * _GL_W[None, :]
    return BoundaryQuadrature(pts.reshape(-1, 2), nrm.reshape(-1, 2), w.ravel())


def domain_from_dict(d):
    d = dict(d)
    kind = str(d.get("type", "")).lower()
    if kind == "ball":
        return Ball(d.get("center", (0.0, 0.0)), d.get("radius", 1.0))
    if kind == "polygon":
        return Polygon(d["vertices"])
    if kind in ("square", "unit_square"):
        return unit_square()
    if kind == "notched_square":
        return notched_square(d.get("width", 0.2), d.get("depth", 0.5))
    if kind == "graph_disk":
        m = moduli.Modulus.from_dict(d.get("modulus", {"family": "power", "alpha": 0.5}))
        if d.get("tilde"):
            m = m.tilde()
        return GraphPerturbedDisk(m, d.get("c0", 0.5), d.get("r0", 0.25), d.get("radius", 1.0),
                                  d.get("offset", (0.0, 0.0)))
    raise DomainError(f"unknown domain type {kind!r}")
