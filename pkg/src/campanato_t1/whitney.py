"""Whitney coverings of a domain and of its complement, reflected cubes,
and a smooth partition of unity on the exterior covering.

Cubes are stored as integer arrays (level, i, j); cube = [i, i+1) x [j, j+1)
scaled by 2**level.  Construction runs level by level from coarse to fine,
so the result does not depend on any parallel split and is returned sorted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import (DegenerateDomainError, DomainError, GeometryError,
                     PartitionGapError, ReflectionFailure)

SQRT2 = math.sqrt(2.0)
_OFF = 1 << 30


def _encode(i, j):
    return (np.asarray(i, dtype=np.int64) + _OFF) * (1 << 31) + (np.asarray(j, dtype=np.int64) + _OFF)


class _LevelIndex:
    """Sorted dyadic keys per level for vectorized membership lookup."""

    def __init__(self, level, i, j):
        self.levels = np.unique(level)
        self.keys, self.idx = {}, {}
        for k in self.levels:
            sel = np.nonzero(level == k)[0]
            key = _encode(i[sel], j[sel])
            order = np.argsort(key)
            self.keys[int(k)] = key[order]
            self.idx[int(k)] = sel[order]

    def lookup(self, k, i, j):
        """Index of cube (k, i, j) or -1."""
        k = int(k)
        if k not in self.keys:
            return np.full(np.shape(i), -1, dtype=np.int64)
        keys = self.keys[k]
        q = _encode(i, j)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, keys.size - 1)
        hit = keys[pos] == q
        return np.where(hit, self.idx[k][pos], -1)


@dataclass
class WhitneyCovering:
    domain: object
    side: str
    min_level: int
    level: np.ndarray
    i: np.ndarray
    j: np.ndarray
    start_level: int
    dropped_far: int = 0
    _index: object = field(default=None, repr=False)

    def __len__(self):
        return self.level.size

    @property
    def index(self):
        if self._index is None:
            self._index = _LevelIndex(self.level, self.i, self.j)
        return self._index

    @property
    def sides(self):
        return np.ldexp(1.0, self.level)

    @property
    def lo(self):
        s = self.sides
        return np.stack([self.i * s, self.j * s], -1)

    @property
    def hi(self):
        return self.lo + self.sides[:, None]

    @property
    def centers(self):
        return self.lo + 0.5 * self.sides[:, None]

    def cube(self, n):
        return geo.DyadicCube(int(self.level[n]), int(self.i[n]), int(self.j[n]))

    def cubes(self):
        return [self.cube(n) for n in range(len(self))]

    def find(self, q):
        n = self.index.lookup(q.level, q.i, q.j)
        return int(n)

    def boundary_distance(self):
        return self.domain.box_distance(self.lo, self.hi)

    def covered_area(self):
        return float(np.sum(self.sides ** 2))

    def collar_width(self):
        return 4.0 * SQRT2 * math.ldexp(1.0, self.min_level)

    def collar_bound(self):
        w = self.collar_width()
        return w * self.domain.perimeter + math.pi * w * w

    # -- neighbours -----------------------------------------------------------
    def neighbor_pairs(self):
        """Pairs (a, b) of distinct cubes with intersecting closures, ell(a) <= ell(b)."""
        idx = self.index
        out_a, out_b = [], []
        kmax = int(self.level.max())
        for k in idx.levels:
            sel = np.nonzero(self.level == k)[0]
            ii, jj = self.i[sel], self.j[sel]
            for k2 in range(int(k), kmax + 1):
                r = 1 << (k2 - int(k))
                i_lo = -((-ii) // r) - 1   # ceil(i / r) - 1
                i_hi = (ii + 1) // r
                j_lo = -((-jj) // r) - 1
                j_hi = (jj + 1) // r
                for di in range(3):
                    for dj in range(3):
                        ci, cj = i_lo + di, j_lo + dj
                        ok = (ci <= i_hi) & (cj <= j_hi)
                        hit = idx.lookup(k2, ci, cj)
                        m = ok & (hit >= 0) & (hit != sel)
                        out_a.append(sel[m])
                        out_b.append(hit[m])
        a = np.concatenate(out_a) if out_a else np.zeros(0, dtype=np.int64)
        b = np.concatenate(out_b) if out_b else np.zeros(0, dtype=np.int64)
        # same-level pairs are found twice; keep a < b for those
        same = self.level[a] == self.level[b]
        keep = ~same | (a < b)
        pairs = np.unique(np.stack([a[keep], b[keep]], -1), axis=0)
        return pairs

    # -- property checks ------------------------------------------------------
    def check_dyadic(self):
        s = self.sides
        bad = np.nonzero((s != np.ldexp(1.0, self.level)) | (self.level < self.min_level))[0]
        return [self.cube(n) for n in bad]

    def check_disjoint(self):
        idx = self.index
        bad = []
        kmax = int(self.level.max())
        for k in idx.levels:
            sel = np.nonzero(self.level == k)[0]
            for k2 in range(int(k) + 1, kmax + 1):
                r = 1 << (k2 - int(k))
                hit = idx.lookup(k2, self.i[sel] // r, self.j[sel] // r)
                for a, b in zip(sel[hit >= 0], hit[hit >= 0]):
                    bad.append((self.cube(a), self.cube(b)))
        return bad

    def check_distance(self):
        d = self.boundary_distance()
        diam = SQRT2 * self.sides
        bad = np.nonzero((d < diam * (1 - 1e-12)) | (d > 4 * diam * (1 + 1e-12)))[0]
        return [(self.cube(n), float(d[n])) for n in bad]

    def check_side(self):
        inside = self.domain.box_inside(self.lo, self.hi)
        wrong = ~inside if self.side == "interior" else (
            self.domain.contains(self.centers) | (self.boundary_distance() <= 0))
        return [self.cube(n) for n in np.nonzero(wrong)[0]]

    def check_neighbors(self, pairs=None):
        pairs = self.neighbor_pairs() if pairs is None else pairs
        la = self.sides[pairs[:, 0]]
        lb = self.sides[pairs[:, 1]]
        bad = np.nonzero(np.maximum(la, lb) > 2 * np.minimum(la, lb))[0]
        return [(self.cube(pairs[n, 0]), self.cube(pairs[n, 1])) for n in bad]

    def overlap_counts(self, pts, dilation=10.0):
        """Number of dilated cubes sQ containing each point."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        idx = self.index
        count = np.zeros(pts.shape[0], dtype=np.int64)
        reach = int(math.ceil(dilation / 2 - 0.5))
        for k in idx.levels:
            s = math.ldexp(1.0, int(k))
            i0 = np.floor(pts[:, 0] / s).astype(np.int64)
            j0 = np.floor(pts[:, 1] / s).astype(np.int64)
            for di in range(-reach, reach + 1):
                for dj in range(-reach, reach + 1):
                    hit = idx.lookup(k, i0 + di, j0 + dj)
                    m = hit >= 0
                    if not np.any(m):
                        continue
                    c = self.centers[hit[m]]
                    half = 0.5 * dilation * s
                    inside = np.all(np.abs(pts[m] - c) < half, axis=1)
                    count[np.nonzero(m)[0][inside]] += 1
        return count

    def overlap_samples(self, n=2000, seed=0):
        rng = np.random.default_rng(seed)
        pick = rng.integers(0, len(self), size=n)
        u = rng.uniform(0, 1, size=(n, 2))
        return self.lo[pick] + u * self.sides[pick, None]

    def verify(self, samples=2000, seed=0):
        """Run the covering checks; every violation list should be empty."""
        pairs = self.neighbor_pairs()
        pts = self.overlap_samples(samples, seed)
        counts = self.overlap_counts(pts)
        n10 = int(counts.max()) if counts.size else 0
        area = self.covered_area()
        report = {
            "side": self.side,
            "n_cubes": len(self),
            "min_level": self.min_level,
            "levels": [int(self.level.min()), int(self.level.max())],
            "item1_dyadic": self.check_dyadic(),
            "item2_disjoint": self.check_disjoint(),
            "item3_side": self.check_side(),
            "item4_distance": self.check_distance(),
            "item5_neighbors": self.check_neighbors(pairs),
            "item6_overlap": [tuple(p) for p, c in zip(pts, counts) if not np.isfinite(c)],
            "N10": n10,
            "n_neighbor_pairs": int(pairs.shape[0]),
            "covered_area": area,
            "collar_bound": self.collar_bound(),
        }
        if self.side == "interior":
            deficit = self.domain.area - area
            report["area_deficit"] = deficit
            report["item3_coverage"] = [] if deficit <= self.collar_bound() else [deficit]
        else:
            report["item3_coverage"] = []
        report["violations"] = sum(len(report[k]) for k in report if k.startswith("item"))
        return report

    def to_dict(self):
        return {"side": self.side, "min_level": self.min_level,
                "cubes": [[int(a), int(b), int(c)] for a, b, c in zip(self.level, self.i, self.j)]}


def _start_cubes(lo, hi):
    size = float(np.max(hi - lo))
    k = int(math.ceil(math.log2(size))) if size > 0 else 0
    s = math.ldexp(1.0, k)
    i = np.arange(math.floor(lo[0] / s), math.floor(hi[0] / s) + 1)
    j = np.arange(math.floor(lo[1] / s), math.floor(hi[1] / s) + 1)
    I, J = np.meshgrid(i, j, indexing="ij")
    return k, I.ravel().astype(np.int64), J.ravel().astype(np.int64)


def build_whitney(domain, side="interior", min_level=-12):
    """Whitney covering of D (side="interior") or of a collar of its exterior."""
    if side not in ("interior", "exterior"):
        raise DomainError("side must be 'interior' or 'exterior'")
    lo, hi = domain.bbox
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if side == "exterior":
        c, h = 0.5 * (lo + hi), 1.5 * (hi - lo)
        lo, hi = c - h, c + h
    k, I, J = _start_cubes(lo, hi)
    if k < min_level:
        raise DegenerateDomainError("min_level above the domain scale")
    acc_l, acc_i, acc_j = [], [], []
    dropped = 0
    while I.size and k >= min_level:
        s = math.ldexp(1.0, k)
        clo = np.stack([I * s, J * s], -1)
        chi = clo + s
        d = domain.box_distance(clo, chi)
        cen = clo + 0.5 * s
        ins = domain.contains(cen)
        right_side = (d > 0) & (ins if side == "interior" else ~ins)
        diam = SQRT2 * s
        accept = right_side & (d >= diam) & (d <= 4 * diam)
        far = right_side & (d > 4 * diam)
        if side == "interior" and np.any(far):
            raise GeometryError("interior cube too far from the boundary at the start level")
        dropped += int(far.sum())
        split = (d == 0) | (right_side & (d < diam))
        acc_l.append(np.full(int(accept.sum()), k))
        acc_i.append(I[accept])
        acc_j.append(J[accept])
        I2, J2 = 2 * I[split], 2 * J[split]
        I = np.concatenate([I2, I2 + 1, I2, I2 + 1])
        J = np.concatenate([J2, J2, J2 + 1, J2 + 1])
        k -= 1
    level = np.concatenate(acc_l).astype(np.int64)
    ii = np.concatenate(acc_i).astype(np.int64)
    jj = np.concatenate(acc_j).astype(np.int64)
    if level.size == 0:
        raise DegenerateDomainError("no Whitney cube accepted; lower min_level")
    order = np.lexsort((jj, ii, level))
    return WhitneyCovering(domain, side, int(min_level), level[order], ii[order], jj[order],
                           start_level=int(_start_cubes(lo, hi)[0]), dropped_far=dropped)


# ---------------------------------------------------------------------------
# reflection

def reflection_map(interior, exterior, cutoff=None):
    """Index of the reflected interior cube for each exterior cube (-1 if above cutoff).

    The reflected cube is a largest interior cube Q with
    dist(q, Q) <= 2 dist(q, dD); ties go to the nearer center, then to the
    lexicographically smaller center.
    """
    n = len(exterior)
    out = np.full(n, -1, dtype=np.int64)
    sel = np.arange(n) if cutoff is None else np.nonzero(exterior.sides <= cutoff)[0]
    if sel.size == 0:
        return out
    ic, ilo, ihi = interior.centers, interior.lo, interior.hi
    elo, ehi, ec = exterior.lo[sel], exterior.hi[sel], exterior.centers[sel]
    dq = exterior.domain.box_distance(elo, ehi)
    res = np.full(sel.size, -1, dtype=np.int64)
    todo = np.arange(sel.size)
    # largest interior level first: the first level with a candidate wins
    for k in sorted(interior.index.levels.tolist(), reverse=True):
        if todo.size == 0:
            break
        rows = np.nonzero(interior.level == k)[0]
        s = math.ldexp(1.0, int(k))
        tree = cKDTree(ic[rows])
        reach = 2 * dq[todo] + SQRT2 * (exterior.sides[sel][todo] + s) / 2 + 1e-12
        kq = min(32, rows.size)
        dist, nn = tree.query(ec[todo], k=kq, distance_upper_bound=float(reach.max()))
        dist = dist.reshape(todo.size, kq)
        nn = nn.reshape(todo.size, kq)
        found = dist <= reach[:, None]
        owner = np.repeat(np.arange(todo.size), kq)[found.ravel()]
        cand = rows[nn[found]]
        # rows whose k-th neighbour is still inside the reach may have more candidates
        more = np.nonzero(found[:, -1])[0]
        if more.size:
            lists = tree.query_ball_point(ec[todo[more]], reach[more])
            counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
            extra_owner = np.repeat(more, counts)
            extra = rows[np.fromiter((v for x in lists for v in x), dtype=np.int64, count=int(counts.sum()))]
            keep = ~np.isin(owner, more)
            owner = np.concatenate([owner[keep], extra_owner])
            cand = np.concatenate([cand[keep], extra])
        t = todo[owner]
        gap = geo.box_box_distance(elo[t], ehi[t], ilo[cand], ihi[cand])
        ok = gap <= 2 * dq[t] * (1 + 1e-12)
        owner, cand, t = owner[ok], cand[ok], t[ok]
        if owner.size == 0:
            continue
        cd = np.round(np.hypot(*(ic[cand] - ec[t]).T), 12)
        order = np.lexsort((ic[cand, 1], ic[cand, 0], cd, owner))
        owner, cand = owner[order], cand[order]
        first = np.ones(owner.size, dtype=bool)
        first[1:] = owner[1:] != owner[:-1]
        res[todo[owner[first]]] = cand[first]
        todo = todo[res[todo] < 0]
    if todo.size:
        q = exterior.cube(int(sel[todo[0]]))
        raise ReflectionFailure(f"no reflected cube for {q}; lower the interior min_level", cube=q)
    out[sel] = res
    return out


def reflected_cube(interior, q, exterior=None):
    """The reflected interior cube of the exterior cube q."""
    if exterior is None:
        ext = WhitneyCovering(interior.domain, "exterior", q.level,
                              np.array([q.level]), np.array([q.i]), np.array([q.j]), q.level)
        m = reflection_map(interior, ext)
        return interior.cube(int(m[0]))
    n = exterior.find(q)
    if n < 0:
        raise DomainError(f"{q} is not in the exterior covering")
    return interior.cube(int(reflection_map(interior, _subset(exterior, [n]))[0]))


def _subset(cov, rows):
    rows = np.asarray(rows)
    return WhitneyCovering(cov.domain, cov.side, cov.min_level, cov.level[rows], cov.i[rows],
                           cov.j[rows], cov.start_level)


# ---------------------------------------------------------------------------
# partition of unity

INNER = 0.4      # half-side of 4/5 Q, in units of ell
OUTER = 0.625    # half-side of 5/4 Q


def _step(u):
    return geo._smooth_step(u)


def _dstep(u):
    return geo._smooth_step_deriv(u)


class PartitionOfUnity:
    """psi_Q = b_Q / sum_R b_R with b_Q = 1 on 4/5 Q and 0 off 5/4 Q."""

    def __init__(self, covering):
        if len(covering) == 0:
            raise DegenerateDomainError("empty covering")
        self.cov = covering
        self.centers = covering.centers
        self.sides = covering.sides
        self.levels = covering.index.levels
        self.grad_constant = self._grad_constant()

    def _grad_constant(self):
        u = np.linspace(1e-4, 1 - 1e-4, 20001)
        return float(np.max(_dstep(u))) / (OUTER - INNER)

    def bump_1d(self, t, ell):
        return _step((OUTER * ell - np.abs(t)) / ((OUTER - INNER) * ell))

    def candidates(self, pts):
        """Pairs (point index, cube index) with the point inside the open 5/4 Q."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        dom = self.cov.domain
        d = dom.polyline.distance(pts) if hasattr(dom, "polyline") else np.abs(dom.signed_distance(pts))
        P, C = [], []
        idx = self.cov.index
        for k in self.levels:
            s = math.ldexp(1.0, int(k))
            # a point in 5/4 Q has 1.2 ell < dist(x, dD) < 7.5 ell (with slack)
            near = np.nonzero((d > 1.0 * s) & (d < 8.0 * s))[0]
            if near.size == 0:
                continue
            p = pts[near]
            i0 = np.floor(p[:, 0] / s).astype(np.int64)
            j0 = np.floor(p[:, 1] / s).astype(np.int64)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    hit = idx.lookup(k, i0 + di, j0 + dj)
                    m = hit >= 0
                    if not np.any(m):
                        continue
                    c = self.centers[hit[m]]
                    inside = np.all(np.abs(p[m] - c) < OUTER * s, axis=1)
                    P.append(near[m][inside])
                    C.append(hit[m][inside])
        if not P:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(P), np.concatenate(C)

    def bumps(self, pts, with_grad=False):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        p, c = self.candidates(pts)
        ell = self.sides[c]
        t = pts[p] - self.centers[c]
        w = (OUTER - INNER) * ell
        u = (OUTER * ell[:, None] - np.abs(t)) / w[:, None]
        s = _step(u)
        b = s[:, 0] * s[:, 1]
        if not with_grad:
            return p, c, b
        ds = _dstep(u) * (-np.sign(t)) / w[:, None]
        g = np.stack([ds[:, 0] * s[:, 1], s[:, 0] * ds[:, 1]], -1)
        return p, c, b, g

    def denominator(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        p, c, b = self.bumps(pts)
        return np.bincount(p, b, minlength=pts.shape[0])

    def psi(self, n, pts):
        """psi_Q for the cube with covering index n."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        p, c, b = self.bumps(pts)
        den = np.bincount(p, b, minlength=pts.shape[0])
        num = np.bincount(p[c == n], b[c == n], minlength=pts.shape[0])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / den, 0.0)

    def combine(self, pts, coeff, with_grad=False, check_gap=True):
        """sum_Q psi_Q(x) coeff[Q] (and its gradient); 0 where no bump is active."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        n = pts.shape[0]
        if with_grad:
            p, c, b, g = self.bumps(pts, True)
        else:
            p, c, b = self.bumps(pts)
        den = np.bincount(p, b, minlength=n)
        covered = den > 0
        if check_gap:
            gap = covered & (den < 1e-12)
            if np.any(gap):
                loc = pts[np.nonzero(gap)[0][0]]
                raise PartitionGapError(f"partition denominator vanishes near {loc.tolist()}", loc)
        num = np.bincount(p, b * coeff[c], minlength=n)
        safe = np.where(covered, den, 1.0)
        val = np.where(covered, num / safe, 0.0)
        if not with_grad:
            return val
        gd = np.stack([np.bincount(p, g[:, k], minlength=n) for k in range(2)], -1)
        gn = np.stack([np.bincount(p, g[:, k] * coeff[c], minlength=n) for k in range(2)], -1)
        grad = np.where(covered[:, None], (gn * safe[:, None] - num[:, None] * gd) / safe[:, None] ** 2, 0.0)
        return val, grad

    def active_count(self, pts):
        p, _, _ = self.bumps(pts)
        return np.bincount(p, minlength=np.asarray(pts).reshape(-1, 2).shape[0])


def build_partition(exterior):
    return PartitionOfUnity(exterior)


def vertical_line_count(cov, window, level, nlines=257):
    """Largest number of level-`level` cubes met by one vertical line of the window."""
    sel = np.nonzero(cov.level == level)[0]
    if sel.size == 0:
        return 0
    R = window.size
    e1, e2 = window.rotation[0], window.rotation[1]
    xs = np.linspace(-0.5 * R, 0.5 * R, nlines)
    a = window.origin + xs[:, None] * e1 - 0.5 * R * e2
    b = window.origin + xs[:, None] * e1 + 0.5 * R * e2
    lo, hi = cov.lo[sel], cov.hi[sel]
    # prefilter cubes near the window
    reach = SQRT2 * R
    near = np.all(np.abs(0.5 * (lo + hi) - window.origin) < reach + cov.sides[sel, None], axis=1)
    lo, hi = lo[near], hi[near]
    if lo.shape[0] == 0:
        return 0
    # a line running along a cube face does not meet the open cube
    eps = 1e-9 * (hi - lo)
    lo, hi = lo + eps, hi - eps
    hit = geo._segment_hits_box(a[:, None, :], b[:, None, :], lo[None], hi[None])
    return int(hit.sum(axis=1).max())
