"""Cube means and the Whitney extension of a function from D to the plane.

    f_ext = f chi_D + sum_{Q in W', ell(Q) <= R} psi_Q * mean(f, reflected(Q))

Means of f over reflected cubes are computed on first use and cached.
"""
from __future__ import annotations

import math
import threading

import numpy as np

from . import geometry as geo
from . import whitney as wh
from .errors import CapabilityError, PoisonedValueError

QUAD_N = 32
_EVAL_CHUNK = 1 << 18


def _midpoint_nodes(n):
    u = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(u, u, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], -1)


def _eval_chunked(f, pts):
    flat = pts.reshape(-1, 2)
    out = np.empty(flat.shape[0])
    for s in range(0, flat.shape[0], _EVAL_CHUNK):
        out[s:s + _EVAL_CHUNK] = f(flat[s:s + _EVAL_CHUNK])
    return out.reshape(pts.shape[:-1])


def cube_means(f, lo, sides, quad_n=QUAD_N):
    """Means over the cubes [lo, lo + side]: midpoint rules with n and 2n
    points per axis combined by one Richardson step."""
    lo = np.asarray(lo, dtype=float).reshape(-1, 2)
    sides = np.asarray(sides, dtype=float).reshape(-1)
    res = []
    for n in (quad_n, 2 * quad_n):
        g = _midpoint_nodes(n)
        vals = np.empty(lo.shape[0])
        step = max(1, _EVAL_CHUNK // (n * n))
        for s in range(0, lo.shape[0], step):
            pts = lo[s:s + step, None, :] + sides[s:s + step, None, None] * g[None]
            v = _eval_chunked(f, pts)
            if not np.all(np.isfinite(v)):
                raise PoisonedValueError("non-finite field value inside a cube")
            vals[s:s + step] = v.mean(axis=1)
        res.append(vals)
    return (4.0 * res[1] - res[0]) / 3.0


def cube_mean(f, q, quad_n=QUAD_N):
    """Mean of f over a dyadic or general cube."""
    lo = np.asarray(q.lo, dtype=float)
    return float(cube_means(f, lo[None], [q.side], quad_n)[0])


class ExtendedField(geo.ScalarField):
    def __init__(self, f, domain, interior, exterior, partition, R, quad_n=QUAD_N, threads=None):
        self.f = f
        self.domain = domain
        self.interior = interior
        self.exterior = exterior
        self.partition = partition
        self.R = float(R)
        self.quad_n = quad_n
        self.active = exterior.sides <= self.R
        self.reflection = wh.reflection_map(interior, exterior, cutoff=self.R)
        self._means = np.full(len(interior), np.nan)
        self._lock = threading.Lock()
        lo = exterior.centers[self.active] - wh.OUTER * exterior.sides[self.active, None]
        hi = exterior.centers[self.active] + wh.OUTER * exterior.sides[self.active, None]
        dlo, dhi = domain.bbox
        if lo.size:
            self.support = (np.minimum(lo.min(axis=0), dlo), np.maximum(hi.max(axis=0), dhi))
        else:
            self.support = (np.asarray(dlo, float), np.asarray(dhi, float))
        super().__init__(self._evaluate, self._gradient if f.has_gradient else None,
                         bbox=self.support, name=f"ext({f.name})")

    def means_for(self, ext_idx):
        """Cached means of f over the reflected cubes of the given exterior cubes."""
        ext_idx = np.asarray(ext_idx, dtype=np.int64)
        out = np.zeros(ext_idx.size)
        act = self.active[ext_idx]
        tgt = self.reflection[ext_idx[act]]
        with self._lock:
            need = np.unique(tgt[np.isnan(self._means[tgt])])
            if need.size:
                self._means[need] = cube_means(self.f, self.interior.lo[need],
                                               self.interior.sides[need], self.quad_n)
            out[act] = self._means[tgt]
        return out

    def fill_cache(self):
        self.means_for(np.nonzero(self.active)[0])

    def _outside_sum(self, pts, with_grad=False):
        pu = self.partition
        n = pts.shape[0]
        if with_grad:
            p, c, b, g = pu.bumps(pts, True)
        else:
            p, c, b = pu.bumps(pts)
        coeff = self.means_for(c)
        den = np.bincount(p, b, minlength=n)
        covered = den > 0
        safe = np.where(covered, den, 1.0)
        num = np.bincount(p, b * coeff, minlength=n)
        val = np.where(covered, num / safe, 0.0)
        if not with_grad:
            return val
        gd = np.stack([np.bincount(p, g[:, k], minlength=n) for k in range(2)], -1)
        gn = np.stack([np.bincount(p, g[:, k] * coeff, minlength=n) for k in range(2)], -1)
        grad = np.where(covered[:, None], (gn * safe[:, None] - num[:, None] * gd) / safe[:, None] ** 2, 0.0)
        return val, grad

    def _evaluate(self, pts):
        shape = pts.shape[:-1]
        flat = pts.reshape(-1, 2)
        out = np.zeros(flat.shape[0])
        ins = self.domain.contains(flat)
        if np.any(ins):
            out[ins] = self.f(flat[ins])
        outs = np.nonzero(~ins)[0]
        if outs.size:
            lo, hi = self.support
            inbox = np.all((flat[outs] >= lo) & (flat[outs] <= hi), axis=1)
            sel = outs[inbox]
            if sel.size:
                out[sel] = self._outside_sum(flat[sel])
        return out.reshape(shape)

    def _gradient(self, pts):
        shape = pts.shape[:-1]
        flat = pts.reshape(-1, 2)
        out = np.zeros(flat.shape)
        ins = self.domain.contains(flat)
        if np.any(ins):
            out[ins] = self.f.gradient(flat[ins])
        outs = np.nonzero(~ins)[0]
        if outs.size:
            _, g = self._outside_sum(flat[outs], with_grad=True)
            out[outs] = g
        return out.reshape(shape + (2,))

    def exterior_gradient(self, pts):
        """Gradient of the smooth sum at points outside the closure of D."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return self._outside_sum(pts, with_grad=True)[1]

    def bump_count(self, pts):
        return self.partition.active_count(pts)


def extend(f, domain, interior=None, exterior=None, partition=None, R=None,
           min_level=-10, quad_n=QUAD_N):
    """Whitney extension of f (given on D) to the plane.

    Coverings are built when not supplied: the exterior at ``min_level`` and
    the interior three levels finer so every exterior cube has a reflection.
    """
    if exterior is None:
        exterior = wh.build_whitney(domain, "exterior", min_level)
    if interior is None:
        interior = wh.build_whitney(domain, "interior", exterior.min_level - 3)
    if partition is None:
        partition = wh.build_partition(exterior)
    if R is None:
        R = domain.window_size
    return ExtendedField(f, domain, interior, exterior, partition, R, quad_n)


# ---------------------------------------------------------------------------
# oscillation transfer near the boundary

def _osc_l1(f, lo, side, n=16):
    g = _midpoint_nodes(n)
    v = _eval_chunked(f, lo[:, None, :] + side[:, None, None] * g[None])
    return np.mean(np.abs(v - v.mean(axis=1, keepdims=True)), axis=1) * side ** 2


def oscillation_transfer(ext, cubes, factors=(2, 4, 8), n=16, c_max=50.0):
    """Desk check of the boundary oscillation estimate.

    For each cube Q (center, side) meeting the boundary through 2Q, compare
    int_Q |f_ext - mean| with the sum over interior Whitney cubes S inside cQ
    of int_{9/8 S} |f - mean|.  Returns per-factor constants and the smallest
    factor whose constant stays below ``c_max``.
    """
    centers = np.asarray([q[0] for q in cubes], dtype=float).reshape(-1, 2)
    sides = np.asarray([q[1] for q in cubes], dtype=float)
    lhs = _osc_l1(ext, centers - 0.5 * sides[:, None], sides, n)
    W = ext.interior
    wc, ws = W.centers, W.sides
    s_lo = wc - 0.5625 * ws[:, None]
    s_osc = None
    out = {"lhs": lhs, "factors": {}}
    chosen = None
    for c in factors:
        rhs = np.zeros(centers.shape[0])
        for q in range(centers.shape[0]):
            half = 0.5 * c * sides[q]
            inside = np.all(np.abs(wc - centers[q]) + 0.5 * ws[:, None] <= half, axis=1)
            idx = np.nonzero(inside)[0]
            if idx.size == 0:
                continue
            if s_osc is None:
                s_osc = np.full(len(W), np.nan)
            todo = idx[np.isnan(s_osc[idx])]
            if todo.size:
                s_osc[todo] = _osc_l1(ext.f, s_lo[todo], 1.125 * ws[todo], 8)
            rhs[q] = s_osc[idx].sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 1e-14, np.inf, 0.0))
        C = float(np.max(ratio)) if ratio.size else 0.0
        out["factors"][c] = {"C": C, "rhs": rhs}
        if chosen is None and C <= c_max:
            chosen = c
    out["c"] = chosen
    out["C"] = out["factors"][chosen]["C"] if chosen is not None else math.inf
    return out
