"""campanato-t1 command line.

Every command reads a JSON config (domain, kernel, modulus, field, params),
writes CSV tables and a JSON verdict into --out, and exits with 0 on pass,
1 on a threshold failure and 2..9 on errors.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys

import numpy as np

from . import czkernel as cz
from . import extension as ex
from . import geometry as geo
from . import moduli
from . import seminorm as sn
from . import t1
from . import whitney as wh
from .errors import ArtifactError, ConfigError

SCHEMA = sn.SCHEMA_VERSION
DEFAULTS = {
    "domain": {"type": "square"},
    "kernel": {"name": "BeurlingRe"},
    "modulus": {"family": "power", "alpha": 0.5},
    "field": {"type": "constant", "value": 1.0},
    "params": {},
}


# ---------------------------------------------------------------------------
# config

def load_config(path, args):
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        for key, val in user.items():
            if key == "params":
                cfg["params"].update(val)
            else:
                cfg[key] = val
    p = cfg["params"]
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        p["seed"] = args.seed
    if args.tol is not None:
        if not args.tol > 0:
            raise ConfigError("tol must be positive")
        p["tol"] = args.tol
    p.setdefault("seed", 0)
    return cfg


def make_field(desc, domain=None):
    kind = str(desc.get("type", "")).lower()
    if kind == "constant":
        return geo.constant_field(float(desc.get("value", 1.0)))
    if kind == "coordinate":
        return geo.coordinate_field(int(desc.get("axis", 0)))
    if kind == "phi":
        m = moduli.Modulus.from_dict(desc.get("modulus", {"family": "constant"}))
        return t1.phi_tau(m, desc.get("tau", (0.0, 0.0)))
    if kind == "log_rho":
        if domain is None:
            raise ConfigError("log_rho needs a domain")
        return geo.ScalarField(lambda p: np.log(np.maximum(-domain.signed_distance(p.reshape(-1, 2)), 1e-300))
                               .reshape(p.shape[:-1]), name="log_rho")
    raise ConfigError(f"unknown field type {desc.get('type')!r}")


def _seed(p):
    s = int(p["seed"])
    return s % (2 ** 32) if s >= 2 ** 32 else s


# ---------------------------------------------------------------------------
# output

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"#schema_version={SCHEMA}\n")
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in columns) + "\n")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if math.isfinite(v) else str(v)
    return o


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands; each returns (plan, run) where run(out) -> verdict dict

def cmd_whitney(cfg):
    p = cfg["params"]
    d = geo.domain_from_dict(cfg["domain"])
    side = p.get("side", "interior")
    level = int(p.get("min_level", -8))
    plan = {"command": "whitney", "domain": d.to_dict(), "side": side, "min_level": level}

    def run(out):
        cov = wh.build_whitney(d, side, level)
        rep = cov.verify(seed=_seed(p))
        write_json(os.path.join(out, "covering.json"), cov.to_dict())
        rows = ({"level": int(k), "i": int(i), "j": int(j)} for k, i, j in zip(cov.level, cov.i, cov.j))
        write_csv(os.path.join(out, "cubes.csv"), ("level", "i", "j"), rows)
        rep = dict(rep)
        rep["pass"] = rep["violations"] == 0
        return rep
    return plan, run


def cmd_extend(cfg):
    p = cfg["params"]
    d = geo.domain_from_dict(cfg["domain"])
    f = make_field(cfg["field"], d)
    level = int(p.get("min_level", -8))
    n = int(p.get("grid_n", 64))
    plan = {"command": "extend", "domain": d.to_dict(), "field": cfg["field"], "min_level": level, "grid_n": n}

    def run(out):
        e = ex.extend(f, d, min_level=level)
        lo, hi = e.support
        xs = np.linspace(lo[0], hi[0], n)
        ys = np.linspace(lo[1], hi[1], n)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], -1)
        v = e(pts)
        ins = d.contains(pts)
        dev = float(np.max(np.abs(v[ins] - f(pts[ins])))) if np.any(ins) else 0.0
        write_csv(os.path.join(out, "extension.csv"), ("x", "y", "value", "inside"),
                  ({"x": a, "y": b, "value": c, "inside": int(i)} for (a, b), c, i in zip(pts, v, ins)))
        return {"support": [lo, hi], "max_deviation_on_D": dev, "n_exterior_cubes": len(e.exterior),
                "n_interior_cubes": len(e.interior), "R": e.R, "pass": dev == 0.0}
    return plan, run


def cmd_seminorm(cfg):
    p = cfg["params"]
    d = geo.domain_from_dict(cfg["domain"])
    f = make_field(cfg["field"], d)
    m = moduli.Modulus.from_dict(cfg["modulus"])
    pp = int(p.get("p", 1))
    interior = bool(p.get("interior", True))
    thr = float(p.get("threshold", math.inf))
    plan = {"command": "seminorm", "domain": d.to_dict(), "field": cfg["field"], "modulus": cfg["modulus"],
            "p": pp, "interior": interior, "threshold": thr, "n_random": p.get("n_random", 1000)}

    def run(out):
        smp = sn.default_sampler(d, interior, whitney_level=int(p.get("whitney_level", -6)),
                                 n_random=int(p.get("n_random", 1000)), seed=_seed(p))
        rep = sn.campanato_seminorm(f, d, m, pp, smp, interior)
        write_csv(os.path.join(out, "seminorm.csv"), rep.columns, rep.rows())
        s = rep.summary()
        s["threshold"] = thr
        s["pass"] = rep.sup <= thr
        return s
    return plan, run


def cmd_tchi(cfg):
    p = cfg["params"]
    d = geo.domain_from_dict(cfg["domain"])
    k = cz.kernel_from_dict(cfg["kernel"])
    tol = float(p.get("tol", cz.DEFAULT_TOL))
    n = int(p.get("grid_n", 32))
    plan = {"command": "tchi", "domain": d.to_dict(), "kernel": k.name, "tol": tol, "grid_n": n}

    def run(out):
        if "points" in p:
            pts = np.asarray(p["points"], float).reshape(-1, 2)
        else:
            lo, hi = d.bbox
            xs = np.linspace(lo[0], hi[0], n + 2)[1:-1]
            ys = np.linspace(lo[1], hi[1], n + 2)[1:-1]
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            pts = np.stack([X.ravel(), Y.ravel()], -1)
            pts = pts[d.contains(pts) & (-d.signed_distance(pts) >= t1.FIELD_COLLAR * d.diameter)]
        v = np.atleast_1d(cz.pv_tchi(d, k, pts, tol=tol, threads=p.get("threads")))
        write_csv(os.path.join(out, "tchi.csv"), ("x", "y", "tchi"),
                  ({"x": a, "y": b, "tchi": c} for (a, b), c in zip(pts, v)))
        return {"n_points": int(v.size), "max_abs": float(np.max(np.abs(v))) if v.size else 0.0,
                "kernel": k.name, "tol": tol, "pass": True}
    return plan, run


def cmd_grad_profile(cfg):
    p = cfg["params"]
    d = geo.domain_from_dict(cfg["domain"])
    k = cz.kernel_from_dict(cfg["kernel"])
    m = moduli.Modulus.from_dict(cfg["modulus"])
    lo, hi = p.get("delta_range", (1e-4, 1e-1))
    nd = int(p.get("n_delta", 12))
    band_max = float(p.get("band_max", 50.0))
    slope_max = float(p.get("slope_max", 0.2))
    plan = {"command": "grad-profile", "domain": d.to_dict(), "kernel": k.name, "modulus": cfg["modulus"],
            "delta_range": [lo, hi], "n_delta": nd, "band_max": band_max, "slope_max": slope_max}

    def run(out):
        deltas = np.logspace(math.log10(lo), math.log10(hi), nd)
        prof = t1.bloch_profile(d, k, m, deltas)
        write_csv(os.path.join(out, "profile.csv"), prof.columns, prof.rows())
        s = prof.summary()
        s.update(band_max=band_max, slope_max=slope_max,
                 **{"pass": prof.band <= band_max and abs(prof.slope) <= slope_max})
        return s
    return plan, run


def cmd_t1check(cfg):
    p = cfg["params"]
    d = geo.domain_from_dict(cfg["domain"])
    k = cz.kernel_from_dict(cfg["kernel"])
    m = moduli.Modulus.from_dict(cfg["modulus"])
    grid_n = int(p.get("grid_n", 128))
    thr = float(p.get("threshold", t1.DEFAULT_THRESHOLD))
    tol = float(p.get("tol", cz.DEFAULT_TOL))
    plan = {"command": "t1check", "domain": d.to_dict(), "kernel": k.name, "modulus": cfg["modulus"],
            "grid_n": grid_n, "threshold": thr, "tol": tol}

    def run(out):
        rep = t1.t1_check(d, k, m, grid_n=grid_n, tol=tol, threshold=thr, seed=_seed(p),
                          n_random=int(p.get("n_random", 1000)), threads=p.get("threads"))
        write_csv(os.path.join(out, "seminorm.csv"), rep.seminorm.columns, rep.seminorm.rows())
        if rep.profile is not None:
            write_csv(os.path.join(out, "profile.csv"), rep.profile.columns, rep.profile.rows())
        agg = rep.aggregate()
        agg["provenance"] = rep.provenance
        return agg
    return plan, run


def cmd_cancellation(cfg):
    p = cfg["params"]
    d = geo.domain_from_dict(cfg["domain"] if cfg["domain"].get("type") == "ball" else {"type": "ball"})
    names = p.get("kernels", [cfg["kernel"]])
    ks = [cz.kernel_from_dict(x) for x in names]
    n = int(p.get("n_probes", 50))
    thr = float(p.get("threshold", 1e-4))
    tol = float(p.get("tol", cz.DEFAULT_TOL))
    plan = {"command": "cancellation", "domain": d.to_dict(), "kernels": [k.name for k in ks],
            "n_probes": n, "threshold": thr, "tol": tol}

    def run(out):
        rng = np.random.default_rng(int(p["seed"]))
        r = 0.9 * d.radius * np.sqrt(rng.uniform(0, 1, n))
        th = rng.uniform(0, 2 * np.pi, n)
        probes = d.center + np.stack([r * np.cos(th), r * np.sin(th)], -1)
        rows, res = [], {}
        for k in ks:
            rep = cz.cancellation_report(d, k, probes, tol=tol, threads=p.get("threads"))
            res[k.name] = {"max_abs": rep["max_abs"], "argmax": rep["argmax"]}
            rows += [{"kernel": k.name, "x": a, "y": b, "tchi": v} for (a, b), v in zip(probes, rep["values"])]
        write_csv(os.path.join(out, "cancellation.csv"), ("kernel", "x", "y", "tchi"), rows)
        worst = max(v["max_abs"] for v in res.values())
        return {"kernels": res, "max_abs": worst, "threshold": thr, "pass": worst <= thr}
    return plan, run


COMMANDS = {
    "whitney": cmd_whitney,
    "extend": cmd_extend,
    "seminorm": cmd_seminorm,
    "tchi": cmd_tchi,
    "grad-profile": cmd_grad_profile,
    "t1check": cmd_t1check,
    "cancellation": cmd_cancellation,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="campanato-t1", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, help="seed for random samplers")
        sp.add_argument("--threads", type=int, help="worker threads")
        sp.add_argument("--tol", type=float, help="quadrature tolerance")
        sp.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads must be >= 1")
            cfg["params"]["threads"] = args.threads
        plan, run = COMMANDS[args.command](cfg)
        plan["seed"] = cfg["params"]["seed"]
        if args.dry_run:
            print(json.dumps(_jsonable(plan), indent=2, sort_keys=True))
            return 0
        os.makedirs(args.out, exist_ok=True)
        verdict = run(args.out)
        verdict["command"] = args.command
        verdict["config"] = {k: v for k, v in cfg.items() if k != "params"}
        verdict["config"]["params"] = {k: v for k, v in cfg["params"].items() if k != "threads"}
        write_json(os.path.join(args.out, "verdict.json"), verdict)
        ok = bool(verdict.get("pass", True))
        print(f"{args.command}: {'pass' if ok else 'fail'}")
        return 0 if ok else 1
    except ArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (KeyError, TypeError, ValueError) as e:
        print(f"error: bad config ({e})", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
