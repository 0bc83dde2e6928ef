"""Command-line driver for the experiment suites.

Each suite reads a JSON config (or uses built-in defaults), runs its checks
and writes ``report.json`` plus one CSV per sweep into the output directory.
Exit status: 0 when every check passes, 1 when a check fails, 2 for
malformed or unusable input.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from invmono import dissipative as dis
from invmono import fitzpatrick as fz
from invmono import kirszbraun as kb
from invmono import mps
from invmono.errors import InputError
from invmono.jsonio import MalformedJSON, read_json, write_json
from invmono.optkit import hull_membership

log = logging.getLogger("invmono")

SUITES = ("extend-monotone", "kirszbraun", "coupling-approx", "evolve", "invariance-audit")

DEFAULTS = {
    "extend-monotone": {
        "graph": {"dim": 1, "pairs": [[[0.0], [0.0]], [[1.0], [1.0]]]},
        "tau": 1.0,
        "queries": [[-3.0], [0.0], [2.0], [2.5]],
        "expected": [[0.0], [0.0], [1.0], [1.0]],
        "random_queries": 50,
    },
    "kirszbraun": {
        "data": {"dim": 1, "L": 1.0, "sites": [[-1.0], [1.0]], "values": [[-1.0], [1.0]]},
        "group": {"dim": 1, "matrices": [[[1.0]], [[-1.0]]]},
        "random_queries": 20,
    },
    "coupling-approx": {
        "coupling": {"order": 2, "matrix": [[0.25, 0.25], [0.25, 0.25]]},
        "refinements": [1, 2, 4, 8],
        "Z": {"level": 1, "dim": 1, "values": [[0.0], [1.0]]},
        "Zp": {"level": 1, "dim": 1, "values": [[0.0], [1.0]]},
    },
    "evolve": {
        "operator": {"lambda": 0.0, "variant": "matrix", "matrix": [[-2.0, 0.5], [0.5, -1.0]]},
        "x0": [1.0, 1.0],
        "t": 1.0,
        "n": 2048,
        "schedule": [2.0 ** -k for k in range(1, 11)],
        "random_pairs": 5,
    },
    "invariance-audit": {
        "operator": {"lambda": 0.0, "variant": "builtin:meanfield", "atoms": 8, "dim": 2},
        "tau": 0.25,
        "n": 16,
    },
}


class Report:
    """Ordered collection of named checks and result tables."""

    def __init__(self, suite, seed, tol):
        self.suite = suite
        self.seed = seed
        self.tol = tol
        self.checks = []
        self.results = {}
        self.tables = {}

    def check(self, name, value, bound, ok=None):
        ok = bool(value <= bound) if ok is None else bool(ok)
        self.checks.append({"name": name, "value": _num(value), "bound": _num(bound), "pass": ok})
        log.info("%s: %s (value %s, bound %s)", name, "pass" if ok else "FAIL", value, bound)
        return ok

    @property
    def passed(self):
        return all(c["pass"] for c in self.checks)

    def failures(self):
        return [c["name"] for c in self.checks if not c["pass"]]

    def as_dict(self):
        return {"suite": self.suite, "seed": self.seed, "tol": self.tol, "pass": self.passed,
                "checks": self.checks, "results": self.results}


def _num(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def _resolve(cfg, key, loader, base):
    """Inline object or path (relative to the config file) to an object."""
    item = cfg.get(key)
    if item is None:
        return None
    if isinstance(item, str):
        path = Path(item)
        if not path.is_absolute():
            path = base / path
        return loader(read_json(path))
    return loader(item)


def suite_extend_monotone(cfg, rep, rng, base):
    graph = _resolve(cfg, "graph", fz.MonotoneGraph.from_dict, base)
    group = _resolve(cfg, "group", fz.IsometryGroup.from_dict, base)
    if graph is None:
        raise InputError("config needs a 'graph'")
    if group is not None:
        graph = fz.saturate_orbit(graph, group)
    program = fz.ExtensionProgram(graph)
    tau = float(cfg.get("tau", 1.0))
    queries = np.atleast_2d(np.asarray(cfg.get("queries", []), dtype=float).reshape(-1, graph.dim))
    rows = []
    outs = []
    for k, y in enumerate(queries):
        x, val = fz.resolvent_mono(program, tau, y, return_value=True)
        outs.append(x)
        rows.append([k, *y, *x, val])
    rep.results["resolvent"] = [x.tolist() for x in outs]
    if "expected" in cfg:
        exp = np.asarray(cfg["expected"], dtype=float).reshape(-1, graph.dim)
        err = float(np.max(np.abs(np.array(outs) - exp))) if len(outs) else 0.0
        rep.check("resolvent matches expected values", err, rep.tol)
    contact = max((abs(fz.rf_eval(program, x, v) - x @ v) for x, v in graph.pairs()), default=0.0)
    rep.check("kernel average equals pairing on the graph", contact, rep.tol)
    ident = max(float(np.max(np.abs(fz.resolvent_mono(program, tau, x + tau * v) - x))) for x, v in graph.pairs())
    rep.check("resolvent fixes graph points", ident, rep.tol)
    diam = max(1.0, float(np.max(np.ptp(graph.X, axis=0))))
    ys = rng.standard_normal((int(cfg.get("random_queries", 50)), graph.dim)) * 10 * diam
    xs = [fz.resolvent_mono(program, tau, y) for y in ys]
    outside = sum(not hull_membership(x, graph.X, tol=rep.tol)[0] for x in xs)
    rep.check("resolvent stays in the primal hull", outside, 0)
    expans = 0.0
    for i in range(len(ys) - 1):
        expans = max(expans, np.linalg.norm(xs[i] - xs[i + 1]) - np.linalg.norm(ys[i] - ys[i + 1]))
    rep.check("resolvent is nonexpansive", expans, rep.tol)
    if group is not None:
        eq = 0.0
        for y, x in zip(ys, xs):
            for U in group:
                eq = max(eq, float(np.linalg.norm(fz.resolvent_mono(program, tau, U @ y) - U @ x)))
        rep.check("resolvent commutes with the group", eq, rep.tol)
    d = graph.dim
    rep.tables["resolvent.csv"] = (["index"] + [f"y{i}" for i in range(d)] + [f"x{i}" for i in range(d)]
                                   + ["contact"], rows)


def suite_kirszbraun(cfg, rep, rng, base):
    data = _resolve(cfg, "data", kb.LipschitzData.from_dict, base)
    group = _resolve(cfg, "group", fz.IsometryGroup.from_dict, base)
    if data is None:
        raise InputError("config needs 'data'")
    cay = kb.CayleyExtension(data)
    routes = {"envelope": lambda x: kb.alm_extend(data, x)[0], "cayley": cay}
    spread = max(1.0, float(np.max(np.ptp(data.sites, axis=0))))
    qs = rng.standard_normal((int(cfg.get("random_queries", 20)), data.dim)) * 2 * spread
    rows = []
    for name, F in routes.items():
        interp = max(float(np.max(np.abs(F(y) - w))) for y, w in zip(data.sites, data.values))
        rep.check(f"{name}: interpolates the data", interp, rep.tol)
        pts = np.vstack([data.sites, qs])
        vals = np.array([F(p) for p in pts])
        ratio = 0.0
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                dist = np.linalg.norm(pts[i] - pts[j])
                if dist > 1e-12:
                    ratio = max(ratio, np.linalg.norm(vals[i] - vals[j]) / dist)
        rep.check(f"{name}: Lipschitz ratio within L", ratio, data.L * (1 + rep.tol))
        if group is not None:
            eq = 0.0
            for q, v in zip(qs, vals[len(data.sites):]):
                for U in group:
                    eq = max(eq, float(np.linalg.norm(F(U @ q) - U @ v)))
            rep.check(f"{name}: commutes with the group", eq, rep.tol)
        for k, (p, v) in enumerate(zip(pts, vals)):
            rows.append([name, k, *p, *v])
        rep.results[name] = vals.tolist()
    d = data.dim
    rep.tables["extension.csv"] = (["route", "index"] + [f"x{i}" for i in range(d)]
                                   + [f"f{i}" for i in range(d)], rows)


def suite_coupling(cfg, rep, rng, base, timings=False):
    B = _resolve(cfg, "coupling", mps.DoublyStochastic.from_dict, base)
    if B is None:
        raise InputError("config needs a 'coupling'")
    N = B.order
    Z = _resolve(cfg, "Z", mps.EmpiricalSample.from_dict, base) or mps.EmpiricalSample(np.eye(N))
    Zp = _resolve(cfg, "Zp", mps.EmpiricalSample.from_dict, base) or mps.EmpiricalSample(np.eye(N))
    Ks = [int(k) for k in cfg.get("refinements", [1, 2, 4, 8])]
    rows = []
    disc = []
    worst_count = 0.0
    for K in Ks:
        t0 = time.perf_counter()
        g = mps.approx_coupling(B, K)
        d = mps.coupling_discrepancy(g, B, Z, Zp)
        ms = (time.perf_counter() - t0) * 1e3
        C = mps.count_matrix(g, N)
        worst_count = max(worst_count, float(np.max(np.abs(C / (N * K) - B.matrix))) * N * K)
        disc.append(d)
        rows.append([K, d, round(ms, 3) if timings else ""])
    rep.check("count error at most one atom", worst_count, 1.0 + 1e-9)
    rise = max((disc[i + 1] - disc[i] for i in range(len(disc) - 1)), default=0.0)
    rep.check("discrepancy nonincreasing in K", rise, 1e-9)
    rep.results["discrepancy"] = disc
    rep.tables["discrepancy.csv"] = (["K", "discrepancy", "runtime_ms"], rows)


def suite_evolve(cfg, rep, rng, base):
    op = _resolve(cfg, "operator", dis.operator_from_dict, base)
    if op is None:
        raise InputError("config needs an 'operator'")
    x0 = op.check_point(cfg.get("x0", np.ones(op.dim)))
    t = float(cfg.get("t", 1.0))
    n = int(cfg.get("n", 2048))
    xT, traj = dis.flow(op, x0, t, n, record=True)
    gap = float(np.linalg.norm(xT - dis.flow(op, x0, t, n // 2)))
    rep.results["final"] = xT.tolist()
    rep.results["cauchy_gap"] = gap
    if isinstance(op, dis.LinearMatrix):
        err = float(np.linalg.norm(xT - expm(t * op.M) @ x0))
        rep.check("matches the matrix exponential", err, 1e-3)
    pairs = rng.standard_normal((int(cfg.get("random_pairs", 5)), 2, op.dim))
    worst = -np.inf
    for a, b in pairs:
        fa, fb = dis.flow(op, a, t, n), dis.flow(op, b, t, n)
        # the exponential formula is only a surrogate; its n-doubling gaps widen the bound
        slack = (np.linalg.norm(fa - dis.flow(op, a, t, n // 2))
                 + np.linalg.norm(fb - dis.flow(op, b, t, n // 2)))
        lhs = np.linalg.norm(fa - fb) - slack
        worst = max(worst, lhs - math.exp(op.lam * t) * np.linalg.norm(a - b))
    rep.check("flow contracts at rate exp(lam t)", worst, rep.tol)
    sched = [s for s in cfg.get("schedule", []) if s < op.max_step]
    if sched:
        _, seq, diverged = dis.minimal_selection(op, x0, sched)
        drop = max((seq[i] - seq[i + 1] for i in range(len(seq) - 1)), default=0.0)
        rep.check("scaled Yosida norms nondecreasing", drop, 1e-8)
        rep.results["yosida_log"] = seq
        rep.results["diverged"] = diverged
    N = int(getattr(op, "atoms", op.dim))
    d = op.dim // N
    rows = [[tk, i, *xk.reshape(N, d)[i]] for tk, xk in traj for i in range(N)]
    rep.tables["trajectory.csv"] = (["t", "index"] + [f"x{i}" for i in range(d)], rows)


def suite_invariance(cfg, rep, rng, base):
    op = _resolve(cfg, "operator", dis.operator_from_dict, base)
    if op is None:
        raise InputError("config needs an 'operator'")
    N = int(getattr(op, "atoms", cfg.get("atoms", op.dim)))
    d = op.dim // N
    act = dis.BlockAction(N, d, mps.Permutation(rng.permutation(N)))
    res = dis.check_invariance_flow(op, act, tau=float(cfg.get("tau", 0.25)), n=int(cfg.get("n", 16)))
    for key in ("resolvent", "yosida", "flow"):
        rep.check(f"{key} commutes with relabelling", res[key], rep.tol)
    if not hasattr(op, "fn"):
        return
    half = rng.standard_normal((max(N // 2, 1), d))
    # every value appears twice, which exercises well-definedness of the table
    X = mps.EmpiricalSample(np.vstack([half, half])[:N])
    table = dis.euler_map_extract(op, X)
    ok = dis.check_dissipative_sections(table, op.lam)
    rep.check("sections are lam-dissipative", 0.0 if ok else 1.0, 0.0, ok)
    rows = [[table.keys[i], i, *table.xs[i], *table.values[i]] for i in range(len(table))]
    rep.tables["euler_table.csv"] = (["law", "index"] + [f"x{i}" for i in range(d)]
                                     + [f"value{i}" for i in range(d)], rows)


RUNNERS = {
    "extend-monotone": suite_extend_monotone,
    "kirszbraun": suite_kirszbraun,
    "coupling-approx": suite_coupling,
    "evolve": suite_evolve,
    "invariance-audit": suite_invariance,
}


def run_suite(suite, cfg, out, seed=0, tol=1e-6, base=Path("."), timings=False):
    """Run one suite and write its reports; returns the :class:`Report`."""
    if suite not in RUNNERS:
        raise InputError(f"unknown suite {suite!r}")
    if not isinstance(cfg, dict) or not cfg:
        raise InputError("configuration is empty")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rep = Report(suite, seed, tol)
    rng = np.random.default_rng(seed)
    if suite == "coupling-approx":
        suite_coupling(cfg, rep, rng, base, timings=timings)
    else:
        RUNNERS[suite](cfg, rep, rng, base)
    for name, (header, rows) in rep.tables.items():
        write_csv(out / name, header, rows)
    write_json(out / "report.json", rep.as_dict())
    return rep


def build_parser():
    parser = argparse.ArgumentParser(prog="invmono", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="suite", required=True)
    for name in SUITES + ("all",):
        p = sub.add_parser(name, help="run every suite with defaults" if name == "all" else f"run the {name} suite")
        p.add_argument("--config", type=Path, help="JSON configuration (defaults when omitted)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, default=0, help="random seed (unsigned 64-bit)")
        p.add_argument("--tol", type=float, default=1e-6, help="tolerance for the checks")
        p.add_argument("--timings", action="store_true",
                       help="fill runtime columns (reports are then not reproducible byte for byte)")
    return parser


def _setup_logging():
    level = os.environ.get("INVMONO_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    if not 0 <= args.seed < 2 ** 64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    suites = SUITES if args.suite == "all" else (args.suite,)
    failed = []
    try:
        if args.config is not None:
            cfg_all = read_json(args.config)
            base = args.config.parent
        else:
            cfg_all, base = None, Path(".")
        for suite in suites:
            if cfg_all is None:
                cfg = DEFAULTS[suite]
            elif args.suite == "all":
                cfg = cfg_all.get(suite, DEFAULTS[suite]) if isinstance(cfg_all, dict) and cfg_all else cfg_all
            else:
                cfg = cfg_all
            out = args.out / suite if args.suite == "all" else args.out
            rep = run_suite(suite, cfg, out, seed=args.seed, tol=args.tol, base=base, timings=args.timings)
            failed += [f"{suite}: {name}" for name in rep.failures()]
    except MalformedJSON as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if failed:
        for name in failed:
            print(f"FAILED invariant: {name}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
