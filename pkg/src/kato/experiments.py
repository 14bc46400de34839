"""One runner per CLI command.

A runner takes a validated :class:`~kato.scenario.ExperimentConfig` and a
job count and returns an :class:`Outcome`: named scalar metrics (the things
``[checks]`` can bound), tables and JSON documents to be written, and plot
specifications.  Runners never touch the file system; the CLI collects and
writes everything, so outputs stay deterministic under ``--jobs``.

Work that fans out (seeds, values of h, scan variants) goes through
:func:`fan_out`, whose workers receive plain data and rebuild the scenario.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
import math

import numpy as np

from . import boundary as bd
from . import escape as esc
from . import genflow as gf
from . import phasespace as ps
from .discrete import calculus as calc
from .discrete import polar as PL
from .discrete import scans
from .discrete.operator import GridSpec, assemble, interval_operator
from .errors import ConfigInvalid
from .evolve import (WavepacketFamily, boundary_flux, eigen_evolve, filtered_smoothing_scan,
                     propagate, radial_cut)
from .hamflow import PhasePoint
from .scenario import build_scenario
from .smooth import DyadicPartition, falling



@dataclass
class Outcome:
    command: str
    metrics: dict
    tables: dict = dc_field(default_factory=dict)  # file name -> (header, rows)
    documents: dict = dc_field(default_factory=dict)  # file name -> JSON-able object
    plots: list = dc_field(default_factory=list)  # (file name, kind, data)
    arrays: dict = dc_field(default_factory=dict)  # stem -> HusimiMeasure
    notes: list = dc_field(default_factory=list)


def fan_out(fn, items, jobs=1):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _param(cfg, key, default, kind=float, lo=None, hi=None):
    v = cfg.params.get(key, default)
    allowed = {int: (int,), float: (int, float), bool: (bool,), list: (list, tuple)}[kind]
    if not isinstance(v, allowed) or (kind is not bool and isinstance(v, bool)):
        raise ConfigInvalid(f"[{cfg.command}] {key} = {v!r} is not a valid {kind.__name__}")
    v = list(v) if kind is list else kind(v)
    if kind in (int, float) and ((lo is not None and v < lo) or (hi is not None and v > hi)):
        raise ConfigInvalid(f"[{cfg.command}] {key} = {v} outside [{lo}, {hi}]")
    return v


def _numbers(cfg, key, values, length=None):
    if length is not None and len(values) != length:
        raise ConfigInvalid(f"[{cfg.command}] {key} needs {length} numbers")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise ConfigInvalid(f"[{cfg.command}] {key} must hold numbers only")
    return [float(v) for v in values]


def _vector(cfg, key, default, length=None):
    return _numbers(cfg, key, _param(cfg, key, default, list), length)


def _h_list(cfg, key, default):
    vals = _numbers(cfg, key, _param(cfg, key, default, list))
    if not vals or any(not (0 < h < 1) for h in vals):
        raise ConfigInvalid(f"[{cfg.command}] {key} must be a list of values in (0, 1)")
    return vals


def _starts(cfg, key, default):
    rows = _param(cfg, key, default, list)
    if any(not isinstance(r, (list, tuple)) for r in rows):
        raise ConfigInvalid(f"[{cfg.command}] each of {key} is [x1, x2, xi1, xi2]")
    return [_numbers(cfg, key, r, 4) for r in rows]


# --------------------------------------------------------------------------
# classify
# --------------------------------------------------------------------------

def _synthetic_models():
    """(name, chart, zeta, expected class) with hand-derived answers."""
    disk_r = lambda x1, xp, xip: float(xip @ xip) / (1 + x1) ** 2
    concave_r = lambda x1, xp, xip: float(xip @ xip) / (1 - x1) ** 2
    inflect_r = lambda x1, xp, xip: float(xip @ xip) * (1 + x1 * xp[0])
    flat = bd.half_space()
    Z = bd.BoundaryPoint
    return [
        ("half_space", flat, Z([0.0], [1.0], -2.0), "Hyperbolic"),
        ("half_space", flat, Z([0.0], [1.0], -0.5), "Elliptic"),
        ("half_space", flat, Z([0.0], [1.0], -1.0), "Undetermined"),
        ("disk_model", bd.SyntheticChart(disk_r, name="disk_model"), Z([0.0], [1.0], -1.0),
         "Diffractive"),
        ("concave_model", bd.SyntheticChart(concave_r, name="concave_model"),
         Z([0.0], [1.0], -1.0), "Gliding"),
        ("inflection_model", bd.SyntheticChart(inflect_r, name="inflection_model"),
         Z([0.0], [1.0], -1.0), "HigherOrder3"),
    ]


def _label(cls):
    return cls.kind + (str(cls.k) if cls.kind == "HigherOrder" else "")


def run_classify(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    if sc.obstacle is None:
        raise ConfigInvalid("classify needs an obstacle")
    n = _param(cfg, "n_points", 100, int, lo=0)
    synthetic = _param(cfg, "synthetic", True, bool)
    rng = np.random.default_rng(cfg.seed)
    ob, fld = sc.obstacle, sc.field
    oracle = fld.flat and sc.spec["obstacle"] in ("disk", "cavity")
    glance = {"disk": "Diffractive", "cavity": "Gliding"}.get(sc.spec["obstacle"])
    rows, mismatches, homog = [], 0, 0
    produced = set()
    gaps = (0.3, -0.4, 0.0)
    for i in range(n):
        ang = rng.uniform(0, 2 * np.pi)
        probe = (0.5 if sc.spec["obstacle"] == "cavity" else 1.5) * ob.R0 \
            * np.array([np.cos(ang), np.sin(ang)])
        _, y, _ = bd.project_to_boundary(ob.component(probe), probe)
        chart = bd.build_chart(fld, ob, y, span=np.pi * ob.R0)
        xip = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
        r0 = chart.r0([0.0], [xip])
        gap = gaps[i % 3] * r0
        zeta = bd.BoundaryPoint([0.0], [xip], gap - r0)
        cls = bd.classify(chart, zeta)
        label = _label(cls)
        produced.add(label)
        if oracle:
            # flat disk / cavity: r0 = xi'^2, dr/dx1 = -+2 xi'^2 / radius
            expected = "Elliptic" if gap > 0 else "Hyperbolic" if gap < 0 else glance
            mismatches += label != expected
        else:
            expected = ""
        for lam in (0.5, 2.0):
            homog += _label(bd.classify(chart, zeta.scaled(lam))) != label
        rows.append([i, y[0], y[1], xip, zeta.tau, cls.gap, label, expected])
    if synthetic:
        for name, chart, zeta, expected in _synthetic_models():
            cls = bd.classify(chart, zeta)
            label = _label(cls)
            produced.add(label)
            mismatches += label != expected
            for lam in (0.5, 2.0):
                homog += _label(bd.classify(chart, zeta.scaled(lam))) != label
            rows.append([name, np.nan, np.nan, float(zeta.xip[0]), zeta.tau, cls.gap, label,
                         expected])
    five = {"Elliptic", "Hyperbolic", "Diffractive", "Gliding", "HigherOrder3"}
    metrics = {"mismatches": mismatches, "homogeneity_failures": homog,
               "classes_produced": len(produced & five), "n_points": len(rows)}
    counts = {k: sum(1 for r in rows if r[6] == k) for k in sorted(produced)}
    return Outcome("classify", metrics,
                   tables={"classes.csv": (["point", "y1", "y2", "xi_t", "tau", "gap", "class",
                                            "expected"], rows)},
                   documents={"class_counts.json": counts},
                   plots=[("classes.png", "classes", {"rows": rows, "obstacle": sc.spec})])


# --------------------------------------------------------------------------
# flow
# --------------------------------------------------------------------------

def _flow_job(item):
    spec, x0, xi0, s_end, oracle = item
    sc = build_scenario(spec)
    tr = gf.evolve_generalized(sc.field, sc.obstacle, PhasePoint(x0, xi0), (0.0, s_end))
    s, X, XI = tr.samples()
    p = sc.field.p(X, XI)
    jump = max((abs(float(sc.field.p(e.x[0], e.xi[1]) - sc.field.p(e.x[0], e.xi[0])))
                for e in tr.events if e.label == "Hyperbolic"), default=0.0)
    err = np.nan
    if oracle is not None:
        hs, hx, xe, _ = gf.circle_billiard(x0, xi0, s_end, oracle["radius"], oracle["inside"])
        hp = tr.hit_points()
        if len(hp) != len(hx):
            err = np.inf
        else:
            err = float(max(np.max(np.abs(hp - hx), initial=0.0),
                            np.max(np.abs(tr.end.x - xe))))
    rows = [[i, seg.kind, float(seg.s[j]), *seg.x[j], *seg.xi[j], seg.label]
            for i, seg in enumerate(tr.segments) for j in range(len(seg.s))]
    events = [[float(e.s[0]), *e.x[0], *e.xi[0], *e.xi[1], e.label] for e in tr.events]
    return dict(n_reflections=tr.n_reflections, energy_drift=float(np.max(np.abs(p - p[0]))),
                jump=jump, oracle_error=err, rows=rows, events=events, path=X.tolist())


def _random_starts(rng, kind, count):
    out = []
    for _ in range(count):
        if kind == "cavity":
            r, a, b = rng.uniform(0, 0.9), rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)
            out.append([r * np.cos(a), r * np.sin(a), np.cos(b), np.sin(b)])
        else:
            r, a = rng.uniform(1.5, 2.5), rng.uniform(0, 2 * np.pi)
            x0 = r * np.array([np.cos(a), np.sin(a)])
            d = -x0 / r
            aim = rng.uniform(-0.95, 0.95) * np.array([-d[1], d[0]]) - x0
            xi = aim / np.linalg.norm(aim)
            out.append([*x0, *xi])
    return out


def run_flow(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    starts = _starts(cfg, "starts", [[2.0, 0.0, -1.0, 0.25]])
    n_rand = _param(cfg, "random_starts", 0, int, lo=0)
    n_refl = _param(cfg, "reflections", 10, int, lo=1)
    s_end = _param(cfg, "s_end", 2.0, float, lo=1e-6)
    kind = sc.spec["obstacle"]
    circle = sc.field.flat and kind in ("disk", "cavity")
    oracle = {"radius": float(sc.spec.get("radius", 1.0)), "inside": kind == "cavity"} \
        if circle else None
    if n_rand and not circle:
        raise ConfigInvalid("random_starts needs a flat disk or cavity scenario")
    rng = np.random.default_rng(cfg.seed)
    items = [(cfg.scenario, r[:2], r[2:], s_end, oracle) for r in starts]
    for r in _random_starts(rng, kind, n_rand):
        x0, xi0 = np.array(r[:2]), np.array(r[2:])
        if kind == "cavity":
            # run just past the requested number of reflections
            hs, _, _, _ = gf.circle_billiard(x0, xi0, 1e6, oracle["radius"], True,
                                             max_hits=n_refl + 1)
            end = 0.5 * (hs[n_refl - 1] + hs[n_refl])
        else:
            hs, _, _, _ = gf.circle_billiard(x0, xi0, 1e6, oracle["radius"], False)
            end = (hs[-1] if hs.size else 0.0) + 1.0
        items.append((cfg.scenario, r[:2], r[2:], float(end), oracle))
    res = fan_out(_flow_job, items, jobs)
    tables = {}
    for k, r in enumerate(res):
        tables[f"trajectory_{k:03d}.csv"] = (["segment", "kind", "s", "x1", "x2", "xi1", "xi2",
                                              "class"], r["rows"])
    tables["events.csv"] = (["trajectory", "s", "x1", "x2", "xi1_in", "xi2_in", "xi1_out",
                             "xi2_out", "class"],
                            [[k] + e for k, r in enumerate(res) for e in r["events"]])
    summary = [[k, *it[1], *it[2], it[3], r["n_reflections"], r["energy_drift"],
                r["oracle_error"]] for k, (it, r) in enumerate(zip(items, res))]
    tables["summary.csv"] = (["trajectory", "x1", "x2", "xi1", "xi2", "s_end", "reflections",
                              "energy_drift", "oracle_error"], summary)
    errs = [r["oracle_error"] for r in res]
    metrics = {"n_trajectories": len(res),
               "min_reflections": min(r["n_reflections"] for r in res),
               "max_energy_drift": max(r["energy_drift"] for r in res),
               "max_reflection_p_jump": max(r["jump"] for r in res),
               "max_oracle_error": float(np.max(errs)) if circle else float("nan")}
    if n_rand:
        metrics["min_random_reflections"] = min(r["n_reflections"] for r in res[len(starts):])
    return Outcome("flow", metrics, tables=tables,
                   plots=[("trajectories.png", "paths",
                           {"paths": [r["path"] for r in res], "obstacle": sc.spec})])


# --------------------------------------------------------------------------
# nontrap
# --------------------------------------------------------------------------

def _nontrap_job(item):
    spec, start, s_max, max_events, exit_radius = item
    sc = build_scenario(spec)
    v = gf.check_nontrapping(sc.field, sc.obstacle, PhasePoint(start[:2], start[2:]),
                             gf.Budget(s_max, max_events), exit_radius)
    path = v.trajectory.samples()[1][:: max(1, len(v.trajectory.samples()[0]) // 400)]
    return dict(kind=v.kind, s0=v.s0, events=v.event_count, min_radius=v.min_radius,
                path=path.tolist())


def run_nontrap(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    n = _param(cfg, "n_seeds", 100, int, lo=0)
    lo, hi = _vector(cfg, "annulus", [1.5, 2.5], 2)
    s_max = _param(cfg, "s_max", 200.0, float, lo=1e-3)
    max_events = _param(cfg, "max_events", 1000, int, lo=1)
    exit_radius = cfg.params.get("exit_radius")
    if exit_radius is not None and exit_radius < 3 * sc.R0:
        raise ConfigInvalid("exit_radius must be at least 3 R0")
    starts = _starts(cfg, "starts", [])
    total = n + len(starts)
    rng = np.random.default_rng(cfg.seed)
    while len(starts) < total:
        r, a, b = rng.uniform(lo, hi), rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)
        x = r * np.array([np.cos(a), np.sin(a)])
        if sc.obstacle is not None and sc.obstacle.b(x) <= 0:
            continue
        starts.append([*x, np.cos(b), np.sin(b)])
    res = fan_out(_nontrap_job, [(cfg.scenario, s, s_max, max_events, exit_radius)
                                 for s in starts], jobs)
    rows = [[k, *s, r["kind"], r["s0"] if r["s0"] is not None else np.nan, r["events"],
             r["min_radius"] if r["min_radius"] is not None else np.nan]
            for k, (s, r) in enumerate(zip(starts, res))]
    trapped = [r["events"] for r in res if r["kind"] == "Trapped"]
    metrics = {"n_runs": len(res), "n_escaped": sum(r["kind"] == "Escaped" for r in res),
               "n_trapped": len(trapped),
               "min_trapped_events": min(trapped) if trapped else 0,
               "max_trapped_events": max(trapped) if trapped else 0}
    return Outcome("nontrap", metrics,
                   tables={"verdicts.csv": (["run", "x1", "x2", "xi1", "xi2", "verdict", "s0",
                                             "events", "min_radius"], rows)},
                   plots=[("nontrap.png", "paths",
                           {"paths": [r["path"] for r in res[:50]], "obstacle": sc.spec})])


# --------------------------------------------------------------------------
# incoming
# --------------------------------------------------------------------------

def run_incoming(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    starts = _starts(cfg, "starts", [[5.0, 0.3, 1.0, 0.2], [4.0, 0.0, -1.0, 0.0],
                                     [6.0, -1.0, 0.5, 0.5], [3.5, 2.0, 1.0, -0.3]])
    deltas = _vector(cfg, "deltas", [0.1, 0.05])
    if any(not 0 < d < 1 for d in deltas):
        raise ConfigInvalid("deltas must lie in (0, 1)")
    s_budget = _param(cfg, "s_budget", 200.0, float, lo=1e-3)
    span = _param(cfg, "monitor_span", 20.0, float, lo=1e-3)
    R0 = sc.R0
    rows, curves = [], []
    min_r1, max_ex, min_margin, missing = np.inf, -np.inf, np.inf, 0
    for st in starts:
        for d in deltas:
            start = PhasePoint(st[:2], st[2:])
            try:
                s1, w = gf.find_incoming_time(sc.field, sc.obstacle, start, d, R0, s_budget)
            except gf.NotFoundWithinBudget:
                missing += 1
                rows.append([*st, d, np.nan] + [np.nan] * 8)
                continue
            mon = gf.monitor_F(sc.field, w, (0.0, -span), d, R0)
            a = float(gf.incoming_symbol(sc.field, w.x, w.xi))
            rx, rxi = np.linalg.norm(w.x), np.linalg.norm(w.xi)
            m_radius = rx - 3 * R0
            m_cone = -(a + 3 * d * rx * rxi)
            min_r1 = min(min_r1, mon.min_dF1_ratio)
            max_ex = max(max_ex, mon.max_dF2_ratio - 6 * d)
            min_margin = min(min_margin, m_radius, m_cone)
            rows.append([*st, d, s1, *w.x, *w.xi, m_radius, m_cone, mon.min_dF1_ratio,
                         mon.max_dF2_ratio])
            curves.append({"s": mon.s.tolist(), "F1": mon.F1.tolist(), "F2": mon.F2.tolist(),
                           "label": f"start {st[:2]}, delta {d}"})
    metrics = {"min_dF1_ratio": float(min_r1), "max_dF2_excess": float(max_ex),
               "min_witness_margin": float(min_margin), "n_not_found": missing}
    return Outcome("incoming", metrics,
                   tables={"incoming.csv": (["x1", "x2", "xi1", "xi2", "delta", "s1", "w_x1",
                                             "w_x2", "w_xi1", "w_xi2", "margin_radius",
                                             "margin_cone", "min_dF1_ratio", "max_dF2_ratio"],
                                            rows)},
                   plots=[("monitor.png", "monitor", {"curves": curves})])


# --------------------------------------------------------------------------
# escape-check
# --------------------------------------------------------------------------

def run_escape(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    shape = tuple(int(v) for v in _vector(cfg, "grid", [64, 64, 32, 32], 4))
    if len(shape) != 4 or min(shape) < 2:
        raise ConfigInvalid("grid must be four integers >= 2")
    kw = {k: float(cfg.params[k]) for k in ("delta", "epsilon", "rho", "nu", "M0", "xi0_norm")
          if k in cfg.params}
    try:
        params = esc.EscapeParams(R0=sc.R0, **kw)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc
    grid = esc.EscapeGrid.covering(params, shape)
    rep = esc.check_escape_inequalities(params, esc.CutoffFamily(params), sc.field, grid)
    metrics = {"hphi_sign_margin": rep.hphi_sign_margin,
               "lambda_sign_margin": rep.lambda_sign_margin, "escape_C": rep.escape_C,
               "escape_Cprime": rep.escape_Cprime, "e0_growth_margin": rep.e0_growth_margin,
               "n_points": rep.n_points}
    return Outcome("escape-check", metrics, documents={"escape_report.json": rep.to_dict()},
                   plots=[("margins.png", "bars",
                           {"labels": ["iv margin", "v margin", "C", "C'"],
                            "values": [rep.hphi_sign_margin, rep.lambda_sign_margin,
                                       rep.escape_C, rep.escape_Cprime]})])


# --------------------------------------------------------------------------
# funcalc-check
# --------------------------------------------------------------------------

def run_funcalc(cfg, jobs=1):
    n = _param(cfg, "n", 200, int, lo=4)
    length = _param(cfg, "length", math.pi, float, lo=1e-6)
    h = _param(cfg, "h", 1 / 16, float, lo=1e-6, hi=1.0)
    k = _param(cfg, "n_vectors", 20, int, lo=1)
    N = _param(cfg, "N", 3, int, lo=2, hi=8)
    V0 = float(cfg.scenario.get("V0", 1.0))
    P = interval_operator(n, length, V0)
    rng = np.random.default_rng(cfg.seed)
    V = rng.normal(size=(n, k))
    ext = calc.dyadic_extension(N)
    th = DyadicPartition().theta
    E = calc.apply_function(P, th, h, V)
    H = calc.apply_function(P, th, h, V, backend="hs", ext=ext)
    col = np.linalg.norm(E - H, axis=0) / np.maximum(np.linalg.norm(E, axis=0), 1e-300)
    disc = float(np.linalg.norm(E - H) / np.linalg.norm(E))
    ys = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    slope, peaks = calc.dbar_slope(ext, ys)
    # f vanishing on the spectrum
    lam = P.spectral().values
    far = lambda t: falling(t, 0.5 * h * h * lam[0] * 0.25, 0.5 * h * h * lam[0])
    zero_out = float(np.max(np.abs(calc.apply_function(P, far, h, V))))
    # 2 x 2 projector from a bump with f(0.5) = 1 and f(3) = 0
    A = np.diag([0.5, 3.0])
    bump = DyadicPartition().chi
    Pr = calc.apply_function(A, bump, 1.0, np.eye(2))
    proj_err = float(np.max(np.abs(Pr - np.diag([1.0, 0.0]))))
    # Lambda^{1/2} twice against Lambda^1
    v = V[:, 0]
    semi = float(np.linalg.norm(calc.fractional_power(P, 0.5, calc.fractional_power(P, 0.5, v))
                                - calc.fractional_power(P, 1.0, v))
                 / np.linalg.norm(calc.fractional_power(P, 1.0, v)))
    metrics = {"hs_discrepancy": disc, "max_column_discrepancy": float(col.max()),
               "dbar_slope": slope, "disjoint_output": zero_out, "projector_error": proj_err,
               "semigroup_error": semi}
    return Outcome("funcalc-check", metrics,
                   tables={"dbar.csv": (["y", "max_dbar"], [[y, p] for y, p in zip(ys, peaks)]),
                           "columns.csv": (["vector", "relative_discrepancy"],
                                           [[i, c] for i, c in enumerate(col)])},
                   plots=[("dbar.png", "loglog", {"x": ys.tolist(), "y": peaks.tolist(),
                                                  "xlabel": "y", "ylabel": "max |dbar|",
                                                  "slope": slope})])


# --------------------------------------------------------------------------
# commutator-scan
# --------------------------------------------------------------------------

@lru_cache(maxsize=2)
def _scan_operator(n, length, V0):
    P = interval_operator(n, length, V0)
    P.spectral()
    return P


def _scan_job(item):
    variant, n, length, V0, order, h_list, seed = item
    P = _scan_operator(n, length, V0)
    x = P.coords[:, 0]
    chi = falling(x, 0.0, length, order=order)
    res = scans.commutator_scan(P, chi, DyadicPartition(order).theta, np.array(h_list),
                                variant, seed=seed)
    return res.to_dict()


def run_commutator(cfg, jobs=1, variants=None):
    n = _param(cfg, "n", 8191, int, lo=16)
    length = _param(cfg, "length", 4 * math.pi, float, lo=1e-6)
    order = _param(cfg, "partition_order", 2, int, lo=1, hi=9)
    exps = _vector(cfg, "h_exponents", [3, 4, 5, 6, 7])
    if len(exps) < 5:
        raise ConfigInvalid("h_exponents needs at least 5 values")
    variants = variants or _param(cfg, "variants", list(scans.VARIANTS), list)
    variants = [scans.canonical_variant(v) for v in variants]
    bad = [v for v in variants if v not in scans.VARIANTS]
    if bad:
        raise ConfigInvalid(f"unknown variants {bad}; choose from {scans.VARIANTS}")
    h_list = [2.0 ** -float(e) for e in exps]
    V0 = float(cfg.scenario.get("V0", 1.0))
    res = fan_out(_scan_job, [(v, n, length, V0, order, h_list, cfg.seed) for v in variants],
                  jobs)
    metrics = {f"slope_{r['variant']}": r["slope"] for r in res}
    rows = [[r["variant"], h, nv] for r in res for h, nv in zip(r["h"], r["norms"])]
    return Outcome("commutator-scan", metrics,
                   tables={"norms.csv": (["variant", "h", "norm"], rows)},
                   documents={"slopes.json": {r["variant"]: r for r in res}},
                   plots=[("scan.png", "scan", {"results": res})])


# --------------------------------------------------------------------------
# resolvent-check
# --------------------------------------------------------------------------

def _resolvent_operator(cfg, sc):
    dim = _param(cfg, "dim", 2, int, lo=1, hi=2)
    if dim == 1:
        return interval_operator(_param(cfg, "n", 200, int, lo=4),
                                 _param(cfg, "length", math.pi, float, lo=1e-6),
                                 float(sc.spec.get("V0", 1.0)))
    L = _param(cfg, "box", 6.0, float, lo=1.0)
    dx = _param(cfg, "dx", 1 / 16, float, lo=1e-4)
    return assemble(sc.field, sc.obstacle, GridSpec(dim=2, dx=dx, L=L))


def run_resolvent(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    P = _resolvent_operator(cfg, sc)
    h = _param(cfg, "h", 1 / 8, float, lo=1e-6, hi=1.0)
    zs = [complex(*_numbers(cfg, "z", z, 2)) for z in
          _param(cfg, "z", [[0.0, 1.0], [0.5, 0.1], [1.0, 0.5], [2.0, -0.3]], list)]
    if any(z.imag == 0 for z in zs):
        raise ConfigInvalid("every z needs a nonzero imaginary part")
    k = _param(cfg, "n_f", 20, int, lo=1)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    slack, Cmax, res = -np.inf, 0.0, 0.0
    for z in zs:
        F = rng.normal(size=(P.n, k)) + 1j * rng.normal(size=(P.n, k))
        rep = scans.resolvent_check(P, z, h, F)
        slack = max(slack, rep.bound_slack)
        Cmax = max(Cmax, rep.max_constant)
        res = max(res, rep.residual)
        rows += [[z.real, z.imag, j, rep.norm_ratio[j], rep.constants[j]] for j in range(k)]
    metrics = {"bound_slack": float(slack), "max_C": float(Cmax), "max_residual": float(res),
               "n_unknowns": P.n}
    return Outcome("resolvent-check", metrics,
                   tables={"resolvent.csv": (["re_z", "im_z", "f", "norm_ratio", "C"], rows)},
                   plots=[("norm_ratio.png", "hist", {"values": [r[3] for r in rows],
                                                      "xlabel": "||u|| |Im z| / ||f||"})])


# --------------------------------------------------------------------------
# lp-check
# --------------------------------------------------------------------------

def run_lp(cfg, jobs=1):
    n = _param(cfg, "n", 200, int, lo=4)
    length = _param(cfg, "length", math.pi, float, lo=1e-6)
    k = _param(cfg, "n_vectors", 20, int, lo=1)
    P = interval_operator(n, length, float(cfg.scenario.get("V0", 1.0)))
    lam_max = P.spectral().lam_max
    p_max = cfg.params.get("p_max")
    p_max = int(np.ceil(np.log2(lam_max))) if p_max is None else int(p_max)
    rng = np.random.default_rng(cfg.seed)
    V = rng.normal(size=(n, k))
    lp = calc.littlewood_paley(P, V, p_max)
    res = np.linalg.norm(V - np.sum(lp.pieces, axis=0), axis=0) / np.linalg.norm(V, axis=0)
    ratios = np.sum([np.linalg.norm(p, axis=0) ** 2 for p in lp.pieces], axis=0) \
        / np.linalg.norm(V, axis=0) ** 2
    # one eigenvector touches at most two theta pieces
    sd = P.spectral()
    single = calc.littlewood_paley(P, sd.vectors[:, n // 2], p_max)
    nonzero = int(np.sum(single.energies[1:] > 1e-24))
    rows = [[j, res[j], ratios[j]] for j in range(k)]
    metrics = {"max_residual": float(res.max()), "min_energy_ratio": float(ratios.min()),
               "max_energy_ratio": float(ratios.max()), "p_max": p_max,
               "eigenvector_pieces": nonzero}
    piece_e = [float(np.sum(np.linalg.norm(p, axis=0) ** 2)) for p in lp.pieces]
    return Outcome("lp-check", metrics,
                   tables={"lp.csv": (["vector", "residual", "energy_ratio"], rows),
                           "pieces.csv": (["piece", "energy"], list(zip(lp.labels, piece_e)))},
                   plots=[("pieces.png", "bars", {"labels": lp.labels, "values": piece_e})])


# --------------------------------------------------------------------------
# smooth-scan
# --------------------------------------------------------------------------

def _family(cfg, h_list):
    x0 = tuple(_vector(cfg, "x0", [-3.0, 0.3], 2))
    xi0 = tuple(_vector(cfg, "xi0", [-1.0, 0.0], 2))
    if len(x0) != 2 or len(xi0) != 2 or np.hypot(*xi0) == 0:
        raise ConfigInvalid("x0 and xi0 must be 2-vectors, xi0 nonzero")
    return WavepacketFamily(x0=x0, xi0=xi0, h_list=tuple(h_list))


def _smooth_job(item):
    params, h = item
    fam = WavepacketFamily(x0=params["x0"], xi0=params["xi0"], h_list=(h,))
    chi0, chi1 = radial_cut(*params["chi0"]), radial_cut(*params["chi1"])
    theta = DyadicPartition(params["order"]).theta
    if params["backend"] == "polar":
        op = PL.PolarExterior(R=params["R"], R_out=params["R_out"], V0=params["V0"],
                              kdr=params["kdr"])
        row = filtered_smoothing_scan(op, fam, chi0, chi1, theta, params["T"]).rows[0]
    else:
        sc = build_scenario(params["scenario"])
        P = assemble(sc.field, sc.obstacle, GridSpec(dim=2, dx=params["dx"], L=params["box"]))
        r = np.linalg.norm(P.coords, axis=1)
        row = filtered_smoothing_scan(P, fam, chi0(r), chi1(r), theta, params["T"]).rows[0]
    return dict(h=row.h, q_quarter=float(row.q_quarter), q_filtered=float(row.q_filtered), ratio=float(row.ratio),
                T_eff=float(row.T_eff), band_mass=float(row.band_mass))


def run_smooth(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    h_list = _h_list(cfg, "h_list", [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    backend = cfg.params.get("backend", "polar")
    if backend not in ("polar", "grid"):
        raise ConfigInvalid("backend must be 'polar' or 'grid'")
    if backend == "polar" and not (sc.spec["obstacle"] == "disk" and sc.field.flat):
        raise ConfigInvalid("the polar backend needs the flat disk-exterior scenario")
    fam = _family(cfg, h_list)
    params = dict(x0=fam.x0, xi0=fam.xi0, chi0=_vector(cfg, "chi0", [3.0, 4.0], 2),
                  chi1=_vector(cfg, "chi1", [4.0, 5.0], 2), T=_param(cfg, "T", 0.5, float, 1e-6),
                  order=_param(cfg, "partition_order", 6, int, 1, 9), backend=backend,
                  R=float(sc.spec.get("radius", 1.0)),
                  R_out=_param(cfg, "R_out", 12.0, float, lo=2.0),
                  V0=float(sc.spec.get("V0", 1.0)), kdr=_param(cfg, "kdr", 0.25, float, 1e-3, 0.5),
                  dx=_param(cfg, "dx", 1 / 16, float, 1e-4), box=_param(cfg, "box", 6.0, float, 1.0),
                  scenario=cfg.scenario)
    rows = fan_out(_smooth_job, [(params, h) for h in h_list], jobs)
    q = np.array([r["q_filtered"] for r in rows])
    ratio = np.array([r["ratio"] for r in rows])
    metrics = {"spread": float(q.max() / q.min()) if q.min() > 0 else float("inf"),
               "min_ratio": float(ratio.min()), "max_ratio": float(ratio.max()),
               "min_band_mass": float(min(r["band_mass"] for r in rows))}
    keys = ["h", "q_quarter", "q_filtered", "ratio", "T_eff", "band_mass"]
    return Outcome("smooth-scan", metrics,
                   tables={"quotients.csv": (keys, [[r[k] for k in keys] for r in rows])},
                   documents={"quotients.json": {"rows": rows}},
                   plots=[("quotients.png", "quotients", {"rows": rows})])


# --------------------------------------------------------------------------
# packet experiments on a Cartesian grid (flux, measure)
# --------------------------------------------------------------------------

def packet_setup(spec, x0, xi0, h, T, margin=10.0, order=None):
    """Generalized ray of the packet over t in [0, T] (s = -t/h), a grid box
    covering it with ``margin`` sqrt(h) to spare, the operator, and u0."""
    sc = build_scenario(spec)
    flow = gf.evolve_generalized(sc.field, sc.obstacle, PhasePoint(x0, xi0), (0.0, -T / h))
    _, X, _ = flow.samples()
    m = margin * np.sqrt(h)
    lo, hi = X.min(0) - m, X.max(0) + m
    dx = h / 2
    nx = np.ceil((hi - lo) / dx)
    order = order or (4 if sc.field.flat else 2)
    grid = GridSpec(dim=2, dx=dx, box=(lo[0], lo[0] + dx * nx[0], lo[1], lo[1] + dx * nx[1]),
                    order=order)
    P = assemble(sc.field, sc.obstacle, grid)
    u0 = WavepacketFamily(x0=tuple(x0), xi0=tuple(xi0)).member(P, h)
    return sc, flow, P, u0


def _flux_job(item):
    p, h = item
    T, dt = p["T_factor"] * h, p["dt_factor"] * h * h
    sc, flow, P, u0 = packet_setup(p["scenario"], p["x0"], p["xi0"], h, T, p["margin"])
    tr = propagate(P, u0, T, dt, every=p["every"])
    chi = lambda x: radial_cut(*p["chi"])(np.linalg.norm(x, axis=-1))
    chi1 = lambda x: radial_cut(*p["chi1"])(np.linalg.norm(x, axis=-1))
    rep = boundary_flux(P, tr, chi, h, chi1)
    zero = type(tr)(tr.times, np.zeros_like(tr.states), tr.dt, 0.0, 0.0, P)
    z = boundary_flux(P, zero, chi, h, chi1)
    return dict(h=h, **rep.to_dict(), zero_flux=z.flux, norm_drift=tr.norm_drift, n=P.n,
                reflections=flow.n_reflections)


def _packet_params(cfg, sc):
    x0 = _vector(cfg, "x0", [-2.2, 0.3], 2)
    xi0 = np.array(_vector(cfg, "xi0", [-1.0, 0.0], 2))
    if len(x0) != 2 or xi0.size != 2 or np.linalg.norm(xi0) == 0:
        raise ConfigInvalid("x0 and xi0 must be 2-vectors, xi0 nonzero")
    if sc.obstacle is not None and sc.obstacle.b(np.array(x0)) <= 0:
        raise ConfigInvalid("x0 lies inside the obstacle")
    return dict(scenario=cfg.scenario, x0=x0, xi0=(xi0 / np.linalg.norm(xi0)).tolist(),
                T_factor=_param(cfg, "T_factor", 1.25, float, lo=1e-3),
                dt_factor=_param(cfg, "dt_factor", 0.1, float, lo=1e-4, hi=1.0),
                every=_param(cfg, "every", 8, int, lo=1),
                margin=_param(cfg, "margin", 10.0, float, lo=3.0))


def run_flux(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    if sc.obstacle is None:
        raise ConfigInvalid("flux needs an obstacle")
    p = _packet_params(cfg, sc)
    p["chi"] = _vector(cfg, "chi", [1.5, 2.0], 2)
    p["chi1"] = _vector(cfg, "chi1", [2.0, 2.5], 2)
    h_list = _h_list(cfg, "h_list", [1 / 16, 1 / 32])
    rows = fan_out(_flux_job, [(p, h) for h in h_list], jobs)
    ratios = np.array([r["ratio"] for r in rows])
    metrics = {"max_ratio": float(ratios.max()),
               "ratio_spread": float(ratios.max() / ratios.min()) if ratios.min() > 0
               else float("inf"),
               "max_tangential_trace": float(max(r["tangential_trace"] for r in rows)),
               "zero_flux": float(max(r["zero_flux"] for r in rows)),
               "max_norm_drift": float(max(r["norm_drift"] for r in rows))}
    keys = ["h", "flux", "rhs", "bulk", "endpoint", "ratio", "tangential_trace", "n"]
    return Outcome("flux", metrics,
                   tables={"flux.csv": (keys, [[r[k] for k in keys] for r in rows])},
                   plots=[("flux.png", "semilogx", {"x": [r["h"] for r in rows],
                                                    "y": ratios.tolist(), "xlabel": "h",
                                                    "ylabel": "flux / rhs"})])


# --------------------------------------------------------------------------
# measure
# --------------------------------------------------------------------------

def _sigma_job(p, h):
    dt = p["dt_factor"] * h * h
    every = max(1, int(np.floor(np.pi * h * h / 4 / dt)))
    T = p["n_windows"] * every * dt
    sc, flow, P, u0 = packet_setup(p["scenario"], p["x0"], p["xi0"], h, T, p["margin"])
    tr = propagate(P, u0, T, dt, every=every)
    rep = ps.check_support_sigma(P, tr, h, sc.field, C_band=p["C_band"])
    # Husimi dump of the final state around its own moments
    xbar, xibar = ps._moments(P, tr.states[-1], h)
    phase = ps.PhaseGrid.window(xbar, xibar, 5 * np.sqrt(h), 5 * np.sqrt(h), 0.5 * np.sqrt(h))
    meas = ps.husimi(P.to_grid(tr.states[-1]), h, phase, P.dx, grid_axes=list(P.grid.axes()))
    return dict(kind="sigma", h=h, **rep.to_dict(), norm_drift=tr.norm_drift, n=P.n), meas


def _track_job(p, h):
    T, dt = p["T_factor"] * h, p["dt_factor"] * h * h
    sc, flow, P, u0 = packet_setup(p["scenario"], p["x0"], p["xi0"], h, T, p["margin"])
    tr = ps.track_centroid(P, u0, flow, T, dt, h, every=p["every"])
    cols = np.column_stack([tr.times, tr.x, tr.xi, tr.ray_x, tr.ray_xi, tr.error,
                            tr.guarded.astype(float), tr.mass])
    return dict(kind="track", h=h, max_error=tr.max_error, post_bounce=tr.post_bounce_error(),
                hits=tr.hit_times.tolist(), n=P.n, rows=cols.tolist()), None


def _measure_job(item):
    kind, p, h = item
    return _sigma_job(p, h) if kind == "sigma" else _track_job(p, h)


def run_measure(cfg, jobs=1):
    sc = build_scenario(cfg.scenario)
    p = _packet_params(cfg, sc)
    p["C_band"] = _param(cfg, "C_band", 5.0, float, lo=0.1)
    p["n_windows"] = _param(cfg, "n_windows", 64, int, lo=8)
    h_sigma = _param(cfg, "h_sigma", 1 / 32, float, lo=1e-4, hi=0.5)
    h_track = _h_list(cfg, "h_track", [1 / 16, 1 / 32, 1 / 64])
    items = []
    if _param(cfg, "sigma", True, bool):
        items.append(("sigma", p, h_sigma))
    if _param(cfg, "track", True, bool):
        items += [("track", p, h) for h in h_track]
    if not items:
        raise ConfigInvalid("measure: enable sigma and/or track")
    out = fan_out(_measure_job, items, jobs)
    metrics, tables, arrays, plots = {}, {}, {}, []
    docs = {}
    tracks = [r for r, _ in out if r["kind"] == "track"]
    for r, meas in out:
        if r["kind"] == "sigma":
            metrics["sigma_fraction"] = r["fraction"]
            docs["sigma.json"] = r
            arrays["husimi_final"] = meas
    if tracks:
        tracks.sort(key=lambda r: -r["h"])
        post = [r["post_bounce"] for r in tracks]
        metrics["final_post_bounce_error"] = float(post[-1])
        metrics["max_post_bounce_error"] = float(np.max(post))
        metrics["monotone"] = int(all(b < a for a, b in zip(post, post[1:])))
        head = ["t", "x1", "x2", "xi1", "xi2", "ray_x1", "ray_x2", "ray_xi1", "ray_xi2",
                "error", "guarded", "mass"]
        for r in tracks:
            tables[f"centroid_h{int(round(1 / r['h']))}.csv"] = (head, r.pop("rows"))
        tables["tracking.csv"] = (["h", "max_error", "post_bounce_error", "n"],
                                  [[r["h"], r["max_error"], r["post_bounce"], r["n"]]
                                   for r in tracks])
        plots.append(("centroids.png", "centroids",
                      {"tracks": [(r["h"], tables[f"centroid_h{int(round(1 / r['h']))}.csv"][1])
                                  for r in tracks], "obstacle": sc.spec}))
    return Outcome("measure", metrics, tables=tables, documents=docs, arrays=arrays,
                   plots=plots)


# --------------------------------------------------------------------------
# unitarity (used by the tests; not a CLI command)
# --------------------------------------------------------------------------

def unitarity_and_order(n=200, steps=1000, dt=1e-3, T=0.05, dts=None, seed=0):
    """Norm drift over ``steps`` Crank-Nicolson steps and the fitted order of
    the error against the eigen-expansion oracle at time T."""
    P = interval_operator(n)
    x = P.coords[:, 0]
    u0 = np.exp(-(x - 1.5) ** 2 / 0.05 + 3j * x)
    u0 /= np.linalg.norm(u0)
    drift = propagate(P, u0, steps * dt, dt, every=steps).norm_drift
    exact = eigen_evolve(P, u0, T)
    dts = dts or [T / 2**k for k in range(6, 10)]
    errs = [np.linalg.norm(propagate(P, u0, T, d, every=10**9).states[-1] - exact) for d in dts]
    order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    return drift, order, np.array(dts), np.array(errs)


COMMANDS = {
    "classify": (run_classify, ("mismatches", "homogeneity_failures", "classes_produced",
                                "n_points")),
    "flow": (run_flow, ("n_trajectories", "min_reflections", "max_energy_drift",
                        "max_reflection_p_jump", "max_oracle_error", "min_random_reflections")),
    "nontrap": (run_nontrap, ("n_runs", "n_escaped", "n_trapped", "min_trapped_events",
                              "max_trapped_events")),
    "incoming": (run_incoming, ("min_dF1_ratio", "max_dF2_excess", "min_witness_margin",
                                "n_not_found")),
    "escape-check": (run_escape, ("hphi_sign_margin", "lambda_sign_margin", "escape_C",
                                  "escape_Cprime", "e0_growth_margin", "n_points")),
    "funcalc-check": (run_funcalc, ("hs_discrepancy", "max_column_discrepancy", "dbar_slope",
                                    "disjoint_output", "projector_error", "semigroup_error")),
    "commutator-scan": (run_commutator, tuple(f"slope_{v}" for v in scans.VARIANTS)),
    "resolvent-check": (run_resolvent, ("bound_slack", "max_C", "max_residual", "n_unknowns")),
    "lp-check": (run_lp, ("max_residual", "min_energy_ratio", "max_energy_ratio", "p_max",
                          "eigenvector_pieces")),
    "smooth-scan": (run_smooth, ("spread", "min_ratio", "max_ratio", "min_band_mass")),
    "flux": (run_flux, ("max_ratio", "ratio_spread", "max_tangential_trace", "zero_flux",
                        "max_norm_drift")),
    "measure": (run_measure, ("sigma_fraction", "final_post_bounce_error",
                              "max_post_bounce_error", "monotone")),
}
