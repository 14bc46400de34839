"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``.  Each criterion drives the same runners
the CLI uses, on the configs shipped in ``configs/``, and compares against
fixed tolerances written out below (not the configs' own ``[checks]``).
"""
import sys
import time
from pathlib import Path

import pytest

from kato import experiments as X
from kato.scenario import load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _run(name, runner):
    cfg = load_config(CONFIGS / f"{name}.toml")
    t0 = time.perf_counter()
    out = runner(cfg, 1)
    return out.metrics, time.perf_counter() - t0


def _fmt(v):
    if isinstance(v, tuple):
        return "(" + ", ".join(_fmt(x) for x in v) + ")"
    return f"{v + 0.0:.4g}" if isinstance(v, float) else str(v)


def _detail(**kw):
    return ", ".join(f"{k}={_fmt(v)}" for k, v in kw.items())


def billiard_oracle():
    cav, t_cav = _run("flow_cavity", X.run_flow)
    ext, t_ext = _run("flow", X.run_flow)
    err = max(cav["max_oracle_error"], ext["max_oracle_error"])
    ok = (err <= 1e-6 and cav["min_random_reflections"] >= 10 and cav["n_trajectories"] == 10
          and t_cav <= 10.0)
    return ok, _detail(max_error=err, reflections_each=cav["min_random_reflections"],
                       runtime_s=t_cav, exterior_error=ext["max_oracle_error"])


def classification():
    disk, _ = _run("classify", X.run_classify)
    cav, _ = _run("classify_cavity", X.run_classify)
    ok = (disk["classes_produced"] == 5 and disk["mismatches"] == 0
          and cav["mismatches"] == 0 and disk["homogeneity_failures"] == 0)
    return ok, _detail(classes=disk["classes_produced"],
                       mismatches=disk["mismatches"] + cav["mismatches"])


def nontrapping():
    one, t1 = _run("nontrap", X.run_nontrap)
    two, t2 = _run("nontrap_two_disks", X.run_nontrap)
    ok = (one["n_escaped"] == 100 and one["n_runs"] == 100 and two["n_trapped"] == 1
          and two["min_trapped_events"] >= 50 and t1 <= 30 and t2 <= 30)
    return ok, _detail(escaped=f"{one['n_escaped']}/{one['n_runs']}",
                       trapped_events=two["min_trapped_events"], runtime_s=max(t1, t2))


def incoming_region():
    rows = [_run(n, X.run_incoming)[0] for n in ("incoming", "incoming_bump")]
    dF1 = min(r["min_dF1_ratio"] for r in rows)
    ex = max(r["max_dF2_excess"] for r in rows)  # max dF2 ratio minus 6 delta
    margin = min(r["min_witness_margin"] for r in rows)
    ok = dF1 >= 1.5 and ex <= 0 and margin >= 0 and all(r["n_not_found"] == 0 for r in rows)
    return ok, _detail(min_dF1_ratio=dF1, dF2_minus_6delta=ex, witness_margin=margin)


def escape_inequalities():
    cfg = load_config(CONFIGS / "escape.toml")
    assert cfg.params["nu"] == 0.1 and cfg.params["grid"] == [64, 64, 32, 32]
    m, t = _run("escape", X.run_escape)
    ok = (m["hphi_sign_margin"] >= 0 and m["lambda_sign_margin"] >= 0 and m["escape_C"] > 0
          and t <= 120)
    return ok, _detail(margins=(m["hphi_sign_margin"], m["lambda_sign_margin"]),
                       C=m["escape_C"], runtime_s=t)


def functional_calculus():
    m, _ = _run("funcalc", X.run_funcalc)
    ok = m["hs_discrepancy"] <= 1e-3 and m["dbar_slope"] >= 3 - 0.1
    return ok, _detail(discrepancy=m["hs_discrepancy"], dbar_slope=m["dbar_slope"])


def scaling_laws():
    m, _ = _run("commutator", X.run_commutator)
    bounds = {"commutator": (0.8, 1.2), "derivative": (-1.2, -0.8),
              "derivative_commutator": (-0.2, 0.2), "quarter_commutator": (0.35, 0.65)}
    slopes = {k: m[f"slope_{k}"] for k in bounds}
    r, _ = _run("resolvent", X.run_resolvent)
    ok = all(lo <= slopes[k] <= hi for k, (lo, hi) in bounds.items()) and r["bound_slack"] <= 1e-10
    return ok, _detail(**{k: v for k, v in slopes.items()}, resolvent_slack=r["bound_slack"])


def littlewood_paley():
    m, _ = _run("lp", X.run_lp)
    ok = (m["max_residual"] <= 1e-10 and m["min_energy_ratio"] >= 0.5
          and m["max_energy_ratio"] <= 2.0)
    return ok, _detail(residual=m["max_residual"], energy_ratio=(m["min_energy_ratio"],
                                                                 m["max_energy_ratio"]))


def smoothing_bound():
    m, t = _run("smooth", X.run_smooth)
    ok = (m["spread"] <= 4.0 and m["min_ratio"] >= 0.25 and m["max_ratio"] <= 4.0
          and t <= 15 * 60)
    return ok, _detail(spread=m["spread"], ratio=(m["min_ratio"], m["max_ratio"]), runtime_s=t)


def defect_measure():
    m, _ = _run("measure", X.run_measure)
    ok = (m["sigma_fraction"] >= 0.8 and m["final_post_bounce_error"] <= 0.15
          and m["monotone"] == 1)
    return ok, _detail(sigma_fraction=m["sigma_fraction"],
                       centroid_error=m["final_post_bounce_error"], monotone=m["monotone"])


def unitarity_and_order():
    drift, order, _, _ = X.unitarity_and_order()
    ok = drift <= 1e-9 and 1.8 <= order <= 2.2
    return ok, _detail(norm_drift=drift, dt_order=order)


CRITERIA = [
    (1, "billiard oracle equivalence", billiard_oracle),
    (2, "boundary classification", classification),
    (3, "non-trapping verdicts", nontrapping),
    (4, "incoming-region monitor", incoming_region),
    (5, "escape inequalities", escape_inequalities),
    (6, "functional calculus backends", functional_calculus),
    (7, "commutator and resolvent scaling", scaling_laws),
    (8, "Littlewood-Paley reconstruction", littlewood_paley),
    (9, "smoothing quotient bound", smoothing_bound),
    (10, "defect-measure surrogates", defect_measure),
    (11, "unitarity and time-step order", unitarity_and_order),
]


def evaluate(number, title, fn):
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash counts as a failure with its message
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
    return ok, line


@pytest.mark.parametrize("number, title, fn", CRITERIA, ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, title, fn, capsys):
    ok, line = evaluate(number, title, fn)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
