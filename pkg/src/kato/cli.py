"""Command line entry point: ``kato <command> <config> [--jobs N] [--out DIR]``.

Exit status: 0 when every bound in the config's ``[checks]`` holds, 1 when a
bound fails, 2 for an invalid config, 3 when a module raised (the error and
its witness go to ``error.json``).
"""
import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigInvalid, KatoError
from .experiments import COMMANDS
from .scenario import load_config

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_MODULE = 0, 1, 2, 3


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v) + 0.0)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj) + 0.0
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if hasattr(obj, "__dict__"):
        return _jsonable(vars(obj))
    return repr(obj)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def evaluate_checks(checks, metrics):
    """[(name, value, min, max, status)] with status pass | fail | skipped."""
    out = []
    for name in sorted(checks):
        lo, hi = checks[name].get("min"), checks[name].get("max")
        if name not in metrics:
            out.append((name, None, lo, hi, "skipped"))
            continue
        v = float(metrics[name])
        ok = math.isfinite(v) and (lo is None or v >= lo) and (hi is None or v <= hi)
        out.append((name, v, lo, hi, "pass" if ok else "fail"))
    return out


def versions():
    import matplotlib
    import scipy

    return {"kato": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def _parser():
    p = argparse.ArgumentParser(prog="kato", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="TOML experiment config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent sub-runs")
    p.add_argument("--out", default=None, help="output directory (default out/<command>)")
    p.add_argument("--variant", action="append", default=None,
                   help="commutator-scan only: restrict to this variant (repeatable)")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib output")
    return p


def run(command, config_path, jobs=1, out=None, variants=None, figures=True, stream=None):
    """Run one command; returns the exit status.  All files land in ``out``."""
    stream = stream or sys.stdout
    out = Path(out or Path("out") / command)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    manifest = {"command": command, "config": str(config_path), "jobs": jobs,
                "versions": versions()}
    try:
        if jobs < 1:
            raise ConfigInvalid("--jobs must be at least 1")
        cfg = load_config(config_path, command)
        runner, known = COMMANDS[command]
        unknown = sorted(set(cfg.checks) - set(known))
        if unknown:
            raise ConfigInvalid(f"checks refer to unknown metrics {unknown}; "
                                f"{command} reports {list(known)}")
        if variants and command != "commutator-scan":
            raise ConfigInvalid("--variant applies to commutator-scan only")
        manifest.update(config_sha256=cfg.digest, seed=cfg.seed, scenario=cfg.scenario)
        outcome = runner(cfg, jobs, variants) if variants else runner(cfg, jobs)
    except ConfigInvalid as exc:
        manifest.update(status="config_invalid", error=str(exc),
                        wall_time_s=time.perf_counter() - t0)
        write_json(out / "manifest.json", manifest)
        print(f"ConfigInvalid: {exc}", file=stream)
        return EXIT_CONFIG
    except KatoError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "witness": exc.witness}
        write_json(out / "error.json", err)
        manifest.update(status="module_error", error=type(exc).__name__,
                        wall_time_s=time.perf_counter() - t0, outputs=["error.json"])
        write_json(out / "manifest.json", manifest)
        print(f"{type(exc).__name__}: {exc} (witness in {out / 'error.json'})", file=stream)
        return EXIT_MODULE

    outputs = []
    for name, (header, rows) in sorted(outcome.tables.items()):
        write_csv(out / name, header, rows)
        outputs.append(name)
    for name, doc in sorted(outcome.documents.items()):
        write_json(out / name, doc)
        outputs.append(name)
    for stem, meas in sorted(outcome.arrays.items()):
        meas.save(str(out / stem))
        outputs += [stem + ".npy", stem + ".json"]
    write_json(out / "metrics.json", outcome.metrics)
    outputs.append("metrics.json")
    if figures:
        from .figures import render

        for name, kind, data in outcome.plots:
            render(out / name, kind, data)
            outputs.append(name)
    results = evaluate_checks(cfg.checks, outcome.metrics)
    passed = all(r[4] != "fail" for r in results)
    manifest.update(status="passed" if passed else "checks_failed",
                    wall_time_s=time.perf_counter() - t0, outputs=sorted(outputs),
                    checks=[dict(name=n, value=v, min=lo, max=hi, status=s)
                            for n, v, lo, hi, s in results],
                    output_sha256={o: hashlib.sha256((out / o).read_bytes()).hexdigest()
                                   for o in sorted(outputs) if o.endswith((".csv", ".json"))})
    write_json(out / "manifest.json", manifest)

    print(f"{command}  ({cfg.path})  scenario {cfg.scenario.get('name')}", file=stream)
    for k in sorted(outcome.metrics):
        print(f"  {k:28s} {_fmt(outcome.metrics[k])}", file=stream)
    for n, v, lo, hi, s in results:
        rng = f"[{'' if lo is None else lo}, {'' if hi is None else hi}]"
        print(f"  check {n:22s} {s.upper():7s} {'' if v is None else _fmt(v)} in {rng}",
              file=stream)
    print(f"  wall time {manifest['wall_time_s']:.1f} s; outputs in {out}", file=stream)
    return EXIT_OK if passed else EXIT_CHECKS


def main(argv=None):
    args = _parser().parse_args(argv)
    return run(args.command, args.config, args.jobs, args.out, args.variant,
               not args.no_figures)


if __name__ == "__main__":
    sys.exit(main())
