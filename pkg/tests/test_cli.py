import json
from pathlib import Path

import pytest

from kato.cli import evaluate_checks, main
from kato.errors import ConfigInvalid
from kato.scenario import build_scenario, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


LP = """
command = "lp-check"
seed = 3
[lp-check]
n = 80
n_vectors = 5
[checks]
max_residual = { max = 1e-10 }
"""


def test_lp_check_exit_zero_and_manifest(tmp_path):
    out = tmp_path / "out"
    assert main(["lp-check", str(_write(tmp_path, LP)), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "passed"
    assert len(man["config_sha256"]) == 64
    assert {"numpy", "scipy", "python"} <= set(man["versions"])
    assert man["wall_time_s"] >= 0
    assert "metrics.json" in man["outputs"]


def test_failed_check_gives_exit_one(tmp_path):
    cfg = _write(tmp_path, LP.replace("max = 1e-10", "max = -1.0"))
    assert main(["lp-check", str(cfg), "--out", str(tmp_path / "o"), "--no-figures"]) == 1


def test_csv_outputs_are_byte_identical_on_rerun(tmp_path):
    cfg = _write(tmp_path, """
command = "flow"
seed = 7
scenario = "%s"
[flow]
random_starts = 3
""" % (CONFIGS / "scenarios" / "disk.toml").as_posix())
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["flow", str(cfg), "--out", str(out), "--no-figures"]) == 0
        outs.append(out)
    csvs = sorted(p.name for p in outs[0].glob("*.csv"))
    assert csvs
    for name in csvs + ["metrics.json"]:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


@pytest.mark.parametrize("text, fragment", [
    ('command = "lp-check"\n[lp-check]\nn = "many"\n', "not a valid int"),
    ('command = "lp-check"\n[checks]\nbogus = { max = 1 }\n', "unknown metrics"),
    ('command = "lp-check"\n[checks]\nmax_residual = 3\n', "min and/or max"),
    ('command = "flow"\n', "not 'lp-check'"),
    ('command = "lp-check"\nseed = -1\n', "seed"),
    ('command = "lp-check"\nscenario = "missing.toml"\n', "does not exist"),
    ('command = "lp-check"\n[scenario]\nobstacle = "triangle"\n', "obstacle"),
    ('command = "lp-check"\n[scenario]\nobstacle = "two_disks"\nseparation = 1.0\n', "diameter"),
])
def test_invalid_configs_exit_two(tmp_path, capsys, text, fragment):
    cfg = _write(tmp_path, text)
    assert main(["lp-check", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert fragment in capsys.readouterr().out
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["status"] == "config_invalid"


def test_module_error_serialises_witness(tmp_path):
    cfg = _write(tmp_path, """
command = "flow"
[scenario]
obstacle = "disk"
[flow]
starts = [[0.0, 0.0, 1.0, 0.0]]
""")
    out = tmp_path / "o"
    assert main(["flow", str(cfg), "--out", str(out)]) == 3
    err = json.loads((out / "error.json").read_text())
    assert err["witness"]["x"] == [0.0, 0.0]


def test_variant_flag_restricted_to_scan(tmp_path):
    assert main(["lp-check", str(_write(tmp_path, LP)), "--variant", "commutator",
                 "--out", str(tmp_path / "o")]) == 2


def test_evaluate_checks_statuses():
    res = evaluate_checks({"a": {"min": 1}, "b": {"max": 0}, "c": {"min": 0}},
                          {"a": 2.0, "b": 0.5})
    assert [r[4] for r in res] == ["pass", "fail", "skipped"]


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.toml")):
        cfg = load_config(path)
        if cfg.scenario.get("obstacle") != "none" or cfg.scenario.get("metric") != "flat":
            build_scenario(cfg.scenario)


def test_load_config_rejects_missing_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "nope.toml")


@pytest.mark.parametrize("command, body", [
    ("flow", "[flow]\nstarts = [[1.0, 2.0, 3.0]]\n"),
    ("flow", "[flow]\nrandom_starts = 2.5\n"),
    ("nontrap", "[nontrap]\nannulus = [1.5, \"far\"]\n"),
    ("resolvent-check", "[resolvent-check]\nz = [[1.0, 0.0]]\n"),
    ("smooth-scan", "[smooth-scan]\nh_list = [0.5, 2.0]\n"),
])
def test_bad_parameters_rejected_before_work(tmp_path, command, body):
    cfg = _write(tmp_path, f'command = "{command}"\n' + body)
    assert main([command, str(cfg), "--out", str(tmp_path / "o")]) == 2
