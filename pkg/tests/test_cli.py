import csv
import json

import mpmath as mp
import pytest

from ergobound.cli import main
from ergobound.config import REPORT_SCHEMA, ConfigError, content_hash, load_config, validate

FAST_BOUNDS = {"moment_budget": 2000, "k_budget": 20000, "n_delta": 5000}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def cubic_cfg(**extra):
    cfg = {"model": {"preset": "cubic"}, "drift": {"kind": "preset"}, "grid": {"M": 64, "eps_end": 0.01},
           "mc": {"seed": 3, "n_paths": 4000}, "bounds": dict(FAST_BOUNDS)}
    cfg.update(extra)
    return cfg


def lin_cfg(**extra):
    cfg = {"model": {"A": [[-1.0]], "Q": [[1.0]]},
           "drift": {"kind": "linear", "L": [[-1.0]], "k1": 2.0, "k2": 1.0, "k3": 0.0, "s": 1.0},
           "grid": {"M": 128, "eps_end": 0.01}, "mc": {"seed": 1, "n_paths": 20000}}
    cfg.update(extra)
    return cfg


def report(out, stem):
    data = json.loads((out / f"{stem}.json").read_text())
    validate(data, REPORT_SCHEMA)
    return data


def test_check_oscillator(tmp_path):
    out = tmp_path / "o"
    code = main(["check", "--config", write(tmp_path, {"model": {"preset": "oscillator"}}), "--out", str(out)])
    assert code == 0
    rep = report(out, "check")
    assert rep["verdict"] == "PASS"
    assert rep["results"]["strong_feller"] is True
    assert rep["results"]["hs_integral"]["converged"] is True
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == rep["config_hash"] and "check.json" in manifest["files"]


def test_malformed_config_points_at_field(tmp_path, capsys):
    bad = cubic_cfg(mc={"n_paths": -5})
    assert main(["check", "--config", write(tmp_path, bad), "--out", str(tmp_path)]) == 1
    assert "$.mc.n_paths" in capsys.readouterr().err


@pytest.mark.parametrize("cfg,path", [
    ({"model": {"preset": "nope"}}, "$.model.preset"),
    ({"model": {"preset": "cubic"}, "extra": 1}, "$"),
    ({"model": {"A": [[-1.0]]}}, "$.model"),
    ({"model": {"preset": "cubic"}, "drift": {"kind": "linear"}}, "$.drift"),
    ({"model": {"preset": "cubic"}, "bounds": {"theta_grid": [0.5, 1.5]}}, "$.bounds.theta_grid[1]"),
])
def test_config_error_paths(cfg, path):
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    assert info.value.path == path


def test_config_runtime_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.json"))
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(p))
    with pytest.raises(ConfigError):
        load_config({"model": {"A": [[1.0, 2.0]], "Q": [[1.0]]}})
    with pytest.raises(ConfigError, match="preset"):
        load_config({"model": {"A": [[-1.0]], "Q": [[1.0]]}, "drift": {"kind": "preset"}})


def test_hash_and_overrides():
    raw = cubic_cfg()
    cfg = load_config(raw, seed=11, out="elsewhere")
    assert cfg.seed == 11 and cfg.output_dir == "elsewhere"
    assert cfg.hash == content_hash(raw) and len(cfg.hash) == 64
    assert content_hash({"b": 1, "a": 2}) == content_hash({"a": 2, "b": 1})


def test_usage_errors(tmp_path):
    assert main(["frobnicate", "--config", "x.json"]) == 1
    assert main(["check"]) == 1
    assert main(["density", "1,2", "0", "--config", write(tmp_path, lin_cfg()), "--out", str(tmp_path)]) == 1
    assert main(["check", "--config", write(tmp_path, lin_cfg()), "--seed", "-1"]) == 1


def test_bounds_cubic_and_determinism(tmp_path):
    path = write(tmp_path, cubic_cfg())
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["bounds", "--config", path, "--out", str(a)]) == 0
    assert main(["bounds", "--config", path, "--out", str(b)]) == 0
    assert (a / "bounds.json").read_bytes() == (b / "bounds.json").read_bytes()
    res = report(a, "bounds")["results"]
    # the constants underflow double precision; they are serialised as decimal strings
    assert mp.mpf(res["delta"]["value"]) > 0
    assert mp.mpf(res["uniform"]["omega_hat"]) > 0
    assert set(res["gap"]) >= {"p=1.5", "p=2", "p=4", "l2_symmetric"}
    raw = (a / "bounds_rates.csv").read_bytes()
    assert raw.count(b"\r\n") == len(raw.splitlines()) and raw.startswith(b"theta,one_minus_rho,omega,M\r\n")
    c = tmp_path / "c"
    assert main(["bounds", "--config", path, "--out", str(c), "--seed", "4"]) == 0
    assert (a / "bounds.json").read_bytes() != (c / "bounds.json").read_bytes()


def test_bounds_without_dissipativity_is_input_error(tmp_path):
    cfg = {"model": {"A": [[-1.0]], "Q": [[1.0]]}, "drift": {"kind": "polynomial", "coeffs": [0, 0, 0, -1.0],
                                                           "K": 1.0, "m": 3.0},
           "bounds": dict(FAST_BOUNDS), "grid": {"M": 64, "eps_end": 0.01}}
    assert main(["bounds", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 1


def test_density_linear(tmp_path):
    out = tmp_path / "d"
    assert main(["density", "0", "0", "--config", write(tmp_path, lin_cfg()), "--out", str(out)]) == 0
    res = report(out, "density")["results"]
    assert res["relative_error"] < 0.05
    with open(out / "density_density.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["x", "y"] and len(rows) == 2


def test_lower_bound_and_simulate(tmp_path):
    path = write(tmp_path, cubic_cfg(simulation={"h": 0.05, "T_max": 1.0, "n_paths": 1000}))
    assert main(["lower-bound", "--config", path, "--out", str(tmp_path / "l")]) == 0
    res = report(tmp_path / "l", "lower_bound")["results"]
    assert res["verified"] and res["p"] == 6.0
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "s"), "--emit-plots"]) == 0
    script = (tmp_path / "s" / "simulate.gp").read_text()
    assert "simulate_moments.csv" in script


def test_sweep_requires_scalar(tmp_path):
    assert main(["sweep", "--config", write(tmp_path, {"model": {"preset": "oscillator"}}), "--out", str(tmp_path)]) == 1


def test_report_schema_rejects_bad_report():
    with pytest.raises(ConfigError):
        validate({"subcommand": "check", "verdict": "MAYBE", "seed": 0, "config_hash": "0" * 64, "version": "x",
                  "results": {}}, REPORT_SCHEMA)
