import csv
import json

import numpy as np
import pytest

from vrbounds import harness
from vrbounds.config import parse_config
from vrbounds.errors import ConfigError


def cfg_text(**over):
    base = {
        "problem": {"family": "quadratic", "n": 10, "d": 3, "kappa": 5, "seed": 1},
        "sampler": {"kind": "iid_uniform"},
        "run": {"algorithm": "saga", "iterations": 600, "delta": 0.1},
        "replications": 3,
        "base_seed": 0,
    }
    for k, v in over.items():
        base[k] = v
    return json.dumps(base, indent=2)


def test_config_defaults_and_round_trip():
    cfg = parse_config(cfg_text())
    assert cfg.diagnostics.conditioning == "good_event"
    assert cfg.output.dir == "out" and cfg.output.prefix == "run"
    assert cfg.run.tau_mode == "theory" and cfg.run.step_size_mode == "theory"
    again = parse_config(json.dumps(cfg.to_dict()))
    assert again.to_dict() == cfg.to_dict()


def test_config_errors_carry_line_numbers():
    text = '{\n  "problem": {"family": "two_well"},\n  "sampler": {"kind": "iid_uniform"},\n' \
           '  "run": {"algorithm": "adam", "iterations": 10}\n}'
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == 4 and "run.algorithm" in str(info.value)
    text = '{\n  "problem": {"family": "two_well"},\n  "sampler": {"kind": "iid_uniform"},\n' \
           '  "colour": 3,\n  "run": {"algorithm": "sag"}\n}'
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == 4 and "colour" in str(info.value)
    with pytest.raises(ConfigError) as info:
        parse_config('{\n  "problem": {\n}')
    assert info.value.line is not None


def test_memory_algorithms_need_a_sampler():
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"problem": {"family": "two_well"}, "run": {"algorithm": "sag"}}))


def test_run_outputs_are_deterministic(tmp_path):
    cfg = parse_config(cfg_text())
    for sub in ("a", "b"):
        problem, traces = harness.run_replications(cfg)
        harness.write_run_outputs(cfg, problem, traces, tmp_path / sub)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["run_meta.json", "run_rep000.csv", "run_rep000.csv.meta.json", "run_rep001.csv",
                     "run_rep001.csv.meta.json", "run_rep002.csv", "run_rep002.csv.meta.json"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    reps = [(tmp_path / "a" / f"run_rep00{r}.csv").read_text() for r in range(3)]
    assert len(set(reps)) == 3
    meta = json.loads((tmp_path / "a" / "run_meta.json").read_text())
    assert parse_config(json.dumps(meta["config"])).to_dict() == cfg.to_dict()


def test_gd_run_writes_one_row_per_iteration(tmp_path):
    cfg = parse_config(json.dumps({"problem": {"family": "quadratic", "n": 20, "d": 5, "kappa": 10, "seed": 7},
                                   "run": {"algorithm": "gd", "iterations": 200}}))
    problem, traces = harness.run_replications(cfg)
    harness.write_run_outputs(cfg, problem, traces, tmp_path)
    with open(tmp_path / "run_rep000.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 200
    r = np.array([float(row["r"]) for row in rows])
    assert np.all(np.diff(r) <= 0)


def test_verify_passes_at_theory_parameters():
    out = harness.verify(parse_config(cfg_text()))
    assert out.passed, json.dumps(out.report["checks"], indent=1)
    for name in ("descent", "gradient_error", "lyapunov_contraction", "burn_in",
                 "sc_envelope", "saga_unbiasedness", "good_event_budget", "window_identities"):
        assert out.report["checks"][name]["passed"]
    assert out.report["schema_version"] == 1


def test_verify_negative_control_fails_at_k1():
    text = cfg_text(run={"algorithm": "saga", "iterations": 400, "tau_mode": "manual", "tau": 1},
                    diagnostics={"conditioning": "none"})
    out = harness.verify(parse_config(text))
    assert not out.passed
    assert out.report["checks"]["gradient_error"]["first_violation_k"] == 1


def test_verify_iag_cyclic_has_no_bad_replicates():
    text = cfg_text(sampler={"kind": "cyclic"}, run={"algorithm": "iag", "iterations": 2000})
    out = harness.verify(parse_config(text))
    assert out.passed
    assert out.report["good_event"]["non_good_replicates"] == []
    assert "iag_envelope" in out.report["checks"]
    assert out.report["checks"]["deterministic_coverage"]["passed"]


def test_verify_nonconvex_problem():
    text = cfg_text(problem={"family": "nonconvex", "n": 4, "d": 2, "seed": 0},
                    sampler={"kind": "cyclic"}, run={"algorithm": "sag", "iterations": 400})
    out = harness.verify(parse_config(text))
    assert out.passed
    assert "nonconvex_envelope" in out.report["checks"]
    assert "lyapunov_contraction" not in out.report["checks"]


def test_sweep_fits_exceed_theory_and_skip_invalid_cells(tmp_path):
    text = cfg_text(problem={"family": "quadratic", "n": 5, "d": 3, "kappa": 2, "seed": 3},
                    sampler={"kind": "cyclic"}, run={"algorithm": "iag", "iterations": 20_000})
    cfg = parse_config(text)
    rows = harness.sweep(cfg, {"kappa": [2, 5, 10], "sampler": ["cyclic", "iid_uniform"]})
    ok = [r for r in rows if r["status"] == "ok"]
    skipped = [r for r in rows if r["status"].startswith("skipped")]
    assert len(ok) == 3 and len(skipped) == 3
    for r in ok:
        assert r["fitted_exponent"] > r["theory_exponent"] > r["prior_iag_exponent"]
    harness.write_sweep(rows, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        assert tuple(next(csv.reader(fh))) == harness.SWEEP_COLUMNS
