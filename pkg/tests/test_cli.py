import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from mdplab.cli import load_config, main, report, validate_config
from mdplab.core import mdp_to_dict
from mdplab.envs import make_multireward_toy, make_shaping_toy
from mdplab.errors import ConfigError, IntegrityError


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def bundled(name):
    return json.loads(resources.files("mdplab.configs").joinpath(name).read_text())


def test_metrics_bundled_config(tmp_path, capsys):
    out = tmp_path / "m"
    assert main(["--config", "riverswim-metrics.json", "--out", str(out), "--assert", "metrics"]) == 0
    rows = read_csv(out / "hitting_times.csv")
    taus = [float(r["tau"]) for r in rows]
    assert [round(t) for t in taus] == [753, 237, 69, 16, 18, 23]
    for t, ref in zip(taus, [752, 237, 68, 15, 17, 22]):
        assert abs(t - ref) <= 1
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "752.857" in text and "[PASS] tau" in text


def test_metrics_on_mdp_model(tmp_path):
    model = tmp_path / "toy.json"
    model.write_text(json.dumps(mdp_to_dict(make_shaping_toy())))
    out = tmp_path / "o"
    assert main(["metrics", "--env", str(model), "--out", str(out)]) == 0
    row = read_csv(out / "structure.csv")[0]
    assert float(row["D"]) == pytest.approx(20.0) and float(row["kappa"]) == pytest.approx(2.2)


def test_evaluate_is_byte_reproducible(tmp_path):
    args = ["evaluate", "--env", "riverswim", "--gammas", "0.9", "0.99", "--horizon", "3000", "--n-seeds", "4"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--jobs", "2"]) == 0
    for name in ("errors_gamma0.9.csv", "summary_gamma0.99.csv", "loop_states_gamma0.9.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_csv(a / "errors_gamma0.9.csv")
    assert {"config_hash", "seed", "step", "linf_error"} <= rows[0].keys()
    assert {r["seed"] for r in rows} == {"0", "1", "2", "3"}


def test_seed_offset(tmp_path, monkeypatch):
    monkeypatch.setenv("MDPLAB_SEED_OFFSET", "100")
    out = tmp_path / "o"
    assert main(["evaluate", "--env", "riverswim", "--horizon", "500", "--n-seeds", "2", "--out", str(out)]) == 0
    rows = read_csv(out / "errors_gamma0.9.csv")
    assert {r["seed"] for r in rows} == {"100", "101"}
    cfg = validate_config({"kind": "learn", "seeds": [1, 2]})
    assert cfg.seeds == [101, 102]


def test_shaping_command(tmp_path):
    model = tmp_path / "toy.json"
    model.write_text(json.dumps(mdp_to_dict(make_shaping_toy())))
    pot = tmp_path / "phi.json"
    pot.write_text(json.dumps([0.0, 0.1]))
    out = tmp_path / "s"
    assert main(["shaping", "--model", str(model), "--potential", str(pot), "--out", str(out)]) == 0
    doc = json.loads((out / "shaping.json").read_text())
    assert doc["kappa"] == pytest.approx(2.2, abs=1e-9)
    assert doc["kappa_shaped"] == pytest.approx(2.1, abs=1e-9)
    assert doc["pi_equiv_gap"] <= 1e-9


def test_learn_emits_four_curves(tmp_path):
    cfg = bundled("racetrack-reset.json")
    cfg.update(seeds=[0, 1], horizon=3000)
    cfg["params"]["stride"] = 500
    path = tmp_path / "race.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "l"
    assert main(["--config", str(path), "--out", str(out), "learn"]) == 0
    curves = read_csv(out / "curves.csv")
    keys = {"median_cumulative_resets", "median_average_resets", "median_average_reward", "median_subchain_resets"}
    assert keys <= curves[0].keys()
    assert {r["agent"] for r in curves} == {"ucrl2", "ucrl2-bernstein", "reset-ucrl"}
    traces = read_csv(out / "traces.csv")
    assert {"config_hash", "seed", "step"} <= traces[0].keys()
    assert sorted({int(r["step"]) for r in traces}) == [500, 1000, 1500, 2000, 2500, 3000]


def test_learn_flags(tmp_path):
    out = tmp_path / "l"
    assert main(["learn", "--env", "riverswim", "--agent", "ucrl2", "--steps", "500", "--seeds", "1", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())["summary"]
    assert set(summary["final"]) == {"ucrl2"}


def test_pareto_command(tmp_path):
    m, tables = make_multireward_toy(0.1)
    model = tmp_path / "multi.json"
    model.write_text(json.dumps({"base": mdp_to_dict(m), "reward_tables": [t.ravel().tolist() for t in tables]}))
    steer = tmp_path / "steer.json"
    steer.write_text(json.dumps([{"start": 0, "stop": 10, "active": [0]}]))
    out = tmp_path / "p"
    assert main(["pareto", "--model", str(model), "--steer", str(steer), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())["summary"]
    assert summary["status"] == "infeasible"
    it = read_csv(out / "iterates.csv")
    assert it[0]["active"] == "0" and it[-1]["active"] == "0 1"
    cloud = read_csv(out / "gain_cloud.csv")
    assert sum(r["type"] == "deterministic" for r in cloud) == 4


def test_empty_seeds_rejected(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"kind": "metrics", "seeds": []}))
    assert main(["--config", str(path), "metrics"]) == 2
    assert "seeds" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        validate_config({"kind": "metrics", "seeds": []})


def test_schema_errors_name_fields():
    with pytest.raises(ConfigError, match="horizon"):
        validate_config({"kind": "learn", "horizon": 0})
    with pytest.raises(ConfigError):
        validate_config({"kind": "nope"})
    with pytest.raises(ConfigError):
        load_config("missing.json")


def test_kind_mismatch(tmp_path):
    assert main(["--config", "riverswim-metrics.json", "--out", str(tmp_path / "x"), "learn"]) == 2


def test_report_missing_dir(tmp_path):
    with pytest.raises(IntegrityError):
        report(tmp_path / "nothing")
    assert main(["report", str(tmp_path / "nothing")]) == 2


def test_report_detects_tampering(tmp_path):
    out = tmp_path / "m"
    assert main(["--config", "riverswim-metrics.json", "--out", str(out), "metrics"]) == 0
    path = out / "hitting_times.csv"
    path.write_bytes(path.read_bytes().replace(b"752", b"751"))
    with pytest.raises(IntegrityError, match="checksum"):
        report(out)


def test_manifest_contents(tmp_path):
    out = tmp_path / "m"
    main(["--config", "riverswim-metrics.json", "--out", str(out), "metrics"])
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["files"]) == {"hitting_times.csv", "summary.json"}
    assert len(man["config_hash"]) == 16 and man["version"]
    assert not list(out.glob(".*"))  # no temp files left behind


def test_assert_flag_fails_on_check(tmp_path):
    cfg = bundled("riverswim-metrics.json")
    cfg["acceptance"]["tau"] = [1, 1, 1, 1, 1, 1]
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["--config", str(path), "--out", str(tmp_path / "o"), "metrics"]) == 0
    assert main(["--config", str(path), "--out", str(tmp_path / "o"), "--assert", "metrics"]) == 1


def test_shaping_outside_factor_two_hypotheses_reports_only(tmp_path):
    # saturated gain: every reward equals r_max
    model = tmp_path / "sat.json"
    model.write_text(json.dumps(mdp_to_dict(make_shaping_toy(0.0, 0.0))))
    pot = tmp_path / "phi.json"
    pot.write_text(json.dumps([0.0, 0.0]))
    out = tmp_path / "s"
    assert main(["shaping", "--model", str(model), "--potential", str(pot), "--out", str(out), "--assert"]) == 0
    doc = json.loads((out / "summary.json").read_text())
    assert "factor_two" not in doc["checks"]
    assert "saturated" in doc["summary"]["factor_two_precondition"]
