"""CLI contract: strict config validation, experiment runs with standard
outputs, determinism across reruns and thread counts, and report exit codes."""

import csv
import json
from pathlib import Path

import pytest

from riccdiff import cli
from riccdiff.errors import ConfigError


def cfg_text(experiment="simulate", model=None, run=None, extra=None):
    doc = {
        "schema_version": 1,
        "experiment": experiment,
        "model": model or {"r": 1, "A": 0.0, "R": 1.0, "S": 1.0, "kappa": 1,
                           "varpi": 0.0, "eps": 0.3},
        "run": run if run is not None else {"T": 0.5, "n_paths": 200, "seed": 7},
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc)


# -- parsing -------------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = cli.parse_config(cfg_text(run={}))
    assert cfg.run["dt"] == 1e-3
    assert cfg.run["n_paths"] == 10_000
    assert cfg.run["seed"] == 0


def test_negative_dt_names_field():
    with pytest.raises(ConfigError) as exc:
        cli.parse_config(cfg_text(run={"dt": -1e-3}))
    assert any("run.dt" in v and ">" in v for v in exc.value.violations)


def test_all_violations_collected():
    with pytest.raises(ConfigError) as exc:
        cli.parse_config(cfg_text(
            run={"dt": -1.0, "n_paths": 1, "bogus": 3},
            model={"r": 1, "A": 0.0, "R": 1.0, "S": 1.0, "kappa": 5}))
    text = " | ".join(exc.value.violations)
    assert "run.dt" in text
    assert "run.n_paths" in text
    assert "run.bogus" in text
    assert "kappa" in text
    assert len(exc.value.violations) >= 4


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError) as exc:
        cli.parse_config(cfg_text(extra={"surprise": 1}))
    assert any("surprise" in v for v in exc.value.violations)


def test_schema_version_gate():
    doc = json.loads(cfg_text())
    doc["schema_version"] = 2
    with pytest.raises(ConfigError):
        cli.parse_config(json.dumps(doc))


def test_malformed_json():
    with pytest.raises(ConfigError) as exc:
        cli.parse_config("{not json")
    assert "malformed JSON" in exc.value.violations[0]


def test_threshold_warning():
    cfg = cli.parse_config(cfg_text(
        model={"r": 3, "A": 0.0, "R": 1.0, "S": 1.0, "kappa": 1,
               "varpi": 0.0, "eps": 2.0}))
    assert any("eps0 = 1" in w for w in cfg.warnings)


# -- experiment runs ------------------------------------------------------------

def write_cfg(tmp_path, text, name="cfg.json"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_rows(outdir):
    with open(Path(outdir) / "results.csv") as fh:
        return list(csv.reader(fh))


def test_simulate_run_outputs(tmp_path):
    p = write_cfg(tmp_path, cfg_text())
    out = tmp_path / "out"
    rc = cli.main(["simulate", "--config", str(p), "--out", str(out)])
    assert rc == 0
    rows = read_rows(out)
    assert rows[0][:4] == ["experiment", "param", "estimate", "stderr"]
    assert (out / "summary.json").exists()
    assert (out / "MANIFEST.json").exists()
    assert (out / "plotdata" / "mean_trace.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pass"] is True


def test_rerun_byte_identical_and_thread_invariant(tmp_path):
    p = write_cfg(tmp_path, cfg_text(experiment="bias", run={
        "T": 0.5, "n_paths": 400, "seed": 3,
        "eps_grid": [0.1, 0.2, 0.3, 0.4]}))
    outs = []
    for name, threads in (("o1", None), ("o2", None), ("o3", 1)):
        out = tmp_path / name
        argv = ["bias", "--config", str(p), "--out", str(out)]
        if threads:
            argv += ["--threads", str(threads)]
        cli.main(argv)
        rows = read_rows(out)
        outs.append([r[:6] for r in rows])  # drop wall time / fingerprint
    assert outs[0] == outs[1] == outs[2]


def test_seed_override_changes_estimates(tmp_path):
    p = write_cfg(tmp_path, cfg_text())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    cli.main(["simulate", "--config", str(p), "--out", str(out1)])
    cli.main(["simulate", "--config", str(p), "--out", str(out2),
              "--seed", "99"])
    assert read_rows(out1)[1][2] != read_rows(out2)[1][2]


def test_config_error_exit_code(tmp_path):
    p = write_cfg(tmp_path, "{bad")
    assert cli.main(["simulate", "--config", str(p)]) == 2
    p2 = write_cfg(tmp_path, cfg_text(experiment="bias"), "mismatch.json")
    assert cli.main(["simulate", "--config", str(p2)]) == 2


def test_numerical_failure_exit_code(tmp_path):
    # stationarity above the first-moment threshold -> precondition violated
    p = write_cfg(tmp_path, cfg_text(
        experiment="stationarity",
        model={"r": 1, "A": 1.0, "R": 1.0, "S": 1.0, "kappa": 1,
               "varpi": 0.0, "eps": 1.2},
        run={"T": 2.0, "n_paths": 100, "seed": 1, "time_grid": [1.0, 2.0]}))
    out = tmp_path / "out"
    assert cli.main(["stationarity", "--config", str(p), "--out",
                     str(out)]) == 3
    # partial results still flushed with a manifest
    assert (out / "MANIFEST.json").exists()


def test_report_missing_files(tmp_path, capsys):
    rc = cli.report(tmp_path)
    assert rc == 2
    assert "results.csv" in capsys.readouterr().err


def test_report_pass_and_fail(tmp_path, capsys):
    p = write_cfg(tmp_path, cfg_text(experiment="dyson-compare", model={
        "r": 2, "A": 1.0, "R": 1.0, "S": 1.0, "kappa": 1, "varpi": 0.0,
        "eps": 0.5}, run={"T": 0.5, "n_paths": 2000, "seed": 2,
                          "lam0": [2.0, 0.5]}))
    out = tmp_path / "out"
    rc = cli.main(["dyson-compare", "--config", str(p), "--out", str(out)])
    assert rc == 0
    assert cli.report(out) == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "dyson_ks" in text
    # force a failing verdict and check report exit code
    summary = json.loads((out / "summary.json").read_text())
    summary["verdicts"][0]["pass"] = False
    (out / "summary.json").write_text(json.dumps(summary))
    assert cli.report(out) == 1
