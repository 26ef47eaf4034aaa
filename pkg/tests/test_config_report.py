"""Configuration parsing, report emission, and the CLI surface."""

import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sdemoments.cli import main
from sdemoments.config import (
    ConfigError,
    bundled_names,
    load_bundled,
    load_config,
    parse_config,
)
from sdemoments.report import RunReport, write_csv, write_summary
from sdemoments.runner import run_twobody

RIGID = {
    "kind": "rigidbody",
    "inertia_diag": [10.0, 12.0, 14.0],
    "q_diag": [0.005, 0.002, 0.003],
    "initial_mean": [0.02, 0.02, 0.02],
    "initial_cov": 2e-5,
    "dt": 0.1,
    "t_final": 1.0,
    "n_samples": 50,
    "master_seed": 3,
}

TWOBODY = {
    "kind": "twobody",
    "mu_grav": 1.0,
    "q_diag": [0.005, 0.002, 0.003],
    "initial_mean": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    "initial_cov": 1e-6,
    "dt": 0.1,
    "t_final": 1.0,
    "n_samples": 50,
}


def test_parse_roundtrip():
    cfg = parse_config(dict(RIGID))
    assert cfg.kind == "rigidbody"
    assert cfg.state_dim == 3
    assert cfg.n_samples == 50
    assert cfg.master_seed == 3
    assert cfg.substeps == 1
    assert_allclose(cfg.initial.cov, 2e-5 * np.eye(3))
    assert len(cfg.grid()) == 11
    assert_allclose(cfg.inertia.j_diag, [10.0, 12.0, 14.0])


def test_missing_keys_are_named():
    for key in ("kind", "q_diag", "initial_mean", "initial_cov", "dt", "t_final", "n_samples"):
        data = dict(RIGID)
        del data[key]
        with pytest.raises(ConfigError, match=key):
            parse_config(data)
    data = dict(RIGID)
    del data["inertia_diag"]
    with pytest.raises(ConfigError, match="inertia_diag"):
        parse_config(data)
    data = dict(TWOBODY)
    del data["mu_grav"]
    with pytest.raises(ConfigError, match="mu_grav"):
        parse_config(data)


def test_rejects_degenerate_numerics():
    for key, value in (("dt", 0.0), ("dt", -0.1), ("n_samples", 1), ("t_final", 0.05)):
        data = dict(RIGID)
        data[key] = value
        with pytest.raises(ConfigError):
            parse_config(data)
    data = dict(RIGID)
    data["t_final"] = 1.03  # not a whole number of steps
    with pytest.raises(ConfigError):
        parse_config(data)


def test_off_diagonal_q_rejected_with_reason():
    data = dict(RIGID)
    del data["q_diag"]
    data["q"] = [[0.005, 0.001, 0.0], [0.001, 0.002, 0.0], [0.0, 0.0, 0.003]]
    with pytest.raises(ConfigError, match="independent"):
        parse_config(data)
    data["q"] = [[0.005, 0.0, 0.0], [0.0, 0.002, 0.0], [0.0, 0.0, 0.003]]
    cfg = parse_config(data)
    assert_allclose(cfg.q_diag, [0.005, 0.002, 0.003])


def test_covariance_forms_agree():
    scalar = parse_config(dict(RIGID))
    vector = parse_config({**RIGID, "initial_cov": [2e-5, 2e-5, 2e-5]})
    matrix = parse_config({**RIGID, "initial_cov": (2e-5 * np.eye(3)).tolist()})
    assert_allclose(scalar.initial.cov, vector.initial.cov)
    assert_allclose(scalar.initial.cov, matrix.initial.cov)


def test_wrong_covariance_dimension_rejected():
    data = dict(RIGID)
    data["initial_cov"] = [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(ConfigError, match="3x3"):
        parse_config(data)
    data = dict(TWOBODY)
    data["initial_cov"] = [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(ConfigError, match="6x6"):
        parse_config(data)
    data = dict(TWOBODY)
    data["initial_mean"] = [1.0, 0.0, 0.0]
    with pytest.raises(ConfigError, match="initial_mean"):
        parse_config(data)


def test_r_min_default_scales_with_radius():
    cfg = parse_config(dict(TWOBODY))
    assert cfg.r_min == pytest.approx(1e-3)
    far = parse_config({**TWOBODY, "initial_mean": [4.0, 3.0, 0.0, 0.0, 0.5, 0.0]})
    assert far.r_min == pytest.approx(5e-3)
    explicit = parse_config({**TWOBODY, "r_min": 0.02})
    assert explicit.r_min == pytest.approx(0.02)


def test_load_config_and_bundles(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(RIGID))
    cfg = load_config(path)
    assert cfg.kind == "rigidbody"
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")

    names = bundled_names()
    assert "rigidbody_default" in names
    assert "twobody_default" in names
    rb = load_bundled("rigidbody_default")
    assert_allclose(rb.inertia.j_diag, [10.0, 12.0, 14.0])
    assert_allclose(rb.q_diag, [0.005, 0.002, 0.003])
    assert_allclose(rb.initial.mean, [0.02, 0.02, 0.02])
    assert_allclose(rb.initial.cov, 2e-5 * np.eye(3))
    assert rb.dt == 0.1 and rb.t_final == 100.0 and rb.n_samples == 10000
    with pytest.raises(ConfigError, match="bundled"):
        load_bundled("no_such_scenario")


def test_override_returns_new_config():
    cfg = parse_config(dict(RIGID))
    other = cfg.override(master_seed=99, n_samples=10)
    assert other.master_seed == 99 and other.n_samples == 10
    assert cfg.master_seed == 3 and cfg.n_samples == 50


def sample_report():
    rows = np.array([[0.0, 1.0 / 3.0], [0.1, 123456.75]])
    return RunReport(
        kind="rigidbody",
        columns=["t", "value"],
        rows=rows,
        summary={"checks": {"a": True}, "n": 2},
    )


def test_report_validation():
    with pytest.raises(ValueError, match="non-finite"):
        RunReport(kind="x", columns=["t"], rows=np.array([[np.nan]]), summary={})
    with pytest.raises(ValueError):
        RunReport(kind="x", columns=["t", "u"], rows=np.zeros((2, 1)), summary={})
    with pytest.raises(ValueError, match="unique"):
        RunReport(kind="x", columns=["t", "t"], rows=np.zeros((1, 2)), summary={})
    assert sample_report().passed
    failing = RunReport(
        kind="x", columns=["t"], rows=np.zeros((1, 1)), summary={"checks": {"a": False}}
    )
    assert not failing.passed


def test_csv_round_trips_float64_exactly(tmp_path):
    report = sample_report()
    path = write_csv(report, tmp_path / "out.csv")
    text = path.read_text()
    assert "\r" not in text
    assert text.endswith("\n")
    with open(path, newline="") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == ["t", "value"]
    values = np.array([[float(v) for v in row] for row in parsed[1:]])
    assert np.array_equal(values, report.rows)
    # 17 significant digits recover 1/3 bit-for-bit
    assert float(parsed[1][1]) == 1.0 / 3.0
    assert not (tmp_path / "out.csv.tmp").exists()


def test_empty_report_is_header_only(tmp_path):
    report = RunReport(kind="x", columns=["t", "u"], rows=np.zeros((0, 2)), summary={})
    path = write_csv(report, tmp_path / "empty.csv")
    assert path.read_text() == "t,u\n"


def test_summary_json_stable(tmp_path):
    report = sample_report()
    report.summary["arr"] = np.array([1.0, 2.0])
    report.summary["flag"] = np.bool_(True)
    path = write_summary(report, tmp_path / "summary.json")
    loaded = json.loads(path.read_text())
    assert loaded["checks"]["a"] is True
    assert loaded["arr"] == [1.0, 2.0]
    assert loaded["flag"] is True


def tiny_rigidbody(tmp_path, **extra):
    data = {**RIGID, "t_final": 2.0, "n_samples": 60, **extra}
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(data))
    return path


def test_cli_rigidbody_run(tmp_path, capsys):
    cfg = tiny_rigidbody(tmp_path)
    out = tmp_path / "out"
    code = main(["rigidbody", "--config", str(cfg), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 0
    assert (out / "rigidbody_series.csv").exists()
    assert (out / "rigidbody_summary.json").exists()
    assert "check ke_mean_checkpoints: pass" in captured.out
    summary = json.loads((out / "rigidbody_summary.json").read_text())
    assert summary["kind"] == "rigidbody"
    assert summary["n_samples"] == 60


def test_cli_seed_and_samples_override(tmp_path):
    cfg = tiny_rigidbody(tmp_path)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    # tiny samples make the statistical verdict seed-dependent, so accept
    # either verdict code; this test is about the override plumbing
    assert main(["rigidbody", "--config", str(cfg), "--out", str(out1), "--seed", "77", "--samples", "40"]) in (0, 1)
    assert main(["rigidbody", "--config", str(cfg), "--out", str(out2), "--seed", "77", "--samples", "40"]) in (0, 1)
    a = (out1 / "rigidbody_series.csv").read_bytes()
    b = (out2 / "rigidbody_series.csv").read_bytes()
    assert a == b
    summary = json.loads((out1 / "rigidbody_summary.json").read_text())
    assert summary["n_samples"] == 40


def test_cli_config_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({k: v for k, v in RIGID.items() if k != "dt"}))
    assert main(["rigidbody", "--config", str(bad)]) == 2
    assert "dt" in capsys.readouterr().err
    missing = tmp_path / "nope.json"
    assert main(["rigidbody", "--config", str(missing)]) == 2
    # config of the wrong kind for the subcommand
    two = tmp_path / "two.json"
    two.write_text(json.dumps(TWOBODY))
    assert main(["rigidbody", "--config", str(two)]) == 2


def test_cli_numerical_abort_exit(tmp_path, capsys):
    data = {**TWOBODY, "r_min": 0.9999, "n_samples": 30, "q_diag": [0.05, 0.05, 0.05]}
    path = tmp_path / "sing.json"
    path.write_text(json.dumps(data))
    out = tmp_path / "nothing_here"
    assert main(["twobody", "--config", str(path), "--out", str(out)]) == 3
    assert "exclusion" in capsys.readouterr().err
    # aborted runs leave no partial artifacts
    assert not out.exists() or not any(out.iterdir())


def test_cli_zero_noise_rigidbody_run(tmp_path):
    cfg = tiny_rigidbody(tmp_path, q_diag=[0.0, 0.0, 0.0])
    out = tmp_path / "quiet"
    assert main(["rigidbody", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "rigidbody_summary.json").read_text())
    assert all(summary["checks"].values())
    # both candidate correlation-rate forms are zero, so the oracle ties
    assert summary["corr_rate_oracle"]["verdict"] == "tie"
    assert summary["ke_mean_slope"]["predicted"] == 0.0


def test_zero_noise_twobody_rates_are_integrator_bias():
    # with no noise h is conserved along every orbit, so the measured rates
    # collapse to the first-order stepping bias: bounded by a small multiple
    # of the substep size and halving when the substep halves
    peaks = []
    for substeps in (40, 80):
        cfg = load_bundled("twobody_default").override(
            q_diag=np.zeros(3), t_final=1.0, n_samples=200, substeps=substeps
        )
        rep = run_twobody(cfg, workers=2)
        fd = rep.rows[:, rep.columns.index("fd_h_mean_rate")]
        dt_int = cfg.dt / substeps
        assert np.max(np.abs(fd)) < 5.0 * dt_int
        assert np.allclose(
            rep.rows[:, rep.columns.index("exact_h_mean_rate")], 0.0, atol=0.0
        )
        peaks.append(float(np.max(np.abs(fd))))
    assert 1.7 < peaks[0] / peaks[1] < 2.3


def test_cli_usage_error_exit():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
