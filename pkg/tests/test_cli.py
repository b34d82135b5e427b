import csv

import numpy as np
import pytest
import yaml

from thermal_recovery import __version__
from thermal_recovery.dynamics import fixture_path
from thermal_recovery.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, EXIT_TIMEOUT, main
from thermal_recovery.recovery import load_scenario, read_recovery_trace
from thermal_recovery.sysid import TelemetryLog
from thermal_recovery.thermal_core import load_params, predict_temperature
from thermal_recovery.thermal_ik import read_trace


@pytest.fixture(scope="module")
def telemetry(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--out", str(out)]) == EXIT_OK
    return out / "telemetry.csv"


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


# ----------------------------------------------------------------- generate


def test_generate_is_byte_deterministic(tmp_path, telemetry):
    assert main(["generate", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "telemetry.csv").read_bytes() == telemetry.read_bytes()
    assert main(["generate", "--out", str(tmp_path / "b"), "--seed", "7"]) == EXIT_OK
    assert (tmp_path / "b" / "telemetry.csv").read_bytes() != telemetry.read_bytes()


def test_zero_duration_writes_header_only(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--duration", "0"]) == EXIT_OK
    lines = (tmp_path / "telemetry.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("time_s,ambient_c")


def test_noiseless_knee_trace_matches_piecewise_closed_form(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--noise", "0", "--duration", "1200"]) == EXIT_OK
    tl = TelemetryLog.read_csv(tmp_path / "telemetry.csv")
    sc = load_scenario("hot_right_leg")
    p = sc.scene.params["knee_r_core"]
    F = tl.efforts["knee_r"]
    t = tl.sample_times
    # independent oracle: closed form from the start of each constant-effort hold
    starts = np.r_[0, np.nonzero(np.diff(F))[0] + 1]
    expected = np.empty(len(t))
    T0 = 25.0
    for k, s in enumerate(starts):
        e = starts[k + 1] if k + 1 < len(starts) else len(t)
        expected[s:e] = [predict_temperature(p, T0, F[s], t[i] - t[s]) for i in range(s, e)]
        T0 = predict_temperature(p, T0, F[s], t[e] - t[s]) if e < len(t) else None
    assert len(starts) >= 4
    assert np.max(np.abs(tl.temperatures["knee_r_core"] - expected)) <= 0.1


def test_missing_scenario_is_input_error(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path), "--scenario", str(tmp_path / "nope.yaml")]) == EXIT_INPUT
    assert "nope.yaml" in capsys.readouterr().err


# ---------------------------------------------------------------------- fit


@pytest.fixture(scope="module")
def fitted(tmp_path_factory, telemetry):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", str(telemetry), "--out", str(out), "--nodes", "knee_r_core,knee_r_bridge"]) == EXIT_OK
    return out


@pytest.mark.parametrize("node", ["knee_r_core", "knee_r_bridge"])
def test_fit_recovers_generator(fitted, node):
    sc = load_scenario("hot_right_leg")
    truth = sc.scene.params[node]
    got = load_params(fitted / f"{node}.yaml")
    for field in ("rc", "beta_r", "beta_bias_r", "t_offset"):
        assert getattr(got, field) == pytest.approx(getattr(truth, field), rel=0.05), field
    report = yaml.safe_load((fitted / "fit_report.yaml").read_text())
    assert report[node]["open_loop_rmse_c"] < 0.5


def test_refit_is_deterministic(tmp_path, telemetry, fitted):
    assert main(["fit", str(telemetry), "--out", str(tmp_path), "--nodes", "knee_r_core,knee_r_bridge"]) == EXIT_OK
    for name in ("knee_r_core.yaml", "knee_r_bridge.yaml", "fit_report.yaml"):
        assert (tmp_path / name).read_bytes() == (fitted / name).read_bytes()


def test_fit_unknown_node_lists_available(tmp_path, telemetry, capsys):
    assert main(["fit", str(telemetry), "--out", str(tmp_path), "--nodes", "elbow_core"]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "elbow_core" in err and "knee_r_core" in err


def test_fit_missing_log(tmp_path):
    assert main(["fit", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == EXIT_INPUT


# ------------------------------------------------------------------ predict


def test_predict_writes_plot_ready_trace(tmp_path, telemetry, fitted, capsys):
    code = main(["predict", str(telemetry), "--params", str(fitted / "knee_r_core.yaml"),
                 "--node", "knee_r_core", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "RMSE" in capsys.readouterr().out
    with open(tmp_path / "knee_r_core_prediction.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time_s", "measured_c", "predicted_c"]
    data = np.array(rows[1:], dtype=float)
    assert len(data) == 30000
    assert np.sqrt(np.mean((data[:, 1] - data[:, 2]) ** 2)) < 0.5


def test_predict_unknown_node(tmp_path, telemetry, fitted):
    code = main(["predict", str(telemetry), "--params", str(fitted / "knee_r_core.yaml"),
                 "--node", "tail", "--out", str(tmp_path)])
    assert code == EXIT_INPUT


# ----------------------------------------------------------------- minimize


def test_minimize_left_support(tmp_path):
    assert main(["minimize", "--contact", "left_support", "--out", str(tmp_path)]) == EXIT_OK
    cfg = yaml.safe_load((tmp_path / "configuration.yaml").read_text())
    assert cfg["contact"] == "left_support"
    assert cfg["f_final"] < cfg["f_initial"]
    assert cfg["contact_drift"] <= 1e-4
    names, rows = read_trace(tmp_path / "descent_trace.csv")
    assert len(names) == 12
    fs = [r["f"] for r in rows]
    assert all(b < a for a, b in zip(fs, fs[1:]))
    assert fs[-1] == cfg["f_final"]


def test_minimize_bad_start_is_infeasible(tmp_path):
    start = ",".join(["0.0", "0.9", "0.0"] + ["0.1"] * 6)
    assert main(["minimize", "--start", start, "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_minimize_unknown_contact(tmp_path):
    assert main(["minimize", "--contact", "hands", "--out", str(tmp_path)]) == EXIT_INPUT


# ------------------------------------------------------------------ recover


def test_recover_switching(tmp_path):
    assert main(["recover", "--out", str(tmp_path)]) == EXIT_OK
    doc = yaml.safe_load((tmp_path / "switching_summary.yaml").read_text())
    assert doc["recovered"] and doc["contact_schedule"][0] == "left_support"
    cols = read_recovery_trace(tmp_path / "switching_trace.csv")
    assert cols["phase"][0] == "start" and cols["contact"][-1] == "double"


def test_recover_timeout_exit_code(tmp_path):
    cfg = tmp_path / "short.yaml"
    cfg.write_text("policy: {time_budget: 5.0}\n")
    assert main(["recover", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_TIMEOUT
    doc = yaml.safe_load((tmp_path / "switching_summary.yaml").read_text())
    assert doc["timed_out"] is True


def test_recover_bad_config_field(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("policy: {colour: red}\n")
    assert main(["recover", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INPUT


def test_recover_infeasible_scenario(tmp_path):
    # a nominal pose past the knee limits leaves no contact set with a valid start
    model = yaml.safe_load(fixture_path("biped").read_text())
    model["poses"]["nominal"].update(knee_l=-2.5, knee_r=-2.5)
    (tmp_path / "bent.yaml").write_text(yaml.safe_dump(model))
    assert main(["recover", "--model", str(tmp_path / "bent.yaml"), "--out", str(tmp_path)]) == EXIT_INFEASIBLE


# ------------------------------------------------------------------ compare


@pytest.fixture(scope="module")
def compared(tmp_path_factory):
    out = tmp_path_factory.mktemp("cmp")
    assert main(["compare", "--out", str(out)]) == EXIT_OK
    return out


def test_compare_summary(compared):
    doc = yaml.safe_load((compared / "comparison_summary.yaml").read_text())
    tts = doc["time_to_safe"]
    assert doc["hot_group"] == "right_leg"
    assert tts["switching"] < tts["min-effort"]
    assert doc["first_recovered"] == "switching"
    assert doc["recovered"] == {"switching": True, "min-effort": True}
    for name in ("switching", "min_effort"):
        cols = read_recovery_trace(compared / f"{name}_trace.csv")
        final = [v[-1] for k, v in cols.items() if k.endswith("_temp_c")]
        assert max(final) < 70.0


def test_compare_aligned_traces(compared):
    with open(compared / "comparison.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array(rows[1:], dtype=float)
    for tag in ("switching", "min_effort"):
        t = data[:, header.index(f"{tag}_time_s")]
        assert t[0] == 0.0
        assert f"{tag}_right_leg_norm_rate" in header


def test_compare_is_byte_deterministic(tmp_path, compared):
    assert main(["compare", "--out", str(tmp_path)]) == EXIT_OK
    for name in ("comparison.csv", "comparison_summary.yaml", "switching_trace.csv", "min_effort_trace.csv"):
        assert (tmp_path / name).read_bytes() == (compared / name).read_bytes()
