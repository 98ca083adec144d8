"""Tests for config loading, report rendering, and the CLI contract."""

import dataclasses
import json

import pytest

from irribot.cli import main
from irribot.config import (
    ConfigError,
    ConfigParseError,
    as_dict,
    default_config,
    dump_config,
    environment_for,
    gains_for,
    load_config,
    resolve_params,
)
from irribot.mission import run_trial
from irribot.report import (
    TABLE_COLUMNS,
    build_results,
    parse_trials_csv,
    render_report,
    render_summary_table,
    results_to_json,
    summarize_env,
    trials_csv_text,
)


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ------------------------------------------------------------------ config

def test_defaults_are_self_consistent():
    cfg = default_config()
    assert cfg.env_names() == [
        "standard_greenhouse", "hilly_terrain", "complex_lighting"]
    assert dataclasses.replace(cfg, env="hilly_terrain").env_names() == ["hilly_terrain"]


def test_dump_load_round_trip_is_identity(tmp_path):
    cfg = default_config()
    path = write(tmp_path, dump_config(cfg))
    assert load_config(path) == cfg
    # normalization is idempotent: dump(load(dump(x))) == dump(x)
    assert dump_config(load_config(path)) == dump_config(cfg)


def test_minimal_file_fills_defaults(tmp_path):
    path = write(tmp_path, "env: standard_greenhouse\n")
    cfg = load_config(path)
    assert cfg == dataclasses.replace(default_config(), env="standard_greenhouse")


def test_partial_env_override_keeps_other_fields(tmp_path):
    path = write(tmp_path, "environments:\n  hilly_terrain:\n    drive_speed: 250.0\n")
    cfg = load_config(path)
    tuning = cfg.environments["hilly_terrain"]
    assert tuning.drive_speed == 250.0
    assert tuning.dispense_overshoot == 0.08  # untouched default
    assert cfg.environments["complex_lighting"].drive_speed == 241.0


@pytest.mark.parametrize("text,frag", [
    ("bogus: 1\n", "bogus"),
    ("arm:\n  l9: 3\n", "arm.'l9'"),
    ("environments:\n  mars_dome: {drive_speed: 1}\n", "mars_dome"),
    ("environments:\n  hilly_terrain: {warp: 9}\n", "warp"),
])
def test_unknown_keys_fail_with_path(tmp_path, text, frag):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, text))
    assert frag in str(err.value)


@pytest.mark.parametrize("text,frag", [
    ("trials: 0\n", "trials"),
    ("environments:\n  hilly_terrain: {accuracy: 1.5}\n", "accuracy"),
    ("pump: {flow_rate: -3}\n", "flow_rate"),
    ("battery: {voltage_cutoff: 13.0}\n", "voltage_full"),
    ("detection: {conf_threshold: 2.0}\n", "conf_threshold"),
    ("leveling: {kp: 1.0}\n", "kp, ki and kd"),
])
def test_bounds_violations_name_the_field(tmp_path, text, frag):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, text))
    assert frag in str(err.value)


def test_yaml_syntax_error_is_a_parse_error(tmp_path):
    with pytest.raises(ConfigParseError):
        load_config(write(tmp_path, "arm: [unclosed\n"))


def test_manual_gains_bypass_tuning(tmp_path):
    path = write(tmp_path, "leveling: {kp: 5.0, ki: 2.0, kd: 0.5}\n")
    gains = gains_for(load_config(path))
    assert (gains.kp, gains.ki, gains.kd) == (5.0, 2.0, 0.5)
    assert gains.integral_limit == pytest.approx(8.0 / 2.0)


def test_resolved_params_carry_env_operating_point():
    cfg = default_config()
    gains = gains_for(cfg)
    hilly = resolve_params(cfg, "hilly_terrain", gains)
    complex_ = resolve_params(cfg, "complex_lighting", gains)
    assert hilly.pump.dispense_overshoot == 0.08
    assert hilly.drive_speed_mm_s == 300.0
    assert complex_.drive_speed_mm_s == 241.0
    assert complex_.pump.spray_efficiency == 0.935
    assert hilly.cal.delta_x == 150.0
    assert hilly.geom.l2 == 160.0


def test_environment_for_applies_profile_and_pot_count(tmp_path):
    path = write(
        tmp_path,
        "pot_count: 8\nenvironments:\n  complex_lighting: {accuracy: 0.5}\n",
    )
    cfg = load_config(path)
    env = environment_for(cfg, "complex_lighting")
    assert env.detector_profile.accuracy == 0.5
    assert env.layout.count == 8


# ------------------------------------------------------------------ report

@pytest.fixture(scope="module")
def two_env_payload():
    cfg = default_config()
    gains = gains_for(cfg)
    env_reports = {}
    for name in ("standard_greenhouse", "hilly_terrain"):
        env = environment_for(cfg, name)
        params = resolve_params(cfg, name, gains)
        env_reports[name] = [run_trial(env, params, 30 + i, trial=i)[0]
                             for i in range(3)]
    payload = build_results(as_dict(cfg), env_reports, {"hilly_terrain": 20.1})
    return payload, env_reports


def test_summary_is_column_means(two_env_payload):
    payload, env_reports = two_env_payload
    reports = env_reports["hilly_terrain"]
    summary = payload["environments"]["hilly_terrain"]["summary"]
    assert summary["accuracy_pct"] == pytest.approx(
        sum(r.accuracy_pct for r in reports) / len(reports))
    assert summary["trials"] == 3


def test_flat_env_summary_has_null_leveling(two_env_payload):
    payload, _ = two_env_payload
    summary = payload["environments"]["standard_greenhouse"]["summary"]
    assert summary["leveling_mean_s"] is None
    assert summary["sse_mean_deg"] is None


def test_results_json_is_deterministic_text(two_env_payload):
    payload, _ = two_env_payload
    text = results_to_json(payload)
    assert text == results_to_json(json.loads(text))
    assert text.endswith("\n")


def test_table_renders_na_for_flat_leveling(two_env_payload):
    payload, _ = two_env_payload
    table = render_summary_table(payload)
    lines = table.splitlines()
    assert lines[0].startswith("Environment")
    for column in TABLE_COLUMNS:
        assert column in lines[0]
    flat_row = next(l for l in lines if l.startswith("standard_greenhouse"))
    assert flat_row.count("N/A") == 2
    sloped_row = next(l for l in lines if l.startswith("hilly_terrain"))
    assert "N/A" not in sloped_row


def test_report_quotes_savings_and_endurance(two_env_payload):
    payload, _ = two_env_payload
    text = render_report(payload)
    assert "Water savings vs flood baseline:" in text
    assert "20.1 min" in text


def test_table_matches_csv_recomputation(two_env_payload):
    # the rendered numbers must equal recomputation from trials.csv
    payload, env_reports = two_env_payload
    rows = parse_trials_csv(trials_csv_text(env_reports))
    for name in env_reports:
        mine = [r for r in rows if r["env"] == name]
        summary = payload["environments"][name]["summary"]
        for key in ("accuracy_pct", "fp_pct", "mean_positioning_error_mm",
                    "efficiency_pct", "mean_volume_ml"):
            recomputed = sum(r[key] for r in mine) / len(mine)
            assert recomputed == pytest.approx(summary[key], abs=1e-12)


def test_csv_round_trip_preserves_nulls(two_env_payload):
    _, env_reports = two_env_payload
    rows = parse_trials_csv(trials_csv_text(env_reports))
    flat = [r for r in rows if r["env"] == "standard_greenhouse"]
    assert all(r["leveling_mean_s"] is None for r in flat)
    assert all(isinstance(r["seed"], int) for r in rows)


# ------------------------------------------------------------------ CLI

def run_cli(tmp_path, *extra):
    out = tmp_path / "out"
    code = main(["run", "--env", "standard_greenhouse", "--trials", "2",
                 "--seed", "5", "--out-dir", str(out), *extra])
    return code, out


def test_cli_run_writes_outputs(tmp_path, capsys):
    code, out = run_cli(tmp_path)
    assert code == 0
    assert (out / "results.json").exists()
    assert (out / "trials.csv").exists()
    table = capsys.readouterr().out
    assert "standard_greenhouse" in table
    assert "hilly_terrain" not in table


def test_cli_run_is_byte_deterministic(tmp_path):
    _, out_a = run_cli(tmp_path)
    (tmp_path / "out").rename(tmp_path / "a")
    _, out_b = run_cli(tmp_path)
    a = (tmp_path / "a" / "results.json").read_bytes()
    b = (out_b / "results.json").read_bytes()
    assert a == b


def test_cli_replay_reproduces_run_stdout(tmp_path, capsys):
    code, out = run_cli(tmp_path)
    run_text = capsys.readouterr().out
    assert main(["replay", str(out / "results.json")]) == 0
    assert capsys.readouterr().out == run_text


def test_cli_trace_flag_writes_tick_trace(tmp_path):
    _, out = run_cli(tmp_path, "--trace")
    trace = (out / "trace.csv").read_text()
    assert trace.splitlines()[0] == "env,trial,t,phase,pot,tilt_deg,voltage"
    assert "Sensing" in trace


def test_cli_tune_prints_gain_set(capsys):
    assert main(["tune"]) == 0
    text = capsys.readouterr().out
    for token in ("Ku", "Tu", "Kp", "Ki", "Kd"):
        assert token in text


def test_cli_calibrate_arm_prints_state(capsys):
    assert main(["calibrate-arm", "1200", "900", "70", "-60"]) == 0
    lines = dict(l.split() for l in capsys.readouterr().out.splitlines())
    assert float(lines["delta_x"]) == pytest.approx(150.0)
    assert float(lines["delta_y"]) == pytest.approx(0.0)


def test_cli_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code == 2
    bad_yaml = write(tmp_path, "arm: [unclosed\n")
    assert main(["run", "--config", bad_yaml]) == 3
    bad_value = write(tmp_path, "trials: 0\n", name="v.yaml")
    assert main(["run", "--config", bad_value]) == 4
    assert main(["run", "--env", "mars_dome"]) == 4
    assert main(["replay", str(tmp_path / "missing.json")]) == 5
    capsys.readouterr()
