"""Exercise the command-line entry point in process via main(argv)."""

import json

import pytest

from donorlab.cli import main
from donorlab.electrostatics import import_field_table

LAYOUT = {
    "shape": [5, 5, 6],
    "spacing_m": 1e-9,
    "default_epsilon": 11.7,
    "electrodes": [
        {"box_m": [[0, 5e-9], [0, 5e-9], [0, 1e-9]], "voltage": 1.0},
        {"box_m": [[0, 5e-9], [0, 5e-9], [5e-9, 6e-9]], "voltage": 0.0},
    ],
}


def test_solve_field_writes_table(tmp_path, capsys):
    layout = tmp_path / "layout.json"
    layout.write_text(json.dumps(LAYOUT))
    out = tmp_path / "field.csv"
    assert main(["solve-field", str(layout), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "field table written" in stdout
    assert "5x5x6" in stdout
    field = import_field_table(out)
    assert field.potential.shape == (5, 5, 6)


def test_solve_field_missing_file(tmp_path, capsys):
    assert main(["solve-field", str(tmp_path / "nope.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_solve_field_bad_layout(tmp_path, capsys):
    bad = dict(LAYOUT, electrodes=[])
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["solve-field", str(path)]) == 2
    assert "electrode" in capsys.readouterr().err


def test_levels_prints_transitions(capsys):
    assert main(["levels"]) == 0
    out = capsys.readouterr().out
    assert "nmr_e_down" in out
    assert "76.118937" in out      # exact electron-down nuclear line, MHz
    assert "esr_n_up" in out
    assert "B0 = 0.9977 T" in out


def test_levels_rejects_bad_parameters(capsys):
    assert main(["levels", "--a-iso", "0"]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["levels", "--b0", "0.02"]) == 2
    assert "high-field" in capsys.readouterr().err


def test_calibrate_prints_durations(capsys):
    assert main(["calibrate", "esr_n_up", "--t-max", "6e-7"]) == 0
    out = capsys.readouterr().out
    assert "t_pi" in out and "Rabi freq" in out


def test_calibrate_window_too_short(capsys):
    assert main(["calibrate", "esr_n_up", "--t-max", "5e-8"]) == 2
    err = capsys.readouterr().err
    assert "[calibrate]" in err


def test_calibrate_rejects_unknown_transition():
    with pytest.raises(SystemExit):
        main(["calibrate", "esr_up"])


def test_run_writes_outputs(tmp_path, capsys):
    config = {
        "device": {"b_ac_t": 1e-4},
        "sequence": {"type": "bell"},
        "output": {"trace_csv": "trace.csv", "report_json": "report.json"},
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    assert main(["run", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "final fidelity = 0.99" in out
    # relative output paths land next to the config file
    assert (tmp_path / "trace.csv").exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["result"]["final_fidelity"] >= 0.999
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header == "t_s,fidelity,segment"


def test_ensemble_requires_section(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"device": {"b_ac_t": 1e-4}}))
    assert main(["ensemble", str(cfg)]) == 2
    assert "[ensemble]" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit):
        main([])
