import hashlib
import json

import pytest

from phasefield.cli import EXIT_CONFIG, EXIT_OK, main


def _read(path):
    return json.loads(path.read_text())


def test_sigma_prints_six_digits(tmp_path, capsys):
    assert main(["sigma", "--a-law", "1,4", "--theta-law", "1,2", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "sigma_bar 2.92119" in out and "sigma_W 1.88562" in out


def test_manifest_hash_matches_config_bytes(tmp_path):
    assert main(["solve", "--medium", "constant", "--eps", "0.1", "--out", str(tmp_path)]) == EXIT_OK
    d = tmp_path / "solve"
    man = _read(d / "manifest.json")
    assert man["config_hash"] == hashlib.sha256((d / "config.json").read_bytes()).hexdigest()
    assert set(man["outputs"]) <= {p.name for p in d.iterdir()}
    assert _read(d / "summary.json")["status"] == "ok"


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PHASEFIELD_OUT", str(tmp_path / "env"))
    assert main(["sigma"]) == EXIT_OK
    assert (tmp_path / "env" / "sigma" / "manifest.json").exists()


def test_out_flag_beats_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("PHASEFIELD_OUT", str(tmp_path / "env"))
    assert main(["sigma", "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "sigma").exists() and not (tmp_path / "env").exists()


def test_manifest_written_before_compute(tmp_path, monkeypatch):
    import phasefield.experiments as ex

    seen = {}

    def boom(*a, **k):
        seen["manifest"] = (tmp_path / "lamp" / "manifest.json").exists()
        raise ValueError("zero run frequency")

    monkeypatch.setattr(ex, "lamp_experiment", boom)
    assert main(["lamp", "--out", str(tmp_path)]) == 1
    assert seen["manifest"]
    assert _read(tmp_path / "lamp" / "summary.json")["status"] == "failed"


@pytest.mark.parametrize("argv", [
    ["solve", "--nope"],
    ["tails", "--quantity", "both"],
    ["sweep", "--jobs", "0"],
])
def test_bad_flags_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.parametrize("payload, message", [
    ({"schema": 2}, "schema"),
    ({"schema": 1, "bogus": 1}, "unknown"),
    ({"schema": 1, "command": "lamp"}, "command"),
    ({"schema": 1, "eps_grid": [0.1, 0.2]}, "decreasing"),
])
def test_bad_config_exit_2(tmp_path, payload, message):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(payload))
    assert main(["sweep", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    s = _read(tmp_path / "sweep" / "summary.json")
    assert s["status"] == "config_error" and message in s["error"]


def test_missing_config_exit_2(tmp_path):
    assert main(["tails", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_tails_outputs_identical_across_jobs(tmp_path):
    for j in (1, 3):
        assert main(["tails", "--r", "4,8", "--n-samples", "1500", "--jobs", str(j),
                     "--out", str(tmp_path / f"j{j}")]) == EXIT_OK
    for f in ("tails.csv", "tails.dat", "summary.json", "manifest.json", "config.json"):
        assert (tmp_path / "j1" / "tails" / f).read_bytes() == (tmp_path / "j3" / "tails" / f).read_bytes()


def test_seed_changes_config_hash(tmp_path):
    main(["lamp", "--n-fields", "4", "--seed", "1", "--out", str(tmp_path / "a")])
    main(["lamp", "--n-fields", "4", "--seed", "2", "--out", str(tmp_path / "b")])
    ha = _read(tmp_path / "a" / "lamp" / "manifest.json")["config_hash"]
    hb = _read(tmp_path / "b" / "lamp" / "manifest.json")["config_hash"]
    assert ha != hb


def test_liouville_command(tmp_path, capsys):
    assert main(["liouville", "--out", str(tmp_path)]) == EXIT_OK
    assert "checks passed" in capsys.readouterr().out
    assert (tmp_path / "liouville" / "convergents.csv").read_text().startswith("N,p,q")


def test_shipped_configs_load(tmp_path):
    from pathlib import Path

    from phasefield.cli import load_config

    root = Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.json")):
        cmd = json.loads(path.read_text())["command"]
        cfg = load_config(cmd, str(path), {}, None)
        assert cfg["schema"] == 1
