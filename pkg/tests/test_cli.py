import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from robust_aae import config as C
from robust_aae.asr.corpus import synthetic_corpus
from robust_aae.audio import write_wav
from robust_aae.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    for i, u in enumerate(synthetic_corpus(2, 5, min_words=2)):
        write_wav(root / f"in{i}.wav", u.clip)
    rc = main(["train-victim", "-o", str(root / "model"), "--n-train", "40", "--epochs", "1",
               "--set", "train.hidden=16", "--set", "train.check=false"])
    assert rc == 0
    return root


def run(*argv):
    return main([str(a) for a in argv])


def test_config_round_trip(tmp_path):
    cfg = C.resolve(overrides=["attack.variant=combined", "rooms.rt60_min=0.3", "experiment.intervals=0.2-0.5,0.45"])
    C.write_config(tmp_path / "c.txt", cfg)
    assert C.resolve([tmp_path / "c.txt"]) == cfg
    assert cfg["experiment.intervals"] == ((0.2, 0.5), (0.45, 0.45))
    assert C.attack_config(cfg).variant == "combined"


@pytest.mark.parametrize("item", ["nope.key=1", "attack.min_iterations=many", "attack.variant"])
def test_bad_assignments_are_config_errors(item):
    with pytest.raises(C.ConfigError):
        C.resolve(overrides=[item])


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(C.OUTPUT_ENV, str(tmp_path))
    assert C.output_root() == tmp_path
    assert C.output_root("x") == C.output_root("x")


def test_exit_codes(workspace, tmp_path, capsys):
    model = workspace / "model" / "model.npz"
    assert run("attack", "--bogus-flag") == 2
    assert run("no-such-command") == 2
    assert run("attack", "-o", tmp_path, "--model", model) == 2  # no inputs
    assert run("attack", workspace / "in0.wav", "-o", tmp_path, "--model", model,
               "--set", "attack.alpha_factor=0.9") == 3
    assert run("attack", workspace / "in0.wav", "-o", tmp_path, "--model", tmp_path / "missing.npz") == 1
    assert run("attack", workspace / "in0.wav", "-o", tmp_path, "--config", tmp_path / "missing.txt") == 1
    assert run("rir-gen", "-o", tmp_path, "--set", "rooms.rt60_min=0.9") == 3


def test_report_on_empty_directory(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert run("report", tmp_path / "empty", "-o", tmp_path / "out") == 1
    assert "no records" in capsys.readouterr().err


def test_attack_evaluate_report_pipeline(workspace, tmp_path):
    model = workspace / "model" / "model.npz"
    assert run("attack", workspace / "in0.wav", workspace / "in1.wav", "--model", model, "-o", tmp_path / "a",
               "--variant", "combined", "--target", "please open the door", "--iterations", 2) == 0
    meta = json.loads((tmp_path / "a" / "in0.json").read_text())
    assert meta["variant"] == "combined" and meta["target_id"] == "S1" and meta["iterations_run"] == 2
    trace = (tmp_path / "a" / "in0.trace.csv").read_text().splitlines()
    assert trace[0].startswith("iteration,loss") and len(trace) == 3
    assert run("simulate-eval", "--model", model, "--attacks", tmp_path / "a", "-o", tmp_path / "e",
               "--set", "eval.n_transforms=2") == 0
    assert run("report", tmp_path / "e", "-o", tmp_path / "r") == 0
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["table"][0]["n"] == 2
    replay = C.resolve([tmp_path / "a" / "run_config.txt"])
    assert replay["attack.variant"] == "combined" and replay["attack.min_iterations"] == 2


def test_rir_gen_and_mask_analyze(workspace, tmp_path):
    assert run("rir-gen", "--count", 3, "-o", tmp_path / "r", "--set", "rooms.rt60_max=0.4") == 0
    rows = np.loadtxt(tmp_path / "r" / "rirs.csv", delimiter=",", skiprows=1)
    assert rows.shape == (3, 8)
    assert np.all(np.abs(rows[:, 5] / rows[:, 4] - 1) < 0.2)
    assert run("mask-analyze", workspace / "in0.wav", "-o", tmp_path / "m") == 0
    summary = json.loads((tmp_path / "m" / "mask_summary.json").read_text())
    assert summary["bins"] == 257 and summary["tonal_maskers"] > 0


def test_experiment_harness_from_cli(workspace, tmp_path):
    model = workspace / "model" / "model.npz"
    args = ["simulate-eval", "--experiment", "pools", "--model", model, "--iterations", 2,
            "--set", "experiment.pools=dynamic,32-various", "--set", "eval.n_transforms=2",
            "--set", "data.n_attack=1", "--set", "data.min_attack_seconds=0", "--set", "data.dir=" + str(workspace / "d")]
    d = workspace / "d"
    d.mkdir(exist_ok=True)
    shutil.copy(workspace / "in0.wav", d / "a.wav")
    (d / "a.txt").write_text("call zero call open")
    assert run(*args, "-o", tmp_path / "x") == 0
    table = (tmp_path / "x" / "table.csv").read_text().splitlines()
    assert "pool" in table[0].split(",")
    assert len(table) == 3


def test_repeated_runs_are_byte_identical(workspace, tmp_path):
    model = workspace / "model" / "model.npz"
    for name in ("one", "two"):
        assert run("attack", workspace / "in0.wav", "--model", model, "-o", tmp_path / name,
                   "--variant", "robust", "--iterations", 3) == 0
        assert run("rir-gen", "--count", 2, "-o", tmp_path / name / "rirs") == 0
    files = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
    assert any(str(f).endswith(".wav") for f in files) and any(str(f).endswith(".csv") for f in files)
    for f in files:
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes(), f


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "robust_aae.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("train-victim", "attack", "simulate-eval", "rir-gen", "mask-analyze", "report"):
        assert cmd in out.stdout
