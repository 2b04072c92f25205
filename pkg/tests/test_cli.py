import json
import os
import subprocess
import sys

import numpy as np
import pytest

from polrestore import autograd as ag
from polrestore import io as pio
from polrestore.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main

from conftest import write_config


@pytest.fixture
def cfg_path(tmp_path, tiny_cfg):
    return str(write_config(tmp_path / "cfg.json", tiny_cfg))


def test_full_workflow(cfg_path, tiny_cfg, tmp_path, capsys):
    assert main(["--config", cfg_path, "synth"]) == EXIT_OK
    assert main(["train", "--config", cfg_path]) == EXIT_OK
    ck = os.path.join(tiny_cfg.paths.checkpoint_dir, "best.ckpt")
    report = str(tmp_path / "rep.json")
    assert main(["eval", "--config", cfg_path, "--checkpoint", ck, "--out", report]) == EXIT_OK
    assert set(json.load(open(report))) == {"model", "baseline"}
    src = os.path.join(tiny_cfg.paths.dataset_dir, "degraded_0002.pquad")
    out = str(tmp_path / "restored.pquad")
    assert main(["infer", "--config", cfg_path, "--checkpoint", ck, "--input", src, "--out", out]) == EXIT_OK
    assert pio.read_pquad(out).planes.shape == (4, 1, 16, 16)
    text = capsys.readouterr().out
    assert "wrote 3 pairs" in text and "report written" in text


def test_degrade_command(cfg_path, tiny_cfg, tmp_path, capsys):
    main(["synth", "--config", cfg_path])
    capsys.readouterr()
    src = os.path.join(tiny_cfg.paths.dataset_dir, "clean_0001.pquad")
    out = str(tmp_path / "d.pquad")
    assert main(["degrade", "--config", cfg_path, "--input", src, "--index", "1", "--out", out]) == EXIT_OK
    meta = json.loads(capsys.readouterr().out)
    assert meta["output"] == out and meta["spec"]["kind"] == "mosaic"
    # same scene, same index: identical to what synth wrote
    expect = pio.read_pquad(os.path.join(tiny_cfg.paths.dataset_dir, "degraded_0001.pquad"))
    assert pio.read_pquad(out).planes.tobytes() == expect.planes.tobytes()


def test_seed_flag_overrides_config(cfg_path, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    main(["synth", "--config", cfg_path, "--out", a])
    main(["synth", "--config", cfg_path, "--seed", "9", "--out", b])
    fa = open(os.path.join(a, "clean_0000.pquad"), "rb").read()
    fb = open(os.path.join(b, "clean_0000.pquad"), "rb").read()
    assert fa != fb


@pytest.mark.parametrize("argv", [
    ["synth"],
    ["synth", "--config", "/nonexistent/cfg.json"],
    ["degrade", "--config", "{cfg}", "--input", "x.pquad"],
])
def test_config_problems_exit_2(argv, cfg_path, capsys):
    argv = [a.replace("{cfg}", cfg_path) for a in argv]
    assert main(argv) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_json_config_exits_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"optimizer": {"total_steps": "many"}')
    assert main(["train", "--config", str(p)]) == EXIT_CONFIG


def test_data_problems_exit_3(cfg_path, tiny_cfg, tmp_path, capsys):
    assert main(["train", "--config", cfg_path]) == EXIT_DATA        # no dataset yet
    main(["synth", "--config", cfg_path])
    bad = tmp_path / "bad.pquad"
    bad.write_bytes(b"PQD1" + b"\0" * 5)
    ck = tmp_path / "x.ckpt"
    ck.write_bytes(b"garbage")
    assert main(["infer", "--config", cfg_path, "--checkpoint", str(ck),
                 "--input", str(bad), "--out", str(tmp_path / "o.pquad")]) == EXIT_DATA
    assert main(["eval", "--config", cfg_path, "--checkpoint", str(tmp_path / "missing.ckpt")]) == EXIT_DATA
    assert main(["degrade", "--config", cfg_path, "--input", str(bad), "--out", str(tmp_path / "o.pquad")]) == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_quick_gradcheck_passes(tmp_path):
    out = tmp_path / "gc.json"
    assert main(["gradcheck", "--quick", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["passed"] and len(doc["results"]) >= 20


def test_gradcheck_failure_exits_4(monkeypatch, capsys):
    real = ag.gelu

    def bad_gelu(x):
        out = real(x)
        inner = out._backward
        out._backward = lambda g: (inner(g)[0] * 1.01,)
        return out

    monkeypatch.setattr(ag, "gelu", bad_gelu)
    assert main(["gradcheck", "--quick"]) == EXIT_NUMERIC
    assert "gelu" in capsys.readouterr().err


def test_non_finite_training_exits_4(cfg_path, tiny_cfg, monkeypatch):
    main(["synth", "--config", cfg_path])
    from polrestore import pipeline as pl

    real = pl.loss_on

    def nan_loss(*args):
        comps = real(*args)
        comps["total"] = ag.scale(comps["total"], np.nan)
        return comps

    monkeypatch.setattr(ag, "CHECK_FINITE", False, raising=False)
    monkeypatch.setattr(pl, "loss_on", nan_loss)
    assert main(["train", "--config", cfg_path]) == EXIT_NUMERIC


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "polrestore.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "degrade", "train", "eval", "infer", "gradcheck"):
        assert cmd in res.stdout
