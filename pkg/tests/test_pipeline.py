import json
import os
from dataclasses import replace

import numpy as np
import pytest

from polrestore import io as pio
from polrestore import network as net
from polrestore import pipeline as pl
from polrestore.degrade import demosaic_bilinear, mosaic

from conftest import small_config, write_config


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


# -- config --------------------------------------------------------------------

def test_config_round_trips_through_json(tmp_path, tiny_cfg):
    path = write_config(tmp_path / "cfg.json", tiny_cfg)
    assert pl.load_config(path) == tiny_cfg


def test_seed_override_touches_every_seed(tiny_cfg):
    cfg = tiny_cfg.with_seed(10)
    assert (cfg.data.scene_seed, cfg.data.degradation["seed"], cfg.init_seed, cfg.shuffle_seed) == (10, 11, 12, 13)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "sub").mkdir()
    path = tmp_path / "sub" / "cfg.json"
    path.write_text(json.dumps({"paths": {"dataset_dir": "d"}}))
    assert pl.load_config(path).paths.dataset_dir == str(tmp_path / "sub" / "d")


@pytest.mark.parametrize("doc", [
    "[1, 2]",
    "{not json",
    '{"bogus": 1}',
    '{"optimizer": {"total_steps": -1}}',
    '{"optimizer": {"lr": 0.1}}',
    '{"task": "motion_blur"}',
    '{"data": {"degradation": {"kind": "mosaic", "params": {"pattern": "rggb"}}}}',
    '{"data": {"scene": {"height": 18, "width": 16}}}',
    '{"network": {"base_channels": 2}}',
    '{"network": {"image_channels": 3}}',
])
def test_bad_configs_raise_config_error(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(doc)
    with pytest.raises(pl.ConfigError):
        pl.load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(pl.ConfigError):
        pl.load_config(tmp_path / "nope.json")


# -- dataset synthesis ---------------------------------------------------------

def test_synth_is_byte_deterministic(tmp_path):
    a = small_config(tmp_path / "a")
    b = small_config(tmp_path / "b")
    pl.synth_command(a)
    pl.synth_command(b)
    ta, tb = tree_bytes(a.paths.dataset_dir), tree_bytes(b.paths.dataset_dir)
    assert ta == tb and len(ta) == 2 * 3 + 1


def test_synth_index_contents_and_mosaic_recomputation(tiny_cfg):
    index = pl.synth_command(tiny_cfg)
    assert [r.split for r in index.records] == ["train", "train", "val"]
    loaded = pl.load_index(tiny_cfg.paths.dataset_dir)
    for rec in loaded.records:
        clean, deg = loaded.load_pair(rec)
        assert rec.spec["kind"] == "mosaic"
        expect = demosaic_bilinear(mosaic(clean)).astype(np.float32)
        assert deg.planes.tobytes() == expect.planes.tobytes()


def test_synth_with_zero_scenes(tiny_cfg):
    cfg = replace(tiny_cfg, data=replace(tiny_cfg.data, n_train=0, n_val=0))
    index = pl.synth_command(cfg)
    assert index.records == []
    with open(os.path.join(cfg.paths.dataset_dir, "index.json")) as f:
        assert json.load(f) == {"records": []}


def test_different_seed_changes_the_dataset(tmp_path):
    a = small_config(tmp_path / "a")
    b = small_config(tmp_path / "b").with_seed(100)
    pl.synth_command(a)
    pl.synth_command(b)
    assert tree_bytes(a.paths.dataset_dir) != tree_bytes(b.paths.dataset_dir)


def test_missing_dataset_files_raise_data_error(tiny_cfg):
    with pytest.raises(pl.DataError):
        pl.load_index(tiny_cfg.paths.dataset_dir)
    pl.synth_command(tiny_cfg)
    os.remove(os.path.join(tiny_cfg.paths.dataset_dir, "clean_0001.pquad"))
    with pytest.raises(pl.DataError):
        pl.load_index(tiny_cfg.paths.dataset_dir)


# -- training ------------------------------------------------------------------

def test_zero_steps_returns_initial_params(tiny_cfg):
    cfg = replace(tiny_cfg, optimizer=replace(tiny_cfg.optimizer, total_steps=0))
    result = pl.train(cfg, [])
    init = net.init_params(cfg.network, cfg.init_seed)
    assert result.history == []
    for k, p in init.items():
        assert np.array_equal(result.params[k].data, p.data)
        assert np.array_equal(result.best_params[k], p.data)


def test_training_is_deterministic_and_writes_artifacts(tmp_path):
    runs = []
    for name in ("a", "b"):
        cfg = small_config(tmp_path / name)
        pl.synth_command(cfg)
        pl.train_command(cfg)
        runs.append(tree_bytes(cfg.paths.checkpoint_dir))
    assert runs[0] == runs[1]
    assert set(runs[0]) == {"final.ckpt", "best.ckpt", "train_log.jsonl"}
    log = [json.loads(line) for line in runs[0]["train_log.jsonl"].decode().splitlines()]
    assert [r["step"] for r in log] == [0, 1, 2]
    assert "val_total" in log[1] and "val_total" in log[2] and "val_total" not in log[0]
    for r in log:
        assert r["total"] == pytest.approx(r["image"] + 10.0 * r["stokes"], rel=1e-5)


def test_training_moves_the_parameters(tiny_cfg):
    pl.synth_command(tiny_cfg)
    result = pl.train_command(tiny_cfg)
    init = net.init_params(tiny_cfg.network, tiny_cfg.init_seed)
    assert any(not np.array_equal(result.params[k].data, init[k].data) for k in init)


def test_empty_training_split_is_a_data_error(tiny_cfg):
    with pytest.raises(pl.DataError):
        pl.train(tiny_cfg, [])


def test_patch_cropping_keeps_mosaic_phase(tiny_cfg):
    rng = np.random.default_rng(0)
    clean = np.arange(2 * 4 * 24 * 24, dtype=np.float32).reshape(2, 4, 24, 24)
    for _ in range(10):
        c, d = pl._crop(clean, clean, 16, rng)
        assert c.shape == (2, 4, 16, 16)
        assert int(c[0, 0, 0, 0]) % 2 == 0 and (int(c[0, 0, 0, 0]) // 24) % 2 == 0


# -- evaluation and inference --------------------------------------------------

def test_identity_checkpoint_scores_like_the_baseline(tiny_cfg):
    pl.synth_command(tiny_cfg)
    ck = os.path.join(tiny_cfg.paths.checkpoint_dir, "init.ckpt")
    pio.write_checkpoint(ck, net.init_params(tiny_cfg.network, tiny_cfg.init_seed))
    reports = pl.eval_command(tiny_cfg, ck)
    assert reports["model"].to_dict() == reports["baseline"].to_dict()
    with open(tiny_cfg.paths.report_path) as f:
        doc = json.load(f)
    assert set(doc) == {"model", "baseline"}
    assert list(doc["model"]) == ["psnr_dop", "ssim_dop", "psnr_aop", "ssim_aop", "psnr_ti", "ssim_ti", "per_image"]


def test_eval_report_is_byte_deterministic(tiny_cfg, tmp_path):
    pl.synth_command(tiny_cfg)
    pl.train_command(tiny_cfg)
    ck = os.path.join(tiny_cfg.paths.checkpoint_dir, "final.ckpt")
    pl.eval_command(tiny_cfg, ck, tmp_path / "r1.json")
    pl.eval_command(tiny_cfg, ck, tmp_path / "r2.json")
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


@pytest.mark.parametrize("suffix", [".pquad", ".png"])
def test_infer_with_identity_network(tiny_cfg, tmp_path, suffix):
    pl.synth_command(tiny_cfg)
    ck = tmp_path / "init.ckpt"
    pio.write_checkpoint(ck, net.init_params(tiny_cfg.network, tiny_cfg.init_seed))
    src = os.path.join(tiny_cfg.paths.dataset_dir, "degraded_0000.pquad")
    if suffix == ".png":
        png = str(tmp_path / "in.png")
        pio.write_quad(png, pio.read_pquad(src))
        src = png
    out_path = str(tmp_path / f"out{suffix}")
    out = pl.infer_command(tiny_cfg, ck, src, out_path)
    inp = pio.read_quad(src)
    assert out.planes.shape == inp.planes.shape
    np.testing.assert_array_equal(pio.read_quad(out_path).planes, inp.planes)
    aux = np.load(out_path + ".params.npz")
    assert set(aux.files) == {"ti", "dop", "aop"} and aux["dop"].shape == (1, 16, 16)


def test_infer_rejects_bad_sizes(tiny_cfg, tmp_path):
    from polrestore.polar import PolarQuad

    ck = tmp_path / "init.ckpt"
    pio.write_checkpoint(ck, net.init_params(tiny_cfg.network, tiny_cfg.init_seed))
    pio.write_pquad(tmp_path / "odd.pquad", PolarQuad(np.zeros((4, 1, 10, 12), np.float32)))
    with pytest.raises(pl.DataError):
        pl.infer_command(tiny_cfg, ck, tmp_path / "odd.pquad", str(tmp_path / "o.pquad"))
    with pytest.raises(pl.DataError):
        pl.load_params(tiny_cfg, tmp_path / "missing.ckpt")
