import json
from dataclasses import replace

import pytest

from polrestore import network as net
from polrestore import pipeline as pl

TINY_NET = net.NetworkConfig(base_channels=4, unit_counts=(1,) * 6, head_counts=(1,) * 6)


def small_config(tmp_path, **overrides):
    """A pipeline config small enough to train for a few steps in a test."""
    cfg = pl.PipelineConfig(
        network=TINY_NET,
        optimizer=pl.OptimizerConfig(total_steps=3, val_every=2),
        data=pl.DataConfig(scene={"height": 16, "width": 16}, n_train=2, n_val=1),
        paths=pl.PathConfig(str(tmp_path / "data"), str(tmp_path / "ckpt"), str(tmp_path / "report.json")),
    )
    for key, value in overrides.items():
        cfg = replace(cfg, **{key: value})
    return cfg


def write_config(path, cfg):
    d = cfg.to_dict()
    path.write_text(json.dumps(d))
    return path


@pytest.fixture
def tiny_cfg(tmp_path):
    return small_config(tmp_path)


# -- acceptance summary ----------------------------------------------------------
# Every test in test_acceptance.py is named test_a<N>_..., and may attach a
# one-line "detail" through record_property.  After the run, one PASS/FAIL
# line per criterion is printed.

_acceptance = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_a"):
        return
    if report.when == "call" or report.outcome != "passed":
        crit = name.split("_")[1].upper()
        detail = dict(report.user_properties).get("detail", "")
        ok = report.outcome == "passed" and _acceptance.get(crit, (True,))[0]
        _acceptance[crit] = (ok, detail or _acceptance.get(crit, (True, ""))[1])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_acceptance, key=lambda c: int(c[1:])):
        ok, detail = _acceptance[crit]
        terminalreporter.write_line(f"{crit:3s} {'PASS' if ok else 'FAIL'}  {detail}")
