"""Configuration, dataset persistence and the train / eval / infer loops.

A pipeline is described by one JSON document::

    {
      "task": "mosaic",
      "network":   {...NetworkConfig fields...},
      "loss":      {...LossConfig fields...},
      "optimizer": {"lr_max": 3e-4, "lr_min": 1e-6, "beta1": 0.9, "beta2": 0.999,
                    "weight_decay": 1e-5, "eps": 1e-8, "total_steps": 1000,
                    "batch_size": 1, "patch_size": null, "val_every": 0},
      "data":      {"scene": {...SceneSpec fields except seed...},
                    "n_train": 20, "n_val": 5, "scene_seed": 0,
                    "degradation": {"kind": ..., "params": {...}, "seed": 1}},
      "init_seed": 2, "shuffle_seed": 3,
      "paths":     {"dataset_dir": "data", "checkpoint_dir": "ckpt",
                    "report_path": "report.json"}
    }

Relative paths resolve against the directory of the config file.  Scenes
``0 .. n_train-1`` form the training split and the next ``n_val`` the
validation split.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autograd as ag
from . import io as pio
from . import network as net
from . import objectives as obj
from .degrade import DegradationSpec, SceneSpec, degrade, synth_scene
from .gradcheck import network_suite, op_suite
from .optim import AdamWState, adamw_step, cosine_lr
from .polar import params_from_quad

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr_max: float = 3e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-5
    eps: float = 1e-8
    total_steps: int = 1000
    batch_size: int = 1
    patch_size: int | None = None
    val_every: int = 0

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.lr_min < 0 or self.lr_max < self.lr_min:
            raise ValueError("need 0 <= lr_min <= lr_max")
        if self.patch_size is not None and (self.patch_size < 16 or self.patch_size % 4):
            raise ValueError("patch_size must be a multiple of 4 and >= 16")


@dataclass(frozen=True)
class DataConfig:
    scene: dict = field(default_factory=dict)
    n_train: int = 20
    n_val: int = 5
    scene_seed: int = 0
    degradation: dict = field(default_factory=lambda: {"kind": "mosaic", "seed": 1})

    def scene_spec(self):
        return SceneSpec(**self.scene, seed=self.scene_seed)

    def degradation_spec(self):
        return DegradationSpec.from_dict(self.degradation)


@dataclass(frozen=True)
class PathConfig:
    dataset_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_path: str = "report.json"


@dataclass(frozen=True)
class PipelineConfig:
    task: str = "mosaic"
    network: net.NetworkConfig = field(default_factory=net.NetworkConfig)
    loss: obj.LossConfig = field(default_factory=obj.LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathConfig = field(default_factory=PathConfig)
    init_seed: int = 2
    shuffle_seed: int = 3

    def to_dict(self):
        d = asdict(self)
        d["network"] = self.network.to_dict()
        return d

    def with_seed(self, seed):
        """Override every seed from one value (scenes, degradation, init, shuffle)."""
        deg = dict(self.data.degradation, seed=seed + 1)
        return replace(self, data=replace(self.data, scene_seed=seed, degradation=deg),
                       init_seed=seed + 2, shuffle_seed=seed + 3)

    def resolve(self, base_dir):
        p = self.paths
        fix = lambda s: s if os.path.isabs(s) else os.path.join(base_dir, s)  # noqa: E731
        return replace(self, paths=PathConfig(fix(p.dataset_dir), fix(p.checkpoint_dir), fix(p.report_path)))


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(d) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    d = dict(d)
    sub = {
        "network": (net.NetworkConfig, d.pop("network", {})),
        "loss": (obj.LossConfig, d.pop("loss", {})),
        "optimizer": (OptimizerConfig, d.pop("optimizer", {})),
        "data": (DataConfig, d.pop("data", {})),
        "paths": (PathConfig, d.pop("paths", {})),
    }
    parts = {k: _build(cls, v, k) for k, (cls, v) in sub.items()}
    cfg = _build(PipelineConfig, {**d, **parts}, "config")
    _validate(cfg)
    return cfg


def _validate(cfg: PipelineConfig):
    try:
        spec = cfg.data.degradation_spec()
        scene = cfg.data.scene_spec()
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"data: {exc}") from exc
    if cfg.task != spec.kind:
        raise ConfigError(f"task {cfg.task!r} does not match degradation kind {spec.kind!r}")
    if cfg.data.n_train < 0 or cfg.data.n_val < 0:
        raise ConfigError("n_train and n_val must be >= 0")
    if scene.channels != cfg.network.image_channels:
        raise ConfigError("scene channels and network image_channels differ")
    if scene.height % 4 or scene.width % 4:
        raise ConfigError("scene height and width must be divisible by 4")


def load_config(path, seed=None) -> PipelineConfig:
    try:
        with open(path) as f:
            d = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = config_from_dict(d)
    if seed is not None:
        cfg = cfg.with_seed(int(seed))
    return cfg.resolve(os.path.dirname(os.path.abspath(path)))


def save_json(path, obj_):
    pio.atomic_write(path, (json.dumps(obj_, indent=2, allow_nan=False) + "\n").encode())


# ---------------------------------------------------------------------------
# dataset


@dataclass
class DatasetRecord:
    clean: str
    degraded: str
    spec: dict
    split: str
    index: int


@dataclass
class DatasetIndex:
    root: str
    records: list

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def load_pair(self, rec):
        try:
            clean = pio.read_pquad(os.path.join(self.root, rec.clean))
            deg = pio.read_pquad(os.path.join(self.root, rec.degraded))
        except OSError as exc:
            raise DataError(str(exc)) from exc
        if clean.planes.shape != deg.planes.shape:
            raise DataError(f"pair {rec.index} has mismatched shapes")
        return clean, deg

    def to_dict(self):
        return {"records": [asdict(r) for r in self.records]}


def load_index(dataset_dir) -> DatasetIndex:
    path = os.path.join(dataset_dir, "index.json")
    try:
        with open(path) as f:
            d = json.load(f)
        records = [DatasetRecord(**r) for r in d["records"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"invalid dataset index {path}: {exc}") from exc
    for r in records:
        for p in (r.clean, r.degraded):
            if not os.path.exists(os.path.join(dataset_dir, p)):
                raise DataError(f"dataset file missing: {p}")
    return DatasetIndex(dataset_dir, records)


def synth_command(cfg: PipelineConfig) -> DatasetIndex:
    """Generate clean scenes and their degraded counterparts on disk."""
    root = cfg.paths.dataset_dir
    os.makedirs(root, exist_ok=True)
    scene = cfg.data.scene_spec()
    spec = cfg.data.degradation_spec()
    records = []
    n = cfg.data.n_train + cfg.data.n_val
    for i in range(n):
        clean = synth_scene(scene, index=i).astype(np.float32)
        deg, _ = degrade(clean, spec, index=i)
        names = (f"clean_{i:04d}.pquad", f"degraded_{i:04d}.pquad")
        pio.write_pquad(os.path.join(root, names[0]), clean)
        pio.write_pquad(os.path.join(root, names[1]), deg.astype(np.float32))
        split = "train" if i < cfg.data.n_train else "val"
        records.append(DatasetRecord(names[0], names[1], spec.to_dict(), split, i))
    index = DatasetIndex(root, records)
    save_json(os.path.join(root, "index.json"), index.to_dict())
    return index


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: dict
    history: list
    best_step: int
    best_params: dict


def _stack(pairs, dtype=np.float32):
    clean = np.concatenate([net.quad_to_array(c, dtype) for c, _ in pairs])
    deg = np.concatenate([net.quad_to_array(d, dtype) for _, d in pairs])
    return clean, deg


def loss_on(params, cfg: PipelineConfig, clean, deg):
    """Forward + dual-domain loss components for stacked arrays."""
    out = net.network_forward(ag.Tensor(deg), ag.Tensor(net.stokes_input_array(deg)), params, cfg.network)
    return obj.loss_components(out, ag.Tensor(clean), cfg.loss)


def train(cfg: PipelineConfig, train_pairs, val_pairs=(), callback=None) -> TrainResult:
    """Deterministic AdamW training over in-memory (clean, degraded) quad pairs.

    ``callback(step, record)`` is called after every logged step.
    """
    if not train_pairs and cfg.optimizer.total_steps > 0:
        raise DataError("training split is empty")
    oc = cfg.optimizer
    params = net.init_params(cfg.network, cfg.init_seed)
    clean_all, deg_all = _stack(train_pairs) if train_pairs else (None, None)
    if clean_all is not None:
        h, w = clean_all.shape[2:]
        if h % 4 or w % 4:
            raise DataError(f"training images {h}x{w} not divisible by 4")
    val = _stack(val_pairs) if val_pairs else None
    state = AdamWState()
    history = []
    best = (np.inf, 0)
    best_params = {k: p.data.copy() for k, p in params.items()}
    n = 0 if clean_all is None else clean_all.shape[0]
    order = np.arange(n)
    val_every = oc.val_every or max(1, oc.total_steps // 10)

    for step in range(oc.total_steps):
        pos = (step * oc.batch_size) % n
        if pos < oc.batch_size:
            order = np.random.default_rng([cfg.shuffle_seed, step]).permutation(n)
        idx = order[[(pos + j) % n for j in range(oc.batch_size)]]
        clean, deg = clean_all[idx], deg_all[idx]
        if oc.patch_size:
            clean, deg = _crop(clean, deg, oc.patch_size, np.random.default_rng([cfg.shuffle_seed, step, 1]))
        lr = cosine_lr(step, oc.total_steps, oc.lr_max, oc.lr_min)
        for p in params.values():
            p.grad = None
        try:
            comps = loss_on(params, cfg, clean, deg)
        except ag.NonFiniteError as exc:
            raise NumericError(f"non-finite activations at step {step}") from exc
        total = comps["total"]
        if not np.isfinite(total.item()):
            raise NumericError(f"non-finite loss at step {step}")
        ag.backward(total)
        adamw_step(params, {k: p.grad for k, p in params.items()}, state, lr,
                   oc.beta1, oc.beta2, oc.weight_decay, oc.eps)
        rec = {"step": step, "lr": lr, **{k: v.item() for k, v in comps.items()}}
        if val is not None and ((step + 1) % val_every == 0 or step + 1 == oc.total_steps):
            with ag.no_grad():
                rec["val_total"] = float(np.mean([
                    loss_on(params, cfg, val[0][i:i + 1], val[1][i:i + 1])["total"].item()
                    for i in range(val[0].shape[0])]))
        score = rec.get("val_total", None if val is not None else rec["total"])
        if score is not None and score < best[0]:
            best = (score, step + 1)
            best_params = {k: p.data.copy() for k, p in params.items()}
        history.append(rec)
        if callback is not None:
            callback(step, rec)
    if oc.total_steps == 0:
        best_params = {k: p.data.copy() for k, p in params.items()}
    return TrainResult(params, history, best[1], best_params)


def _crop(clean, deg, size, rng):
    h, w = clean.shape[2:]
    if size > min(h, w):
        raise DataError(f"patch_size {size} exceeds image size {h}x{w}")
    y = int(rng.integers(0, (h - size) // 2 + 1)) * 2
    x = int(rng.integers(0, (w - size) // 2 + 1)) * 2
    return clean[:, :, y:y + size, x:x + size], deg[:, :, y:y + size, x:x + size]


def train_command(cfg: PipelineConfig) -> TrainResult:
    """Train on the dataset split and write ``final.ckpt``, ``best.ckpt`` and
    ``train_log.jsonl`` into the checkpoint directory."""
    index = load_index(cfg.paths.dataset_dir)
    train_pairs = [index.load_pair(r) for r in index.split("train")]
    val_pairs = [index.load_pair(r) for r in index.split("val")]
    ckdir = cfg.paths.checkpoint_dir
    os.makedirs(ckdir, exist_ok=True)
    lines = []

    def on_step(step, rec):
        lines.append(json.dumps(rec, allow_nan=False))
        log.info("step %d lr %.3g loss %.5f", step, rec["lr"], rec["total"])

    result = train(cfg, train_pairs, val_pairs, callback=on_step)
    pio.atomic_write(os.path.join(ckdir, "train_log.jsonl"), ("\n".join(lines) + "\n").encode())
    pio.write_checkpoint(os.path.join(ckdir, "final.ckpt"), result.params)
    pio.write_checkpoint(os.path.join(ckdir, "best.ckpt"), result.best_params)
    return result


# ---------------------------------------------------------------------------
# evaluation and inference


def load_params(cfg: PipelineConfig, checkpoint):
    params = net.init_params(cfg.network, cfg.init_seed)
    try:
        arrays = pio.read_checkpoint(checkpoint)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    return pio.load_into(params, arrays)


def evaluate_pairs(params, cfg: PipelineConfig, pairs):
    """``{"model": MetricReport, "baseline": MetricReport}`` over (clean, degraded) pairs.

    The baseline scores the degraded input itself (bilinear-demosaiced for
    the mosaic task).
    """
    if not pairs:
        raise DataError("evaluation split is empty")
    restored = [net.restore(d, params, cfg.network) for _, d in pairs]
    gts = [c for c, _ in pairs]
    return {"model": obj.evaluate(restored, gts), "baseline": obj.evaluate([d for _, d in pairs], gts)}


def eval_command(cfg: PipelineConfig, checkpoint, out_path=None):
    index = load_index(cfg.paths.dataset_dir)
    pairs = [index.load_pair(r) for r in index.split("val")]
    params = load_params(cfg, checkpoint)
    reports = evaluate_pairs(params, cfg, pairs)
    doc = {k: v.to_dict() for k, v in reports.items()}
    save_json(out_path or cfg.paths.report_path, doc)
    return reports


def infer_command(cfg: PipelineConfig, checkpoint, input_path, output_path):
    """Restore one PQUAD (or tiled PNG16) file; also writes ``<output>.params.npz`` holding the
    derived TI, DoP and AoP of the restored quad."""
    params = load_params(cfg, checkpoint)
    quad = pio.read_quad(input_path, cfg.network.image_channels)
    h, w = quad.height, quad.width
    if h % 4 or w % 4:
        raise DataError(f"input {h}x{w} must be divisible by 4")
    if quad.channels != cfg.network.image_channels:
        raise DataError("input channel count does not match the network")
    out = net.restore(quad, params, cfg.network).astype(np.float32)
    pio.write_quad(output_path, out)
    pp = params_from_quad(out)
    aux = output_path + ".params.npz"
    with open(aux + ".tmp", "wb") as f:
        np.savez(f, ti=pp.ti.astype(np.float32), dop=pp.dop.astype(np.float32),
                 aop=pp.aop.astype(np.float32))
    os.replace(aux + ".tmp", aux)
    return out


def gradcheck_command(cfg: PipelineConfig | None = None, seed=0):
    """Run the operator and network gradient suites; returns the results list."""
    return op_suite(seed) + network_suite(seed)
