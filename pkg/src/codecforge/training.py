"""Adam optimization, the training loop, checkpoints, and evaluation.

All randomness in a run flows through one generator seeded by the config:
shuffling, per-sample subsampling, hierarchy sampling, dropout masks. The
generator state is checkpointed, so resuming at epoch k reproduces the
uninterrupted run bit for bit. Checkpoints are written after each epoch;
a divergence abort therefore always leaves the last good one on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .blocks import EVAL, TRAIN, BlockKind, DimSchedule
from .dataio import TrainConfig
from .errors import ConfigError, NumericError
from .graph import TopologyKind, build_topology
from .metrics import ConfusionMatrix, iou_per_class, macc, miou, oa
from .model import Model
from .pointops import PointCloud, build_hierarchy
from .supervision import SupervisionMode, hybrid_from_forward, select_supervised_nodes
from .tensor import Tape, backward

WIDE_EXTRA = (2, 4, 8, 16, 32)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    named_params,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update from each tensor's .grad."""
    state.t += 1
    t = state.t
    for name, p in named_params:
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# model construction from config


def dims_from_config(cfg: TrainConfig) -> DimSchedule:
    return DimSchedule(
        width_mult=cfg.width_mult, extra=WIDE_EXTRA if cfg.wide_extra else None
    )


def build_model(cfg: TrainConfig) -> Model:
    graph = build_topology(
        TopologyKind(cfg.topology),
        cfg.levels,
        dims=dims_from_config(cfg),
        block_kind=BlockKind(cfg.block),
        k=cfg.k,
    )
    graph.supervised = select_supervised_nodes(graph, SupervisionMode(cfg.supervision))
    return Model(
        graph,
        classes=cfg.num_classes,
        in_dim=6 if cfg.use_colors else 3,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config_text: str
    config_hash: str
    epoch: int  # next epoch to run
    rng_state: dict
    adam_t: int
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]


def save_checkpoint(
    path,
    cfg: TrainConfig,
    model: Model,
    adam: AdamState,
    epoch: int,
    rng: np.random.Generator,
) -> None:
    meta = json.dumps(
        {
            "config": cfg.to_text(),
            "config_hash": cfg.config_hash(),
            "epoch": epoch,
            "rng_state": rng.bit_generator.state,
            "adam_t": adam.t,
        }
    )
    arrays = {"meta": np.frombuffer(meta.encode(), dtype=np.uint8)}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.data
    for name, b in model.named_buffers():
        arrays[f"buffer/{name}"] = b
    for name, m in adam.m.items():
        arrays[f"adam_m/{name}"] = m
        arrays[f"adam_v/{name}"] = adam.v[name]
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        groups: dict[str, dict[str, np.ndarray]] = {
            "param": {},
            "buffer": {},
            "adam_m": {},
            "adam_v": {},
        }
        for key in z.files:
            if key == "meta":
                continue
            group, _, name = key.partition("/")
            groups[group][name] = z[key]
    return Checkpoint(
        config_text=meta["config"],
        config_hash=meta["config_hash"],
        epoch=meta["epoch"],
        rng_state=meta["rng_state"],
        adam_t=meta["adam_t"],
        params=groups["param"],
        buffers=groups["buffer"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
    )


def restore_model(ckpt: Checkpoint) -> tuple[TrainConfig, Model, AdamState, np.random.Generator]:
    from .dataio import parse_train_config

    cfg = parse_train_config(ckpt.config_text)
    model = build_model(cfg)
    for name, p in model.named_parameters():
        p.data = ckpt.params[name].copy()
    for name, b in model.named_buffers():
        b[:] = ckpt.buffers[name]
    adam = AdamState(
        m={k: v.copy() for k, v in ckpt.adam_m.items()},
        v={k: v.copy() for k, v in ckpt.adam_v.items()},
        t=ckpt.adam_t,
    )
    rng = np.random.default_rng(0)
    rng.bit_generator.state = ckpt.rng_state
    return cfg, model, adam, rng


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    epochs_run: int
    history: list[dict]  # one record per epoch


def _subsample_cloud(cloud: PointCloud, max_points: int, seed: int) -> PointCloud:
    if len(cloud) <= max_points:
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cloud), size=max_points, replace=False))
    return cloud.subset(idx)


def train(
    cfg: TrainConfig,
    clouds: list[PointCloud],
    out_dir,
    resume: Path | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Seeded epoch loop: shuffle, per-batch hierarchies, hybrid loss, Adam.

    ``stop_after`` interrupts the run after that many total epochs without
    touching the config (resume picks up where the checkpoint stopped).
    """
    if not clouds:
        raise ConfigError("training dataset is empty")
    for c in clouds:
        if c.labels is None:
            raise ConfigError("training clouds need labels")
        if c.labels.max() >= cfg.num_classes:
            raise ConfigError(
                f"cloud label {int(c.labels.max())} >= num_classes {cfg.num_classes}"
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.npz"
    log_path = out_dir / "train_log.jsonl"

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config_hash != cfg.config_hash():
            raise ConfigError(
                "checkpoint config hash does not match the requested config"
            )
        cfg, model, adam, rng = restore_model(ckpt)
        start_epoch = ckpt.epoch
        log_file = open(log_path, "a")
    else:
        model = build_model(cfg)
        adam = AdamState()
        rng = np.random.default_rng(cfg.seed)
        start_epoch = 0
        log_file = open(log_path, "w")

    ratios = cfg.ratios[: cfg.levels + 1]
    named = list(model.named_parameters())
    history: list[dict] = []
    last_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)

    try:
        for epoch in range(start_epoch, last_epoch):
            perm = rng.permutation(len(clouds))
            cm = ConfusionMatrix(cfg.num_classes)
            epoch_l = {"l_h": 0.0, "l_ds": 0.0, "l_oa": 0.0}
            steps = 0
            for b0 in range(0, len(perm), cfg.batch_size):
                batch = perm[b0 : b0 + cfg.batch_size]
                model.zero_grad()
                reports = []
                for ci in batch:
                    sub_seed = int(rng.integers(2**63))
                    hier_seed = int(rng.integers(2**63))
                    drop_seed = int(rng.integers(2**63))
                    sample = _subsample_cloud(clouds[ci], cfg.points_per_sample, sub_seed)
                    hier = build_hierarchy(sample, ratios, cfg.k, hier_seed)
                    with Tape():
                        res = model.forward(sample, hier, TRAIN, dropout_seed=drop_seed)
                        rep = hybrid_from_forward(model, res, sample.labels, hier)
                        backward(rep.loss)
                    reports.append(rep)
                    cm.accumulate(np.argmax(res.logits.data, axis=1), sample.labels)
                for _, p in named:
                    if p.grad is not None:
                        p.grad = p.grad / len(batch)
                adam_step(named, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
                step_rec = {
                    "step": adam.t,
                    "epoch": epoch,
                    "l_h": sum(r.l_h for r in reports) / len(reports),
                    "l_ds": sum(r.l_ds for r in reports) / len(reports),
                    "l_oa": sum(r.l_oa for r in reports) / len(reports),
                    "per_node": {
                        f"{n.i},{n.j}": sum(r.per_node[n] for r in reports) / len(reports)
                        for n in reports[0].per_node
                    },
                    "n_supervised": reports[0].n_supervised,
                }
                log_file.write(json.dumps(step_rec) + "\n")
                for key in epoch_l:
                    epoch_l[key] += step_rec[key]
                steps += 1
            epoch_rec = {
                "epoch": epoch,
                "train_oa": oa(cm),
                "l_h": epoch_l["l_h"] / steps,
                "l_ds": epoch_l["l_ds"] / steps,
                "l_oa": epoch_l["l_oa"] / steps,
                "classes": cfg.num_classes,
                "levels": cfg.levels,
            }
            log_file.write(json.dumps(epoch_rec) + "\n")
            log_file.flush()
            history.append(epoch_rec)
            save_checkpoint(ckpt_path, cfg, model, adam, epoch + 1, rng)
    finally:
        log_file.close()

    return TrainResult(
        checkpoint_path=ckpt_path,
        log_path=log_path,
        epochs_run=last_epoch - start_epoch,
        history=history,
    )


# ---------------------------------------------------------------------------
# evaluation


def evaluate(
    model: Model,
    clouds: list[PointCloud],
    cfg: TrainConfig,
) -> tuple[ConfusionMatrix, dict]:
    """Eval-mode metrics over a dataset; deterministic per input."""
    cm = ConfusionMatrix(cfg.num_classes)
    ratios = cfg.ratios[: cfg.levels + 1]
    for idx, cloud in enumerate(clouds):
        if cloud.labels is None:
            raise ConfigError("evaluation clouds need labels")
        if cloud.labels.max() >= cfg.num_classes:
            raise ConfigError(
                f"cloud label {int(cloud.labels.max())} >= num_classes {cfg.num_classes}"
            )
        hier = build_hierarchy(cloud, ratios, cfg.k, seed=idx)
        res = model.forward(cloud, hier, EVAL)
        cm.accumulate(np.argmax(res.logits.data, axis=1), cloud.labels)
    iou, defined = iou_per_class(cm)
    report = {
        "oa": oa(cm),
        "miou": miou(cm),
        "macc": macc(cm),
        "per_class": [
            {"class_id": c, "iou": float(iou[c]), "defined": bool(defined[c])}
            for c in range(cfg.num_classes)
        ],
        "points": cm.total,
    }
    return cm, report


def evaluate_checkpoint(path, clouds: list[PointCloud]) -> tuple[ConfusionMatrix, dict]:
    cfg, model, _, _ = restore_model(load_checkpoint(path))
    return evaluate(model, clouds, cfg)
