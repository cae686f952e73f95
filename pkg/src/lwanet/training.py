"""Training loop: Adam, step-decay learning rate, focal loss, checkpointing."""

from __future__ import annotations

import json
import time
from collections import OrderedDict
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import network
from .autodiff import backward, zero_grads
from .data import augment, batch_iter
from .errors import ConfigError, TrainingDiverged
from .losses import FocalConfig, focal_loss
from .metrics import ConfusionAccumulator
from .ops import bilinear_upsample
from .tensor import Tensor, no_grad
from .weights import read_weights, write_weights


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 1
    decay_factor: float = 0.8
    decay_period: int = 30
    decay_unit: str = "epoch"  # the step-decay period unit ("epoch" or "step")
    gamma: float = 6.0
    seed: int = 0
    pretrained_encoder: str | None = None
    augment_pool: int = 0  # 0 = fresh augmentation every epoch; >0 = fixed pool

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("learning rate and eps must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError("decay factor must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0 or self.decay_period < 1:
            raise ConfigError("batch_size/epochs/decay_period out of range")
        if self.decay_unit not in ("epoch", "step"):
            raise ConfigError(f"decay_unit must be 'epoch' or 'step': {self.decay_unit}")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config key(s): {sorted(unknown)}")
        return cls(**d)


def lr_schedule(epoch, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_period)


class AdamState:
    def __init__(self):
        self.t = 0
        self.m = {}
        self.v = {}

    def ensure(self, name, like):
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)


def adam_step(params: "OrderedDict[str, Tensor]", grads, state: AdamState,
              lr, cfg: TrainConfig) -> None:
    """Standard bias-corrected Adam update, in place."""
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"missing gradient(s) for: {missing[:5]}")
    state.t += 1
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.eps
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name].astype(p.data.dtype, copy=False)
        state.ensure(name, p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def evaluate(model, samples, batch_size=8) -> dict:
    """Eval-mode metrics at full resolution (x4-upsampled logits, argmax)."""
    acc = ConfusionAccumulator(model.config.num_classes)
    with no_grad():
        for batch in batch_iter(samples, batch_size, shuffle=False):
            logits = model.forward(Tensor(model.normalize(batch.images)), mode="eval")
            logits = bilinear_upsample(logits, 4)
            pred = logits.data.argmax(axis=1)
            acc.update(pred, batch.masks)
    return {
        "mdice": acc.mean_dice(),
        "miou": acc.mean_iou(),
        "accumulator": acc,
    }


def _epoch_samples(samples, cfg: TrainConfig, augment_cfg, epoch):
    if augment_cfg is None:
        return samples
    if cfg.augment_pool > 0:
        # fixed augmented pool, independent of epoch
        return [
            augment(samples[j % len(samples)], augment_cfg,
                    np.random.default_rng([cfg.seed, 999, j]))
            for j in range(cfg.augment_pool)
        ]
    return [
        augment(s, augment_cfg, np.random.default_rng([cfg.seed, 1000 + epoch, j]))
        for j, s in enumerate(samples)
    ]


def _save_checkpoint(model, state, cfg, path, epoch_next, step, best_mdice):
    arrays = OrderedDict(model.state_arrays())
    for name, arr in state.m.items():
        arrays[f"optim.m.{name}"] = arr
    for name, arr in state.v.items():
        arrays[f"optim.v.{name}"] = arr
    write_weights(path, arrays, {
        "network": model.config.to_dict(),
        "train": cfg.to_dict(),
        "progress": {"epoch_next": epoch_next, "step": step,
                     "adam_t": state.t, "best_mdice": best_mdice},
    })


def load_checkpoint(model, path):
    """Restore model + optimizer state; returns (AdamState, progress dict)."""
    store = read_weights(path)
    model_arrays = {k: v for k, v in store.tensors.items() if not k.startswith("optim.")}
    model.load_state_arrays(model_arrays, strict=True)
    state = AdamState()
    progress = store.config.get("progress", {})
    state.t = int(progress.get("adam_t", 0))
    for k, v in store.tensors.items():
        if k.startswith("optim.m."):
            state.m[k[len("optim.m."):]] = v.copy()
        elif k.startswith("optim.v."):
            state.v[k[len("optim.v."):]] = v.copy()
    return state, progress


def train(model, train_samples, val_samples, cfg: TrainConfig, out_dir=None,
          augment_cfg=None, resume=None, log=None):
    """Run the training recipe; returns (model, history).

    With ``out_dir`` set, writes ``history.jsonl`` (one record per epoch,
    headed by the effective config), ``last.lwaw`` every epoch and
    ``best.lwaw`` on validation mean-Dice improvement. Deterministic given
    the config seed.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    params = model.named_parameters()
    state = AdamState()
    start_epoch = 0
    step = 0
    best_mdice = -1.0
    if resume is not None:
        state, progress = load_checkpoint(model, resume)
        start_epoch = int(progress.get("epoch_next", 0))
        step = int(progress.get("step", 0))
        best_mdice = float(progress.get("best_mdice", -1.0))
    if cfg.pretrained_encoder and resume is None:
        network.import_pretrained_encoder(model, cfg.pretrained_encoder)

    out_dir = Path(out_dir) if out_dir is not None else None
    hist_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        hist_path = out_dir / "history.jsonl"
        if resume is None or not hist_path.exists():
            header = {"config": {"network": model.config.to_dict(),
                                 "train": cfg.to_dict()}}
            hist_path.write_text(json.dumps(header) + "\n")

    focal_cfg = FocalConfig(gamma=cfg.gamma)
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch if cfg.decay_unit == "epoch" else step, cfg)
        samples = _epoch_samples(train_samples, cfg, augment_cfg, epoch)
        losses = []
        for batch in batch_iter(samples, cfg.batch_size, seed=cfg.seed, epoch=epoch):
            if cfg.decay_unit == "step":
                lr = lr_schedule(step, cfg)
            zero_grads(params.values())
            logits = model.forward(Tensor(model.normalize(batch.images)), mode="train")
            # logits come out at 1/4 resolution; lift them to mask resolution
            loss = focal_loss(bilinear_upsample(logits, 4), batch.masks, focal_cfg)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(step, lr)
            grads = backward(loss, params)
            adam_step(params, grads, state, lr, cfg)
            losses.append(loss.item())
            step += 1
        val = evaluate(model, val_samples) if val_samples else None
        rec = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_mdice": val["mdice"] if val else None,
            "val_miou": val["miou"] if val else None,
            "wall_s": time.perf_counter() - t0,
        }
        history.append(rec)
        if log:
            log(rec)
        if hist_path is not None:
            with open(hist_path, "a") as f:
                f.write(json.dumps(rec) + "\n")
        if out_dir is not None:
            if val and val["mdice"] > best_mdice:
                best_mdice = val["mdice"]
                network.save_weights(model, out_dir / "best.lwaw",
                                     {"train": cfg.to_dict()})
            _save_checkpoint(model, state, cfg, out_dir / "last.lwaw",
                             epoch + 1, step, best_mdice)
    return model, history
