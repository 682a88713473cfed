"""SGD training loop with decay-on-plateau, warmup and gradient clipping.

The whole run is a pure function of (config, data): parameter init, batch
shuffles and dropout masks all derive from the run seed, so two runs with
the same config produce bit-identical metrics logs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import RelationInstance, batchify, epoch_seed
from .errors import ConfigError, NumericError, UsageError
from .model import RelationModel

PROTOCOLS = ("tacred-micro", "semeval-macro")


@dataclass
class TrainConfig:
    lr: float = 1.0
    lr_decay: float = 0.5
    epochs: int = 30
    batch_size: int = 50
    warmup_steps: int = 0
    grad_clip: float = 5.0   # L2 norm over all gradients; <= 0 disables
    seed: int = 1
    patience: int = 1        # epochs without dev improvement before decay
    precision: str = "float32"  # applied by the run harness before model build

    def validate(self) -> "TrainConfig":
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be >= 1")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        return self


@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = 0.0

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.metrics:
                fh.write(json.dumps(entry) + "\n")


def _clip_gradients(params: dict, max_norm: float) -> float:
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= t.grad.dtype.type(factor)
    return norm


def train(model: RelationModel, train_set: Sequence[RelationInstance],
          dev_set: Sequence[RelationInstance], cfg: TrainConfig,
          protocol: str = "tacred-micro", log_path=None, checkpoint_path=None,
          verbose: bool = False) -> TrainResult:
    """Run the full recipe; the model ends up holding the best-dev weights.

    Per epoch: deterministic shuffle, batch-averaged cross-entropy,
    gradient clip, SGD step (with optional linear warmup over the first
    ``warmup_steps`` optimizer steps).  When dev F1 fails to improve for
    ``patience`` consecutive epochs, the learning rate is multiplied by
    ``lr_decay``.  The best-dev parameter snapshot is restored at the end.
    """
    cfg.validate()
    if not train_set:
        raise UsageError("empty training set")
    params = model.parameters()
    dropout_rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0xD0)))
    result = TrainResult()
    best_state: dict[str, np.ndarray] | None = None
    n_decays = 0
    stale = 0
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        epoch_lr = cfg.lr * (cfg.lr_decay ** n_decays)
        batches = batchify(train_set, cfg.batch_size,
                           seed=epoch_seed(cfg.seed, epoch), shuffle=True)
        loss_sum = 0.0
        for batch_idx, batch in enumerate(batches):
            ad.zero_grads(params.values())
            inv = 1.0 / len(batch)
            for inst in batch:
                loss, _ = model.loss(inst, train=True, rng=dropout_rng)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(
                        f"loss diverged at epoch {epoch}, batch {batch_idx}, "
                        f"instance {inst.id}: {value}")
                loss.backward(seed=inv)
                loss_sum += value
            _clip_gradients(params, cfg.grad_clip)
            step += 1
            lr_t = epoch_lr
            if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
                lr_t = epoch_lr * step / cfg.warmup_steps
            for t in params.values():
                if t.grad is not None:
                    t.data -= t.data.dtype.type(lr_t) * t.grad

        report = evaluate_dev(model, dev_set, protocol)
        entry = {"epoch": epoch, "train_loss": loss_sum / len(train_set),
                 "dev_P": report.precision, "dev_R": report.recall,
                 "dev_F1": report.f1, "lr": epoch_lr}
        result.metrics.append(entry)
        if verbose:
            print(json.dumps(entry))

        if report.f1 > result.best_f1 or best_state is None:
            result.best_f1 = report.f1
            result.best_epoch = epoch
            best_state = {k: t.data.copy() for k, t in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                n_decays += 1
                stale = 0

    if best_state is not None:
        for name, t in params.items():
            t.data = best_state[name]
            t.grad = None
    if log_path is not None:
        result.write_log(log_path)
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    return result


def evaluate_dev(model: RelationModel, dev_set: Sequence[RelationInstance],
                 protocol: str = "tacred-micro"):
    """Deterministic, dropout-free scoring of a dev/test split."""
    from .evaluation import micro_f1, semeval_macro_f1

    if not dev_set:
        raise UsageError("empty evaluation set")
    if protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    gold = [inst.relation for inst in dev_set]
    pred = model.predict_labels(dev_set)
    if protocol == "tacred-micro":
        return micro_f1(gold, pred)
    return semeval_macro_f1(gold, pred)


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
