"""Shared run plumbing: data prep, vocab/model construction, training runs.

Everything here is deterministic given a RunConfig; the CLI and the test
suite both drive runs through these helpers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph
from .config import RunConfig
from .data import (RelationInstance, Vocab, apply_max_length, build_vocab,
                   load_word_vectors, mask_entities, read_semeval, read_tacred_json)
from .encoders import ChannelConfig
from .errors import UsageError
from .model import ModelConfig, RelationModel
from .training import TrainResult, evaluate_dev, train


def load_dataset(path, dataset_format: str) -> list[RelationInstance]:
    if dataset_format == "tacred":
        return read_tacred_json(path)
    if dataset_format == "semeval":
        return read_semeval(path)
    raise UsageError(f"unknown dataset format {dataset_format!r}")


def prepare_instances(instances, cfg: RunConfig) -> list[RelationInstance]:
    """Apply entity masking and length truncation per the run config."""
    if cfg.mask_entities:
        instances = [mask_entities(inst) for inst in instances]
    kept, _dropped = apply_max_length(instances, cfg.max_length)
    return kept


def build_run_vocab(train_set, cfg: RunConfig) -> Vocab:
    pretrained = load_word_vectors(cfg.word_vectors) if cfg.word_vectors else None
    return build_vocab(train_set, min_freq=cfg.min_freq, pretrained=pretrained,
                       word_dim=cfg.word_dim, seed=cfg.seed)


def build_model(vocab: Vocab, cfg: RunConfig) -> RelationModel:
    ad.set_default_dtype(np.float32 if cfg.precision == "float32" else np.float64)
    return RelationModel(vocab, cfg.model_config(), np.random.default_rng(cfg.seed))


@dataclass
class RunOutputs:
    model: RelationModel
    result: TrainResult
    train_set: list[RelationInstance]
    dev_set: list[RelationInstance]
    vocab: Vocab


def run_training(cfg: RunConfig, outdir=None, verbose: bool = False) -> RunOutputs:
    """Full train run: read + prep data, build vocab/model, train, persist.

    When ``outdir`` is given, writes model.ckpt, metrics.jsonl and the
    resolved config.cfg there.
    """
    cfg.validate()
    if not cfg.train_path or not cfg.dev_path:
        raise UsageError("training needs train_path and dev_path")
    train_set = prepare_instances(load_dataset(cfg.train_path, cfg.dataset_format), cfg)
    dev_set = prepare_instances(load_dataset(cfg.dev_path, cfg.dataset_format), cfg)
    vocab = build_run_vocab(train_set, cfg)
    model = build_model(vocab, cfg)

    log_path = ckpt_path = None
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        log_path = os.path.join(outdir, "metrics.jsonl")
        ckpt_path = os.path.join(outdir, "model.ckpt")
        cfg.to_file(os.path.join(outdir, "config.cfg"))
    result = train(model, train_set, dev_set, cfg.train_config(),
                   protocol=cfg.protocol, log_path=log_path, verbose=verbose)
    if ckpt_path is not None:
        save_with_run_meta(model, ckpt_path, cfg)
    return RunOutputs(model=model, result=result, train_set=train_set,
                      dev_set=dev_set, vocab=vocab)


def save_with_run_meta(model: RelationModel, path, cfg: RunConfig) -> None:
    """Checkpoint plus the data-prep settings eval/predict must replicate."""
    model.save(path, extra_meta={"data_prep": {
        "dataset_format": cfg.dataset_format,
        "mask_entities": cfg.mask_entities,
        "max_length": cfg.max_length,
        "protocol": cfg.protocol,
        "precision": cfg.precision,
    }})


def load_for_inference(ckpt_path) -> tuple[RelationModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, data_prep meta)."""
    from .checkpoint import load_checkpoint

    _, meta = load_checkpoint(ckpt_path)
    prep = meta.get("data_prep", {})
    precision = prep.get("precision", "float32")
    ad.set_default_dtype(np.float32 if precision == "float32" else np.float64)
    model = RelationModel.load(ckpt_path)
    return model, prep


def prepare_for_checkpoint(instances, prep: dict) -> list[RelationInstance]:
    if prep.get("mask_entities"):
        instances = [mask_entities(inst) for inst in instances]
    kept, _ = apply_max_length(instances, int(prep.get("max_length", 128)))
    return kept


# ---------------------------------------------------------------------------
# gradient-check fixture
# ---------------------------------------------------------------------------


def gradcheck_graph(d: int, n: int, n_classes: int, seed: int) -> Graph:
    """A replayable full-model loss (BiLSTM encoder + head + cross-entropy)
    on one random instance, built in 64-bit mode for finite differences."""
    if d < 2 or d % 2:
        raise UsageError(f"d must be even and >= 2 (BiLSTM halves), got {d}")
    if n < 2:
        raise UsageError(f"n must be >= 2, got {n}")
    ad.set_default_dtype(np.float64)
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(8)]
    tokens = [words[int(rng.integers(0, len(words)))] for _ in range(n)]
    subj = int(rng.integers(0, n - 1))
    choices = [i for i in range(n) if i != subj]
    obj = int(rng.choice(choices))
    insts = [RelationInstance(
        id=f"gradcheck-{k}", tokens=tokens,
        subj_span=(subj, subj + 1), obj_span=(obj, obj + 1),
        subj_type="X", obj_type="Y", relation=f"r{k}",
    ).validate() for k in range(n_classes)]
    vocab = build_vocab(insts)
    cfg = ModelConfig(
        encoder="bilstm", hidden_dim=d // 2, encoder_dropout=0.0,
        channels=ChannelConfig(word_dim=5, use_pos=False, use_ner=False,
                               use_position=True, position_dim=2, position_clip=3),
    )
    model = RelationModel(vocab, cfg, rng)
    # nudge parameters away from zero so every path carries signal
    for t in model.parameters().values():
        t.data += rng.uniform(-0.05, 0.05, size=t.shape)
    inst = insts[0]

    def loss_fn(_rng):
        return model.loss(inst, train=False)[0]

    return Graph(loss_fn=loss_fn, params=model.parameters(), rng_seed=seed)
