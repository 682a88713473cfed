"""End-to-end relation model: channels -> encoder -> attention head.

Two encoder paths share the head: the trainable multi-channel BiLSTM, and
frozen per-sentence matrices from a representation file (whose start/end
marker rows, when present, join the global pool but shift the entity
spans by one).  Checkpoints carry every parameter plus the vocabulary and
hyperparameters needed to rebuild the model for inference.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import PAD, RelationInstance, Vocab
from .encoders import (ChannelConfig, EmbeddingBank, EncodedSentence, LstmParams,
                       RepresentationStore, bilstm_encode, embed_tokens, init_lstm,
                       pool)
from .errors import CheckpointError, ConfigError
from .sms import FeatureToggles, SmsOutput, SmsParams, forward, init_sms_params


@dataclass
class ModelConfig:
    encoder: str = "bilstm"              # "bilstm" | "precomputed"
    hidden_dim: int = 200                # per direction; d = 2 * hidden_dim
    encoder_dropout: float = 0.5
    channels: ChannelConfig = field(default_factory=ChannelConfig)
    toggles: FeatureToggles = field(default_factory=FeatureToggles)
    head_dropout: float = 0.0
    segment_activation: bool = False
    per_kernel_query: bool = False
    precomputed_path: str = ""
    precomputed_dim: int = 0

    def validate(self) -> "ModelConfig":
        if self.encoder not in ("bilstm", "precomputed"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.encoder == "bilstm" and self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.encoder == "precomputed" and self.precomputed_dim < 1:
            raise ConfigError("precomputed encoder needs precomputed_dim")
        self.toggles.validate()
        return self

    @property
    def d(self) -> int:
        return 2 * self.hidden_dim if self.encoder == "bilstm" else self.precomputed_dim

    def to_dict(self) -> dict:
        out = asdict(self)
        out["channels"] = asdict(self.channels)
        out["toggles"] = asdict(self.toggles)
        out["toggles"]["kernel_sizes"] = list(self.toggles.kernel_sizes)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        raw = dict(raw)
        channels = ChannelConfig(**raw.pop("channels", {}))
        tog_raw = dict(raw.pop("toggles", {}))
        if "kernel_sizes" in tog_raw:
            tog_raw["kernel_sizes"] = tuple(tog_raw["kernel_sizes"])
        toggles = FeatureToggles(**tog_raw)
        return cls(channels=channels, toggles=toggles, **raw)


class RelationModel:
    """Trainable relation classifier over one of the two encoder paths."""

    def __init__(self, vocab: Vocab, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.vocab = vocab
        self.cfg = cfg
        self.n_relations = len(vocab.id2rel)
        self.bank: EmbeddingBank | None = None
        self.lstm: LstmParams | None = None
        self.store: RepresentationStore | None = None
        if cfg.encoder == "bilstm":
            self.bank = EmbeddingBank(vocab, cfg.channels, rng)
            self.lstm = init_lstm(rng, cfg.channels.input_width, cfg.hidden_dim)
        else:
            self.store = RepresentationStore(cfg.precomputed_path)
        self.head: SmsParams = init_sms_params(
            rng, cfg.d, self.n_relations, cfg.toggles,
            per_kernel_query=cfg.per_kernel_query)

    @property
    def d(self) -> int:
        return self.cfg.d

    def parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        if self.bank is not None:
            named.update(self.bank.parameters())
        if self.lstm is not None:
            named.update(self.lstm.parameters())
        named.update(self.head.parameters())
        return named

    # -- forward ------------------------------------------------------------

    def encode(self, inst: RelationInstance, train: bool = False,
               rng: np.random.Generator | None = None) -> EncodedSentence:
        if self.cfg.encoder == "bilstm":
            e_matrix = embed_tokens(inst, self.bank)
            h = bilstm_encode(e_matrix, self.lstm, self.cfg.encoder_dropout,
                              train=train, rng=rng)
            return pool(h, inst.subj_span, inst.obj_span)
        mat = self.store.get(inst.id)
        if mat.shape[1] != self.cfg.precomputed_dim:
            raise ConfigError(f"representation {inst.id!r} is {mat.shape[1]}-dim, "
                              f"model expects {self.cfg.precomputed_dim}")
        if mat.shape[0] == inst.n:
            offset = 0
        elif mat.shape[0] == inst.n + 2:
            offset = 1  # leading/trailing marker rows join h_g only
        else:
            raise ConfigError(f"representation {inst.id!r} has {mat.shape[0]} rows "
                              f"for {inst.n} tokens (want n or n+2)")
        h = Tensor(mat.astype(ad.get_default_dtype()))
        s1 = (inst.subj_span[0] + offset, inst.subj_span[1] + offset)
        s2 = (inst.obj_span[0] + offset, inst.obj_span[1] + offset)
        return pool(h, s1, s2)

    def forward(self, inst: RelationInstance, train: bool = False,
                rng: np.random.Generator | None = None) -> SmsOutput:
        enc = self.encode(inst, train=train, rng=rng)
        return forward(enc, self.head,
                       segment_activation=self.cfg.segment_activation,
                       head_dropout=self.cfg.head_dropout, train=train, rng=rng)

    def loss(self, inst: RelationInstance, train: bool = True,
             rng: np.random.Generator | None = None) -> tuple[Tensor, SmsOutput]:
        out = self.forward(inst, train=train, rng=rng)
        gold = self.vocab.rel_id(inst.relation)
        return ad.cross_entropy(out.probs, gold), out

    def predict_label(self, inst: RelationInstance) -> str:
        return self.vocab.id2rel[self.forward(inst).predicted_class()]

    def predict_labels(self, instances: Iterable[RelationInstance]) -> list[str]:
        return [self.predict_label(inst) for inst in instances]

    # -- state --------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.parameters().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for name, t in params.items():
            arr = arrays[name]
            if tuple(arr.shape) != t.shape:
                raise CheckpointError(f"parameter {name}: checkpoint shape {arr.shape} "
                                      f"!= model shape {t.shape}")
            t.data = arr.astype(t.data.dtype)
            t.grad = None

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {
            "model": self.cfg.to_dict(),
            "d": self.d,
            "n_relations": self.n_relations,
            "vocab": {
                "words": _ordered(self.vocab.word2id),
                "pos": _ordered(self.vocab.pos2id),
                "ner": _ordered(self.vocab.ner2id),
                "relations": list(self.vocab.id2rel),
            },
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> "RelationModel":
        arrays, meta = load_checkpoint(path)
        if "model" not in meta or "vocab" not in meta:
            raise CheckpointError(f"{path}: checkpoint lacks model/vocab metadata")
        cfg = ModelConfig.from_dict(meta["model"])
        v = meta["vocab"]
        vocab = Vocab(
            word2id={w: i for i, w in enumerate(v["words"])},
            pos2id={t: i for i, t in enumerate(v["pos"])},
            ner2id={t: i for i, t in enumerate(v["ner"])},
            rel2id={r: i for i, r in enumerate(v["relations"])},
            id2rel=list(v["relations"]),
        )
        model = cls(vocab, cfg, np.random.default_rng(0))
        model.load_state(arrays)
        return model

    def clone_config(self, **overrides) -> ModelConfig:
        return replace(self.cfg, **overrides)


def _ordered(mapping: dict[str, int]) -> list[str]:
    return [k for k, _ in sorted(mapping.items(), key=lambda kv: kv[1])]


def count_parameters(model: RelationModel) -> int:
    return sum(int(np.prod(t.shape)) for t in model.parameters().values())
