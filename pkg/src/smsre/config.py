"""Flat key=value run configuration with CLI overrides and named presets.

Files hold one ``key = value`` pair per line (``#`` comments allowed).
Types are fixed by the RunConfig schema: booleans are ``true``/``false``,
integer lists are comma-separated.  Unknown keys are rejected so a typo
cannot silently fall back to a default.  Precedence is CLI > file >
defaults, and every run writes its fully resolved config next to its
outputs, which reproduces the run when fed back in.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from importlib import resources

from .encoders import ChannelConfig
from .errors import ConfigError
from .model import ModelConfig
from .sms import FeatureToggles
from .training import TrainConfig

PRESETS = ("tacred-lstm", "semeval-lstm", "tacred-frozen", "semeval-frozen")


@dataclass
class RunConfig:
    # data
    train_path: str = ""
    dev_path: str = ""
    test_path: str = ""
    dataset_format: str = "tacred"       # tacred | semeval
    protocol: str = "tacred-micro"       # tacred-micro | semeval-macro
    mask_entities: bool = False
    min_freq: int = 1
    max_length: int = 128
    word_vectors: str = ""
    # channels
    word_dim: int = 300
    pos_dim: int = 30
    ner_dim: int = 30
    position_dim: int = 30
    use_pos: bool = True
    use_ner: bool = True
    use_position: bool = True
    position_clip: int = 50
    # encoder
    encoder: str = "bilstm"              # bilstm | precomputed
    hidden_dim: int = 200
    encoder_dropout: float = 0.5
    precomputed_path: str = ""
    precomputed_dim: int = 0
    # head
    use_sentence: bool = True
    use_mention: bool = True
    use_segment: bool = True
    kernel_sizes: tuple[int, ...] = (1, 2, 3)
    head_dropout: float = 0.0
    segment_activation: bool = False
    per_kernel_query: bool = False
    # training
    lr: float = 1.0
    lr_decay: float = 0.5
    epochs: int = 30
    batch_size: int = 50
    warmup_steps: int = 0
    grad_clip: float = 5.0
    seed: int = 1
    patience: int = 1
    precision: str = "float32"

    def validate(self) -> "RunConfig":
        if self.dataset_format not in ("tacred", "semeval"):
            raise ConfigError(f"dataset_format must be tacred or semeval, "
                              f"got {self.dataset_format!r}")
        if self.protocol not in ("tacred-micro", "semeval-macro"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        self.model_config().validate()
        self.train_config().validate()
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            encoder=self.encoder,
            hidden_dim=self.hidden_dim,
            encoder_dropout=self.encoder_dropout,
            channels=ChannelConfig(
                word_dim=self.word_dim, pos_dim=self.pos_dim, ner_dim=self.ner_dim,
                position_dim=self.position_dim, use_pos=self.use_pos,
                use_ner=self.use_ner, use_position=self.use_position,
                position_clip=self.position_clip),
            toggles=FeatureToggles(
                use_sentence=self.use_sentence, use_mention=self.use_mention,
                use_segment=self.use_segment, kernel_sizes=tuple(self.kernel_sizes)),
            head_dropout=self.head_dropout,
            segment_activation=self.segment_activation,
            per_kernel_query=self.per_kernel_query,
            precomputed_path=self.precomputed_path,
            precomputed_dim=self.precomputed_dim,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, lr_decay=self.lr_decay, epochs=self.epochs,
            batch_size=self.batch_size, warmup_steps=self.warmup_steps,
            grad_clip=self.grad_clip, seed=self.seed, patience=self.patience,
            precision=self.precision,
        )

    # -- file format ---------------------------------------------------------

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type for f in fields(cls)}

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        cfg.apply_overrides(_read_pairs(path), source=str(path))
        return cfg

    def apply_overrides(self, pairs: dict[str, str], source: str = "override") -> None:
        valid = {f.name for f in fields(self)}
        for key, raw in pairs.items():
            if key not in valid:
                raise ConfigError(f"{source}: unknown config key {key!r}")
            setattr(self, key, _parse_value(key, raw, getattr(type(self)(), key)))

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f in fields(self):
                fh.write(f"{f.name} = {_format_value(getattr(self, f.name))}\n")


def _read_pairs(path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = text.split("=", 1)
            pairs[key.strip()] = raw.strip()
    return pairs


def _parse_value(key: str, raw: str, default):
    raw = raw.strip().strip('"')
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, tuple):
            if not raw:
                return ()
            return tuple(int(part) for part in raw.split(","))
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} ({exc})") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def resolve_config_path(name_or_path: str) -> str:
    """Accept either a filesystem path or a packaged preset name."""
    if os.path.exists(name_or_path):
        return name_or_path
    if name_or_path in PRESETS:
        ref = resources.files("smsre").joinpath("presets", f"{name_or_path}.cfg")
        return str(ref)
    raise ConfigError(f"config {name_or_path!r} is neither a file nor a preset "
                      f"({', '.join(PRESETS)})")


def run_config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
