"""Multi-granularity hierarchical feature extractor and relation classifier.

Three attention sites share one scaled dot-product form
(softmax(keys @ query / sqrt(d)) @ keys):

* mention attention — each pooled entity vector queries H directly,
  modelling mentions/co-references of that entity implicitly;
* mention-aware segment attention — a projection of the two mention
  features queries per-kernel-size convolution banks of n-gram segments;
* global semantic attention — a projection of [h_e1; h_e2; h_g] queries H.

The selected feature vectors are concatenated in a fixed order, passed
through one ReLU layer, and classified with a softmax.  Feature groups can
be toggled independently for ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import EncodedSentence
from .errors import ConfigError, ShapeError

FEATURE_ORDER = ("sentence", "mention_1", "mention_2", "segment")


@dataclass
class FeatureToggles:
    """Ablation switches for the three feature groups."""

    use_sentence: bool = True
    use_mention: bool = True
    use_segment: bool = True
    kernel_sizes: tuple[int, ...] = (1, 2, 3)

    def validate(self) -> "FeatureToggles":
        if not (self.use_sentence or self.use_mention or self.use_segment):
            raise ConfigError("at least one feature group must be enabled")
        if self.use_segment and not self.kernel_sizes:
            raise ConfigError("segment features enabled but kernel_sizes is empty")
        if any(t < 1 for t in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be >= 1, got {self.kernel_sizes}")
        if len(set(self.kernel_sizes)) != len(self.kernel_sizes):
            raise ConfigError(f"duplicate kernel sizes: {self.kernel_sizes}")
        return self

    @property
    def n_blocks(self) -> int:
        """Number of d-wide blocks entering aggregation."""
        blocks = 0
        if self.use_sentence:
            blocks += 1
        if self.use_mention:
            blocks += 2
        if self.use_segment:
            blocks += len(self.kernel_sizes)
        return blocks


@dataclass
class SmsParams:
    """All head parameters.  Parameters of disabled groups still exist (and
    are carried through checkpoints) but never influence the output."""

    d: int
    n_relations: int
    toggles: FeatureToggles
    w_s: Tensor          # (d, 3d) global-semantic query projection
    w_m: Tensor          # (d, 2d) mention-pair query projection, shared over t
    kernels: dict[int, Tensor]  # t -> (t*d, d)
    w_a: Tensor          # (d, n_blocks*d) aggregation
    b_a: Tensor
    w_o: Tensor          # (n_relations, d) output layer
    b_o: Tensor
    w_m_per_t: dict[int, Tensor] | None = None  # optional per-kernel-size queries

    def parameters(self) -> dict[str, Tensor]:
        named = {"head.w_s": self.w_s, "head.w_m": self.w_m,
                 "head.w_a": self.w_a, "head.b_a": self.b_a,
                 "head.w_o": self.w_o, "head.b_o": self.b_o}
        for t, k in sorted(self.kernels.items()):
            named[f"head.conv{t}"] = k
        if self.w_m_per_t:
            for t, m in sorted(self.w_m_per_t.items()):
                named[f"head.w_m{t}"] = m
        return named


def init_sms_params(rng: np.random.Generator, d: int, n_relations: int,
                    toggles: FeatureToggles | None = None,
                    per_kernel_query: bool = False) -> SmsParams:
    """Uniform +/- sqrt(1/fan_in) init; conv kernels +/- sqrt(1/(t*d))."""
    toggles = (toggles or FeatureToggles()).validate()
    if n_relations < 2:
        raise ConfigError(f"need at least 2 relation labels, got {n_relations}")
    dtype = ad.get_default_dtype()

    def uniform(shape, fan_in):
        bound = math.sqrt(1.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                      requires_grad=True)

    kernels = {t: uniform((t * d, d), t * d) for t in toggles.kernel_sizes}
    width = toggles.n_blocks * d
    per_t = None
    if per_kernel_query:
        per_t = {t: uniform((d, 2 * d), 2 * d) for t in toggles.kernel_sizes}
    return SmsParams(
        d=d, n_relations=n_relations, toggles=toggles,
        w_s=uniform((d, 3 * d), 3 * d),
        w_m=uniform((d, 2 * d), 2 * d),
        kernels=kernels,
        w_a=uniform((d, width), width),
        b_a=ad.zeros(d, requires_grad=True),
        w_o=uniform((n_relations, d), d),
        b_o=ad.zeros(n_relations, requires_grad=True),
        w_m_per_t=per_t,
    )


@dataclass
class SmsOutput:
    """Relation distribution plus every attention vector for inspection.

    Attention fields of disabled feature groups are None / empty.
    """

    probs: Tensor
    h_o: Tensor
    attn_mention_1: Tensor | None = None
    attn_mention_2: Tensor | None = None
    attn_global: Tensor | None = None
    attn_segment: dict[int, Tensor] = field(default_factory=dict)

    def predicted_class(self) -> int:
        return int(np.argmax(self.probs.data))


# ---------------------------------------------------------------------------
# attention sites
# ---------------------------------------------------------------------------


def attend(query: Tensor, keys: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention where keys double as values.

    weights = softmax(keys @ query / sqrt(d)); context = weights @ keys.
    """
    if keys.ndim != 2:
        raise ShapeError(f"attend: keys must be n x d, got {keys.shape}")
    d = keys.shape[1]
    if d == 0:
        raise ConfigError("attend: zero-width keys")
    if query.shape != (d,):
        raise ShapeError(f"attend: query shape {query.shape} does not match key width {d}")
    scores = ad.scale(ad.matmul(keys, query), 1.0 / math.sqrt(d))
    weights = ad.softmax(scores)
    context = ad.matmul(weights, keys)
    return context, weights


def mention_features(enc: EncodedSentence) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Entity-queried attention over H; no learned projection on the query."""
    h1, w1 = attend(enc.h_e1, enc.h_matrix)
    h2, w2 = attend(enc.h_e2, enc.h_matrix)
    return h1, h2, w1, w2


def segment_banks(h_matrix: Tensor, kernels: dict[int, Tensor],
                  activation: bool = False) -> dict[int, Tensor]:
    """Per-kernel-size n-gram banks via same-length convolution.

    Plain convolution by default; ``activation`` adds a ReLU for
    experiments, off unless configured.
    """
    if not kernels:
        raise ConfigError("segment_banks needs a non-empty kernel set")
    banks = {}
    for t, kernel in sorted(kernels.items()):
        bank = ad.conv1d_same(h_matrix, kernel, t)
        banks[t] = ad.relu(bank) if activation else bank
    return banks


def mention_aware_segments(banks: dict[int, Tensor], h1: Tensor, h2: Tensor,
                           w_m: Tensor, w_m_per_t: dict[int, Tensor] | None = None
                           ) -> tuple[dict[int, Tensor], dict[int, Tensor]]:
    """Attend over each segment bank with a query built from both mention
    features; the softmax normalizes per bank."""
    pair = ad.concat([h1, h2])
    shared_query = ad.matmul(w_m, pair)
    features, weights = {}, {}
    for t, bank in sorted(banks.items()):
        query = ad.matmul(w_m_per_t[t], pair) if w_m_per_t else shared_query
        features[t], weights[t] = attend(query, bank)
    return features, weights


def global_semantic(enc: EncodedSentence, w_s: Tensor) -> tuple[Tensor, Tensor]:
    """Sentence-level attention queried by a projection of [h_e1; h_e2; h_g]."""
    if w_s.shape != (enc.d, 3 * enc.d):
        raise ShapeError(f"global_semantic: w_s shape {w_s.shape} != ({enc.d}, {3 * enc.d})")
    query = ad.matmul(w_s, ad.concat([enc.h_e1, enc.h_e2, enc.h_g]))
    return attend(query, enc.h_matrix)


def aggregate(h_s: Tensor | None, h1: Tensor | None, h2: Tensor | None,
              h_m: dict[int, Tensor], w_a: Tensor, b_a: Tensor,
              toggles: FeatureToggles) -> Tensor:
    """One ReLU layer over the enabled features, concatenated in the fixed
    order [sentence, mention_1, mention_2, segments by kernel size]."""
    parts: list[Tensor] = []
    if toggles.use_sentence:
        if h_s is None:
            raise ConfigError("sentence features enabled but h_s missing")
        parts.append(h_s)
    if toggles.use_mention:
        if h1 is None or h2 is None:
            raise ConfigError("mention features enabled but missing")
        parts.extend([h1, h2])
    if toggles.use_segment:
        for t in sorted(toggles.kernel_sizes):
            if t not in h_m:
                raise ConfigError(f"segment features enabled but bank {t} missing")
            parts.append(h_m[t])
    width = sum(p.shape[0] for p in parts)
    if w_a.shape[1] != width:
        raise ConfigError(f"aggregation weight is {w_a.shape}, enabled features "
                          f"concatenate to width {width}")
    return ad.relu(ad.add(ad.matmul(w_a, ad.concat(parts)), b_a))


def classify(h_o: Tensor, w_o: Tensor, b_o: Tensor) -> Tensor:
    """Softmax distribution over relations."""
    return ad.softmax(ad.add(ad.matmul(w_o, h_o), b_o))


def forward(enc: EncodedSentence, params: SmsParams,
            toggles: FeatureToggles | None = None,
            segment_activation: bool = False,
            head_dropout: float = 0.0, train: bool = False,
            rng: np.random.Generator | None = None) -> SmsOutput:
    """Full head pass; records every attention vector that was computed.

    Mention features are computed whenever the mention group or the
    segment group is enabled, since segment queries are built from them.
    """
    toggles = (toggles or params.toggles).validate()
    h1 = h2 = h_s = None
    w1 = w2 = w_g = None
    h_m: dict[int, Tensor] = {}
    w_seg: dict[int, Tensor] = {}

    if toggles.use_mention or toggles.use_segment:
        h1, h2, w1, w2 = mention_features(enc)
    if toggles.use_segment:
        kernels = {t: params.kernels[t] for t in toggles.kernel_sizes}
        banks = segment_banks(enc.h_matrix, kernels, activation=segment_activation)
        h_m, w_seg = mention_aware_segments(banks, h1, h2, params.w_m, params.w_m_per_t)
    if toggles.use_sentence:
        h_s, w_g = global_semantic(enc, params.w_s)

    h_o = aggregate(h_s, h1, h2, h_m, params.w_a, params.b_a, toggles)
    if train and head_dropout > 0.0:
        if rng is None:
            raise ConfigError("head dropout needs an rng")
        h_o = ad.dropout(h_o, head_dropout, rng, train=True)
    probs = classify(h_o, params.w_o, params.b_o)
    return SmsOutput(probs=probs, h_o=h_o,
                     attn_mention_1=w1, attn_mention_2=w2, attn_global=w_g,
                     attn_segment=w_seg)
