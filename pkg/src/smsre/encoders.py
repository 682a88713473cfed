"""Token representations: multi-channel embeddings, BiLSTM, precomputed files.

The encoder produces the n x d matrix H the attention head consumes, plus
the three max-pooled summaries (subject span, object span, whole sentence).
Two encoder families are supported: a trainable single-layer bidirectional
LSTM over multi-channel embeddings, and frozen per-sentence matrices read
from a binary representation file (the stand-in for large pretrained
encoders).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import RelationInstance, Vocab
from .errors import ConfigError, RepresentationLookupError, ShapeError

# ---------------------------------------------------------------------------
# multi-channel embeddings
# ---------------------------------------------------------------------------


@dataclass
class ChannelConfig:
    """Input channel layout: word vectors plus POS / NER / position channels.

    Two positional channels (signed distance to the subject span and to the
    object span, clipped to +/- position_clip) share one embedding table.
    """

    word_dim: int = 300
    pos_dim: int = 30
    ner_dim: int = 30
    position_dim: int = 30
    use_pos: bool = True
    use_ner: bool = True
    use_position: bool = True
    position_clip: int = 50
    # uniform-init half-widths; no range is prescribed anywhere, so these
    # are recorded config defaults rather than claims.  Random word rows
    # default to +/- 0.5, roughly the spread of public 300-dim vectors.
    word_init_scale: float = 0.5
    channel_init_scale: float | None = None   # default 0.5/dim

    @property
    def input_width(self) -> int:
        e = self.word_dim
        if self.use_pos:
            e += self.pos_dim
        if self.use_ner:
            e += self.ner_dim
        if self.use_position:
            e += 2 * self.position_dim
        return e


def position_ids(n: int, span: tuple[int, int], clip: int) -> list[int]:
    """Signed distance of each token to a half-open span, clipped and shifted
    to non-negative ids in [0, 2*clip]."""
    lo, hi = span
    ids = []
    for i in range(n):
        if i < lo:
            dist = i - lo
        elif i >= hi:
            dist = i - (hi - 1)
        else:
            dist = 0
        ids.append(max(-clip, min(clip, dist)) + clip)
    return ids


class EmbeddingBank:
    """Owns the trainable embedding tables for every enabled channel."""

    def __init__(self, vocab: Vocab, cfg: ChannelConfig, rng: np.random.Generator):
        self.vocab = vocab
        self.cfg = cfg
        dtype = ad.get_default_dtype()

        def uniform(shape, half_width):
            return Tensor(rng.uniform(-half_width, half_width, size=shape).astype(dtype),
                          requires_grad=True)

        word_scale = cfg.word_init_scale
        if vocab.word_matrix is not None:
            if vocab.word_matrix.shape[1] != cfg.word_dim:
                raise ConfigError(f"pretrained vectors are {vocab.word_matrix.shape[1]}-dim, "
                                  f"config says word_dim={cfg.word_dim}")
            self.word = Tensor(vocab.word_matrix.astype(dtype), requires_grad=True)
        else:
            self.word = uniform((vocab.n_words, cfg.word_dim), word_scale)

        self.pos = self.ner = self.position = None
        if cfg.use_pos:
            self.pos = uniform((len(vocab.pos2id), cfg.pos_dim),
                               cfg.channel_init_scale or 0.5 / cfg.pos_dim)
        if cfg.use_ner:
            self.ner = uniform((len(vocab.ner2id), cfg.ner_dim),
                               cfg.channel_init_scale or 0.5 / cfg.ner_dim)
        if cfg.use_position:
            self.position = uniform((2 * cfg.position_clip + 1, cfg.position_dim),
                                    cfg.channel_init_scale or 0.5 / cfg.position_dim)

    def parameters(self) -> dict[str, Tensor]:
        named = {"embed.word": self.word}
        for name, t in (("embed.pos", self.pos), ("embed.ner", self.ner),
                        ("embed.position", self.position)):
            if t is not None:
                named[name] = t
        return named


def embed_tokens(inst: RelationInstance, bank: EmbeddingBank) -> Tensor:
    """Concatenate per-token channels into the n x e input matrix.

    Channels, in order: word, POS, NER, distance-to-subject,
    distance-to-object.  Out-of-vocabulary words map to UNK rows.
    """
    inst.validate()
    vocab, cfg = bank.vocab, bank.cfg
    n = inst.n
    parts = [ad.embedding_lookup(bank.word, [vocab.word_id(t) for t in inst.tokens])]
    if cfg.use_pos:
        tags = inst.pos_tags or [""] * n
        parts.append(ad.embedding_lookup(bank.pos, [vocab.pos_id(t) for t in tags]))
    if cfg.use_ner:
        tags = inst.ner_tags or [""] * n
        parts.append(ad.embedding_lookup(bank.ner, [vocab.ner_id(t) for t in tags]))
    if cfg.use_position:
        parts.append(ad.embedding_lookup(
            bank.position, position_ids(n, inst.subj_span, cfg.position_clip)))
        parts.append(ad.embedding_lookup(
            bank.position, position_ids(n, inst.obj_span, cfg.position_clip)))
    return parts[0] if len(parts) == 1 else ad.hstack(parts)


# ---------------------------------------------------------------------------
# bidirectional LSTM
# ---------------------------------------------------------------------------


@dataclass
class LstmDirection:
    """One direction's gate parameters, packed [input, forget, cell, output]."""

    w: Tensor  # (4h, e)
    u: Tensor  # (4h, h)
    b: Tensor  # (4h,)


@dataclass
class LstmParams:
    fwd: LstmDirection
    bwd: LstmDirection
    hidden: int

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for tag, d in (("fwd", self.fwd), ("bwd", self.bwd)):
            out[f"lstm.{tag}.w"] = d.w
            out[f"lstm.{tag}.u"] = d.u
            out[f"lstm.{tag}.b"] = d.b
        return out


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int,
              init_range: float = 0.08) -> LstmParams:
    """Uniform init in +/- init_range; forget-gate bias starts at 1.0."""
    dtype = ad.get_default_dtype()

    def direction() -> LstmDirection:
        w = rng.uniform(-init_range, init_range, size=(4 * hidden, input_dim))
        u = rng.uniform(-init_range, init_range, size=(4 * hidden, hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        return LstmDirection(w=Tensor(w.astype(dtype), requires_grad=True),
                             u=Tensor(u.astype(dtype), requires_grad=True),
                             b=Tensor(b.astype(dtype), requires_grad=True))

    return LstmParams(fwd=direction(), bwd=direction(), hidden=hidden)


def _run_direction(rows: list[Tensor], p: LstmDirection, hidden: int) -> list[Tensor]:
    h_prev = ad.zeros(hidden)
    c_prev = ad.zeros(hidden)
    outs = []
    for x in rows:
        z = ad.affine2(p.w, x, p.u, h_prev, p.b)
        h_prev, c_prev = ad.lstm_step(z, c_prev)
        outs.append(h_prev)
    return outs


def bilstm_encode(e_matrix: Tensor, params: LstmParams, dropout_p: float = 0.0,
                  train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Single-layer BiLSTM: per-token concat of forward and backward states.

    Dropout (inverted scaling) is applied to the input matrix and to the
    output matrix at train time only, so d = 2 * hidden.
    """
    if e_matrix.ndim != 2 or e_matrix.shape[0] < 1:
        raise ShapeError(f"bilstm_encode expects a non-empty n x e matrix, got {e_matrix.shape}")
    if train and dropout_p > 0.0:
        if rng is None:
            raise ConfigError("training-mode dropout needs an rng")
        e_matrix = ad.dropout(e_matrix, dropout_p, rng, train=True)
    n = e_matrix.shape[0]
    rows = [ad.row(e_matrix, i) for i in range(n)]
    fwd = _run_direction(rows, params.fwd, params.hidden)
    bwd = _run_direction(rows[::-1], params.bwd, params.hidden)[::-1]
    h = ad.stack_rows([ad.concat([f, b]) for f, b in zip(fwd, bwd)])
    if train and dropout_p > 0.0:
        h = ad.dropout(h, dropout_p, rng, train=True)
    return h


# ---------------------------------------------------------------------------
# pooled sentence view
# ---------------------------------------------------------------------------


@dataclass
class EncodedSentence:
    """Token matrix H plus its three max-pooled summaries."""

    h_matrix: Tensor          # n x d
    h_e1: Tensor              # subject span pool
    h_e2: Tensor              # object span pool
    h_g: Tensor               # whole-sentence pool
    n: int
    d: int


def pool(h_matrix: Tensor, s1: tuple[int, int], s2: tuple[int, int]) -> EncodedSentence:
    """Max-pool the two entity spans and the full sentence out of H.

    Overlapping spans are legal but suspicious, so they warn.
    """
    n, d = h_matrix.shape
    if s1[0] < s2[1] and s2[0] < s1[1]:
        warnings.warn(f"entity spans {s1} and {s2} overlap", stacklevel=2)
    return EncodedSentence(
        h_matrix=h_matrix,
        h_e1=ad.max_pool_rows(h_matrix, *s1),
        h_e2=ad.max_pool_rows(h_matrix, *s2),
        h_g=ad.max_pool_rows(h_matrix, 0, n),
        n=n, d=d,
    )


# ---------------------------------------------------------------------------
# precomputed representation files
# ---------------------------------------------------------------------------

REPR_MAGIC = b"SMSR"


def write_representations(path, reps: dict[str, np.ndarray]) -> None:
    """Write per-sentence matrices: magic, count, then (id, n, d, float32 rows)."""
    with open(path, "wb") as fh:
        fh.write(REPR_MAGIC)
        fh.write(struct.pack("<I", len(reps)))
        for rid, mat in reps.items():
            mat = np.ascontiguousarray(mat, dtype="<f4")
            if mat.ndim != 2:
                raise ShapeError(f"representation {rid!r} must be 2-D, got {mat.shape}")
            rid_b = rid.encode("utf-8")
            fh.write(struct.pack("<I", len(rid_b)))
            fh.write(rid_b)
            fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
            fh.write(mat.tobytes())


def read_representations(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != REPR_MAGIC:
        raise RepresentationLookupError(
            f"{path}: bad magic {blob[:4]!r}, expected {REPR_MAGIC!r}")
    (count,) = struct.unpack_from("<I", blob, 4)
    pos = 8
    reps: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (rid_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            rid = blob[pos:pos + rid_len].decode("utf-8")
            pos += rid_len
            n, d = struct.unpack_from("<II", blob, pos)
            pos += 8
            mat = np.frombuffer(blob, dtype="<f4", count=n * d, offset=pos).reshape(n, d)
            pos += 4 * n * d
            reps[rid] = mat.copy()
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise RepresentationLookupError(f"{path}: truncated representation file ({exc})") from exc
    return reps


@dataclass
class RepresentationStore:
    """Lazy handle on a representation file; loads once on first lookup."""

    path: str
    _cache: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def get(self, sentence_id: str) -> np.ndarray:
        if self._cache is None:
            self._cache = read_representations(self.path)
        if sentence_id not in self._cache:
            raise RepresentationLookupError(
                f"{self.path}: no representation for sentence id {sentence_id!r}")
        return self._cache[sentence_id]


def load_precomputed(path, sentence_id: str, expected_dim: int | None = None) -> Tensor:
    """Fetch one frozen sentence matrix; gradient never flows into it."""
    mat = RepresentationStore(str(path)).get(sentence_id)
    if expected_dim is not None and mat.shape[1] != expected_dim:
        raise ConfigError(f"representation {sentence_id!r} is {mat.shape[1]}-dim, "
                          f"model expects {expected_dim}")
    return Tensor(mat.astype(ad.get_default_dtype()), requires_grad=False)
