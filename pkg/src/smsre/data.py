"""Dataset ingestion, entity masking, vocabulary and synthetic corpora.

Real data arrives in one of two formats: the Tacred-style JSON array
(record fields ``token``, ``subj_start``/``subj_end`` inclusive, types,
optional ``stanford_pos``/``stanford_ner``, ``relation``, ``id``) or the
SemEval 2010 task-8 text format with inline ``<e1>``/``<e2>`` markers.
Spans are converted to half-open [start, end) at parse time and stay that
way everywhere else.

The synthetic generator plants a per-relation trigger n-gram between an
entity mention (sometimes a pronoun standing in for the subject) and the
object entity, producing a compositional test split whose entity/relation
pairings never occur in training.  Trigger positions are recorded in a
sidecar for attention audits.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (InstanceError, LabelError, MaskingError, ParseError,
                     SynthSpecError, UsageError)

PAD = "<PAD>"
UNK = "<UNK>"


@dataclass
class RelationInstance:
    """One pre-tokenized sentence with a marked entity pair and its relation."""

    id: str
    tokens: list[str]
    subj_span: tuple[int, int]  # half-open
    obj_span: tuple[int, int]   # half-open
    subj_type: str = ""
    obj_type: str = ""
    pos_tags: list[str] | None = None
    ner_tags: list[str] | None = None
    relation: str = ""

    @property
    def n(self) -> int:
        return len(self.tokens)

    def validate(self) -> "RelationInstance":
        n = self.n
        for name, (lo, hi) in (("subj", self.subj_span), ("obj", self.obj_span)):
            if not (0 <= lo < hi <= n):
                raise InstanceError(
                    f"instance {self.id}: {name} span [{lo}, {hi}) invalid for {n} tokens")
        for name, tags in (("pos", self.pos_tags), ("ner", self.ner_tags)):
            if tags is not None and len(tags) != n:
                raise InstanceError(
                    f"instance {self.id}: {name} tags length {len(tags)} != {n} tokens")
        return self


# ---------------------------------------------------------------------------
# Tacred-style JSON
# ---------------------------------------------------------------------------

_TACRED_REQUIRED = ("id", "token", "subj_start", "subj_end", "obj_start", "obj_end",
                    "subj_type", "obj_type", "relation")


def read_tacred_json(path) -> list[RelationInstance]:
    """Parse a Tacred-schema JSON array; inclusive ends become half-open."""
    with open(path, encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise ParseError(f"{path}: expected a JSON array of records")
    instances = []
    for i, rec in enumerate(records):
        rec_id = rec.get("id", f"<record {i}>") if isinstance(rec, dict) else f"<record {i}>"
        if not isinstance(rec, dict):
            raise ParseError(f"{path}: record {rec_id} is not an object")
        missing = [f for f in _TACRED_REQUIRED if f not in rec]
        if missing:
            raise ParseError(f"{path}: record {rec_id} missing fields {missing}")
        try:
            inst = RelationInstance(
                id=str(rec["id"]),
                tokens=list(rec["token"]),
                subj_span=(int(rec["subj_start"]), int(rec["subj_end"]) + 1),
                obj_span=(int(rec["obj_start"]), int(rec["obj_end"]) + 1),
                subj_type=str(rec["subj_type"]),
                obj_type=str(rec["obj_type"]),
                pos_tags=list(rec["stanford_pos"]) if "stanford_pos" in rec else None,
                ner_tags=list(rec["stanford_ner"]) if "stanford_ner" in rec else None,
                relation=str(rec["relation"]),
            ).validate()
        except (TypeError, ValueError, InstanceError) as exc:
            raise ParseError(f"{path}: record {rec_id}: {exc}") from exc
        instances.append(inst)
    return instances


def write_tacred_json(path, instances: Sequence[RelationInstance]) -> None:
    """Serialize instances back to the Tacred JSON schema (inclusive ends)."""
    records = []
    for inst in instances:
        rec = {
            "id": inst.id,
            "token": list(inst.tokens),
            "subj_start": inst.subj_span[0],
            "subj_end": inst.subj_span[1] - 1,
            "obj_start": inst.obj_span[0],
            "obj_end": inst.obj_span[1] - 1,
            "subj_type": inst.subj_type,
            "obj_type": inst.obj_type,
            "relation": inst.relation,
        }
        if inst.pos_tags is not None:
            rec["stanford_pos"] = list(inst.pos_tags)
        if inst.ner_tags is not None:
            rec["stanford_ner"] = list(inst.ner_tags)
        records.append(rec)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=1)


# ---------------------------------------------------------------------------
# SemEval 2010 task 8 text format
# ---------------------------------------------------------------------------

_SEMEVAL_HEAD = re.compile(r"^(\d+)\s+\"(.*)\"\s*$")
_MARKERS = ("<e1>", "</e1>", "<e2>", "</e2>")


def read_semeval(path) -> list[RelationInstance]:
    """Parse the official SemEval text format (sentence + relation lines).

    Tokens come from whitespace splitting after isolating the entity
    markers, so the marked entities become clean token spans; no further
    tokenization is attempted.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    instances = []
    i = 0
    while i < len(lines):
        line = lines[i]
        head = _SEMEVAL_HEAD.match(line)
        if head is None:
            if line.strip():
                raise ParseError(f"{path}:{i + 1}: expected '<id>\\t\"sentence\"', got {line!r}")
            i += 1
            continue
        sent_id, sentence = head.group(1), head.group(2)
        if i + 1 >= len(lines) or not lines[i + 1].strip():
            raise ParseError(f"{path}:{i + 1}: sentence {sent_id} has no relation line")
        relation = lines[i + 1].strip()
        tokens, subj_span, obj_span = _split_marked_sentence(sentence, path, i + 1)
        instances.append(RelationInstance(
            id=sent_id, tokens=tokens, subj_span=subj_span, obj_span=obj_span,
            subj_type="E1", obj_type="E2", relation=relation,
        ).validate())
        i += 2
        if i < len(lines) and lines[i].startswith("Comment"):
            i += 1
    return instances


def _split_marked_sentence(sentence: str, path, lineno: int):
    for m in _MARKERS:
        if sentence.count(m) != 1:
            raise ParseError(f"{path}:{lineno}: marker {m} appears "
                             f"{sentence.count(m)} times (want exactly 1)")
        sentence = sentence.replace(m, f" {m} ")
    raw = sentence.split()
    tokens: list[str] = []
    marks: dict[str, int] = {}
    for tok in raw:
        if tok in _MARKERS:
            marks[tok] = len(tokens)
        else:
            tokens.append(tok)
    e1 = (marks["<e1>"], marks["</e1>"])
    e2 = (marks["<e2>"], marks["</e2>"])
    for name, (lo, hi) in (("e1", e1), ("e2", e2)):
        if lo >= hi:
            raise ParseError(f"{path}:{lineno}: markers for {name} are out of order or empty")
    return tokens, e1, e2


def write_predictions(path, labels: Sequence[str]) -> None:
    """One label per line, aligned with the instance order of a gold file."""
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(f"{lab}\n")


def read_predictions(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# entity masking
# ---------------------------------------------------------------------------

def mask_token(role: str, entity_type: str) -> str:
    return f"{role}-{entity_type}"


def mask_entities(inst: RelationInstance) -> RelationInstance:
    """Replace entity tokens with type-bearing placeholders (SUBJ-TYPE / OBJ-TYPE).

    Spans and sequence length are unchanged; applying the mask twice is a
    no-op.
    """
    if not inst.subj_type or not inst.obj_type:
        raise MaskingError(f"instance {inst.id}: entity types required for masking")
    (si, sj), (oi, oj) = inst.subj_span, inst.obj_span
    if si < oj and oi < sj:
        raise MaskingError(f"instance {inst.id}: subject span {inst.subj_span} "
                           f"overlaps object span {inst.obj_span}")
    tokens = list(inst.tokens)
    for k in range(si, sj):
        tokens[k] = mask_token("SUBJ", inst.subj_type)
    for k in range(oi, oj):
        tokens[k] = mask_token("OBJ", inst.obj_type)
    return replace(inst, tokens=tokens)


def apply_max_length(instances: Iterable[RelationInstance], max_length: int
                     ) -> tuple[list[RelationInstance], int]:
    """Truncate to max_length tokens; drop instances whose spans don't fit."""
    if max_length < 1:
        raise UsageError(f"max_length must be >= 1, got {max_length}")
    kept, dropped = [], 0
    for inst in instances:
        if inst.n <= max_length:
            kept.append(inst)
            continue
        if inst.subj_span[1] > max_length or inst.obj_span[1] > max_length:
            dropped += 1
            continue
        kept.append(replace(
            inst,
            tokens=inst.tokens[:max_length],
            pos_tags=inst.pos_tags[:max_length] if inst.pos_tags else None,
            ner_tags=inst.ner_tags[:max_length] if inst.ner_tags else None,
        ))
    return kept, dropped


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

@dataclass
class Vocab:
    """Dense 0-based id maps for words, POS/NER tags and relation labels."""

    word2id: dict[str, int]
    pos2id: dict[str, int]
    ner2id: dict[str, int]
    rel2id: dict[str, int]
    id2rel: list[str]
    word_matrix: np.ndarray | None = None   # pretrained-initialized rows, float32
    vector_coverage: float | None = None

    @property
    def n_words(self) -> int:
        return len(self.word2id)

    def word_id(self, token: str) -> int:
        return self.word2id.get(token, self.word2id[UNK])

    def pos_id(self, tag: str) -> int:
        return self.pos2id.get(tag, self.pos2id[UNK])

    def ner_id(self, tag: str) -> int:
        return self.ner2id.get(tag, self.ner2id[UNK])

    def rel_id(self, label: str) -> int:
        if label not in self.rel2id:
            raise LabelError(f"unknown relation label {label!r}")
        return self.rel2id[label]


def load_word_vectors(path) -> dict[str, np.ndarray]:
    """Read the textual word-vector format: token followed by decimals."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # word2vec-style count header
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ParseError(f"{path}:{lineno}: expected {dim} values, got {len(values)}")
            try:
                vectors[token] = np.asarray(values, dtype=np.float32)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric vector entry ({exc})") from exc
    if not vectors:
        raise ParseError(f"{path}: no vectors found")
    return vectors


def build_vocab(instances: Sequence[RelationInstance], min_freq: int = 1,
                pretrained: dict[str, np.ndarray] | None = None,
                word_dim: int = 300, seed: int = 0) -> Vocab:
    """Build id maps from a training set.

    Words under min_freq collapse to UNK; mask placeholders for every
    observed entity type are always registered.  With pretrained vectors,
    matched words copy their rows and the rest are sampled uniformly in
    +/- 0.5 (the rough spread of public vectors), reproducibly per seed.
    """
    if not instances:
        raise UsageError("build_vocab needs a non-empty training set")
    word_counts: Counter = Counter()
    pos_set, ner_set, types, relations = set(), set(), set(), set()
    for inst in instances:
        word_counts.update(inst.tokens)
        if inst.pos_tags:
            pos_set.update(inst.pos_tags)
        if inst.ner_tags:
            ner_set.update(inst.ner_tags)
        if inst.subj_type:
            types.add(("SUBJ", inst.subj_type))
        if inst.obj_type:
            types.add(("OBJ", inst.obj_type))
        relations.add(inst.relation)

    words = [PAD, UNK]
    words += sorted(mask_token(role, t) for role, t in types)
    forced = set(words)
    words += [w for w, c in sorted(word_counts.items()) if c >= min_freq and w not in forced]
    word2id = {w: i for i, w in enumerate(words)}
    pos2id = {t: i for i, t in enumerate([PAD, UNK] + sorted(pos_set))}
    ner2id = {t: i for i, t in enumerate([PAD, UNK] + sorted(ner_set))}
    id2rel = sorted(relations)
    rel2id = {r: i for i, r in enumerate(id2rel)}

    word_matrix, coverage = None, None
    if pretrained is not None:
        dim = len(next(iter(pretrained.values())))
        rng = np.random.default_rng(seed)
        word_matrix = rng.uniform(-0.5, 0.5, size=(len(words), dim)).astype(np.float32)
        word_matrix[word2id[PAD]] = 0.0
        hits = 0
        for w, i in word2id.items():
            vec = pretrained.get(w)
            if vec is not None:
                word_matrix[i] = vec
                hits += 1
        coverage = hits / len(words)
    else:
        if word_dim < 1:
            raise UsageError(f"word_dim must be >= 1, got {word_dim}")

    return Vocab(word2id=word2id, pos2id=pos2id, ner2id=ner2id, rel2id=rel2id,
                 id2rel=id2rel, word_matrix=word_matrix, vector_coverage=coverage)


# ---------------------------------------------------------------------------
# synthetic planted-pattern corpus
# ---------------------------------------------------------------------------

PRONOUNS = ("it", "he", "she", "they")


@dataclass
class SynthRelation:
    label: str
    trigger: tuple[str, ...]


@dataclass
class SynthSpec:
    """Recipe for a planted-trigger corpus.

    Each relation owns a unique 1-3 token trigger; an instance places the
    trigger between the subject mention (entity token or, with
    ``coref_prob``, a pronoun standing in for an earlier subject token)
    and the object entity.  Distractor triggers from other relations may
    appear outside that window.
    """

    relations: list[SynthRelation] = field(default_factory=lambda: [
        SynthRelation("ceo_of", ("the", "chief", "of")),
        SynthRelation("born_in", ("was", "born", "in")),
        SynthRelation("rival_of", ("clashed", "with")),
        SynthRelation("part_of", ("belongs", "to")),
    ])
    n_entities: int = 24
    n_filler: int = 30
    coref_prob: float = 0.3
    distractor_prob: float = 0.6
    holdout_mod: int = 4  # every holdout_mod-th (entity, relation) combo is test-only

    def validate(self) -> "SynthSpec":
        if len(self.relations) < 2:
            raise SynthSpecError("need at least 2 relations")
        triggers = [r.trigger for r in self.relations]
        if len(set(triggers)) != len(triggers):
            raise SynthSpecError("duplicate trigger segments")
        for r in self.relations:
            if not (1 <= len(r.trigger) <= 3):
                raise SynthSpecError(f"trigger {r.trigger} must be 1-3 tokens")
        if len(set(r.label for r in self.relations)) != len(self.relations):
            raise SynthSpecError("duplicate relation labels")
        if self.n_entities < 2 * self.holdout_mod:
            raise SynthSpecError("too few entities for a compositional holdout")
        return self


def _is_test_combo(ent_idx: int, rel_idx: int, mod: int) -> bool:
    return (ent_idx + 3 * rel_idx) % mod == 0


def synth_generate(seed: int, n_train: int, n_test: int, spec: SynthSpec | None = None
                   ) -> tuple[list[RelationInstance], list[RelationInstance], dict]:
    """Generate train/test splits plus a sidecar of trigger annotations.

    The test split is compositional: an (entity, relation) pairing used in
    a test instance never occurs in training, for either argument slot.
    Class counts are balanced to within one instance per relation.
    """
    spec = (spec or SynthSpec()).validate()
    rng = np.random.default_rng(seed)
    entities = [f"ent{i:02d}" for i in range(spec.n_entities)]
    filler = [f"word{i:02d}" for i in range(spec.n_filler)]
    annotations: dict[str, dict] = {}

    def pool(rel_idx: int, test: bool) -> list[int]:
        return [e for e in range(spec.n_entities)
                if _is_test_combo(e, rel_idx, spec.holdout_mod) == test]

    def some_filler(lo: int, hi: int) -> list[str]:
        return [str(w) for w in rng.choice(filler, size=int(rng.integers(lo, hi)))]

    def make(idx: int, split: str, rel_idx: int) -> RelationInstance:
        rel = spec.relations[rel_idx]
        test = split == "test"
        candidates = pool(rel_idx, test)
        subj_i, obj_i = rng.choice(candidates, size=2, replace=False)
        subj, obj = entities[subj_i], entities[obj_i]

        tokens: list[str] = some_filler(0, 3)
        use_coref = rng.random() < spec.coref_prob
        subj_pos = len(tokens)
        tokens.append(subj)
        if use_coref:
            tokens.extend(some_filler(1, 3))
            tokens.append(str(rng.choice(PRONOUNS)))
        trigger_start = len(tokens)
        tokens.extend(rel.trigger)
        obj_pos = len(tokens)
        tokens.append(obj)
        tokens.extend(some_filler(1, 4))
        if rng.random() < spec.distractor_prob:
            other = spec.relations[int((rel_idx + 1 + rng.integers(0, len(spec.relations) - 1))
                                       % len(spec.relations))]
            tokens.extend(other.trigger)
            tokens.extend(some_filler(0, 2))

        inst_id = f"synth-{split}-{idx:05d}"
        annotations[inst_id] = {
            "relation": rel.label,
            "trigger": list(rel.trigger),
            "trigger_start": trigger_start,
            "trigger_len": len(rel.trigger),
        }
        return RelationInstance(
            id=inst_id, tokens=tokens,
            subj_span=(subj_pos, subj_pos + 1), obj_span=(obj_pos, obj_pos + 1),
            subj_type="ENT", obj_type="ENT", relation=rel.label,
        ).validate()

    n_rel = len(spec.relations)
    train = [make(i, "train", i % n_rel) for i in range(n_train)]
    test = [make(i, "test", i % n_rel) for i in range(n_test)]
    return train, test, annotations


def write_annotations(path, annotations: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(annotations, fh, indent=1, sort_keys=True)


def read_annotations(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def batchify(instances: Sequence[RelationInstance], batch_size: int,
             seed: int = 0, shuffle: bool = False) -> list[list[RelationInstance]]:
    """Split into batches; the shuffle is a pure function of the seed.

    The final partial batch is kept.  Pass a per-epoch seed (see
    :func:`epoch_seed`) to reshuffle between epochs deterministically.
    """
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    order = list(instances)
    if shuffle:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(order))
        order = [order[i] for i in perm]
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def epoch_seed(seed: int, epoch: int) -> int:
    """Stable per-epoch shuffle seed derived from the run seed."""
    return int(np.random.SeedSequence(entropy=(seed, epoch)).generate_state(1)[0])
