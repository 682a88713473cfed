"""Scratch: find a synthetic recipe that separates full vs sentence-only."""
import time
import numpy as np

from smsre import autodiff as ad
from smsre.data import RelationInstance, build_vocab
from smsre.model import ModelConfig, RelationModel
from smsre.encoders import ChannelConfig
from smsre.sms import FeatureToggles
from smsre.training import TrainConfig, train

RELS = [
    ("ceo_of", ("the", "chief", "of")),
    ("born_in", ("was", "born", "in")),
    ("rival_of", ("clashed", "with")),
    ("part_of", ("belongs", "to")),
]
# order-only triggers: identical unigram bags, only order differs
RELS_PERM = [
    ("ceo_of", ("runs", "board", "of")),
    ("born_in", ("of", "board", "runs")),
    ("rival_of", ("against", "stood")),
    ("part_of", ("stood", "against")),
]
PRONOUNS = ("it", "he", "she", "they")


def gen(seed, n_train, n_test, n_entities=24, n_filler=30, coref_prob=0.5,
        decoy=True, holdout_mod=4, rels=RELS):
    global RELS
    RELS = rels
    rng = np.random.default_rng(seed)
    entities = [f"ent{i:02d}" for i in range(n_entities)]
    filler = [f"word{i:02d}" for i in range(n_filler)]
    ann = {}

    def fillers(lo, hi):
        return [str(w) for w in rng.choice(filler, size=int(rng.integers(lo, hi)))]

    def is_test(e, r):
        return (e + 3 * r) % holdout_mod == 0

    def make(idx, split, rel_idx):
        label, trigger = RELS[rel_idx]
        test = split == "test"
        cand = [e for e in range(n_entities) if is_test(e, rel_idx) == test]
        subj_i, obj_i = rng.choice(cand, size=2, replace=False)
        subj, obj = entities[subj_i], entities[obj_i]

        decoy_block = []
        if decoy:
            other = int(rng.choice([i for i in range(len(RELS)) if i != rel_idx]))
            d1, d2 = rng.choice(n_entities, size=2, replace=False)
            decoy_block = ([entities[d1]] + list(RELS[other][1]) + [entities[d2]]
                           + fillers(1, 3))

        tokens = fillers(1, 3)
        decoy_first = rng.random() < 0.5
        if decoy_first:
            tokens.extend(decoy_block)
        subj_pos = len(tokens)
        tokens.append(subj)
        if rng.random() < coref_prob:
            tokens.extend(fillers(1, 4))
            tokens.append(str(rng.choice(PRONOUNS)))
        trig_start = len(tokens)
        tokens.extend(trigger)
        obj_pos = len(tokens)
        tokens.append(obj)
        tokens.extend(fillers(1, 3))
        if not decoy_first:
            tokens.extend(decoy_block)
        iid = f"synth-{split}-{idx:05d}"
        ann[iid] = {"relation": label, "trigger": list(trigger),
                    "trigger_start": trig_start, "trigger_len": len(trigger)}
        return RelationInstance(id=iid, tokens=tokens, subj_span=(subj_pos, subj_pos + 1),
                                obj_span=(obj_pos, obj_pos + 1), subj_type="ENT",
                                obj_type="ENT", relation=label).validate()

    train_set = [make(i, "train", i % len(RELS)) for i in range(n_train)]
    test_set = [make(i, "test", i % len(RELS)) for i in range(n_test)]
    return train_set, test_set, ann


def run(train_set, test_set, toggles, seed, dropout, epochs, hidden, use_position,
        lr=1.0, word_dim=32, verbose=False, patience=1, lr_decay=0.5):
    ad.set_default_dtype(np.float32)
    vocab = build_vocab(train_set, word_dim=word_dim)
    cfg = ModelConfig(
        encoder="bilstm", hidden_dim=hidden, encoder_dropout=dropout, toggles=toggles,
        channels=ChannelConfig(word_dim=word_dim, use_pos=False, use_ner=False,
                               use_position=use_position, position_dim=8,
                               position_clip=20))
    model = RelationModel(vocab, cfg, np.random.default_rng(seed))
    tc = TrainConfig(lr=lr, lr_decay=lr_decay, epochs=epochs, batch_size=50, seed=seed,
                     patience=patience)
    t0 = time.time()
    res = train(model, train_set, test_set, tc, protocol="tacred-micro",
                verbose=verbose)
    return res.best_f1, time.time() - t0


TOGGLES = {
    "all": FeatureToggles(True, True, True),
    "sentence": FeatureToggles(True, False, False),
    "mention": FeatureToggles(False, True, False),
    "segment": FeatureToggles(False, False, True),
}

if __name__ == "__main__":
    import sys
    variant = sys.argv[1] if len(sys.argv) > 1 else "d"
    gen_kw = dict(seed=11, n_train=2000, n_test=500, coref_prob=0.5)
    cases = {
        "d": dict(dropout=0.5, epochs=8, hidden=24, use_position=True),
        "e8": dict(dropout=0.5, epochs=10, hidden=8, use_position=True),
        "e12": dict(dropout=0.5, epochs=10, hidden=12, use_position=True),
        "g": dict(dropout=0.5, epochs=20, hidden=24, use_position=False),
        "h": dict(dropout=0.0, epochs=20, hidden=24, use_position=False),
        "perm12": dict(dropout=0.5, epochs=16, hidden=12, use_position=True,
                       patience=2, lr_decay=0.7),
        "perm8": dict(dropout=0.5, epochs=10, hidden=8, use_position=True),
        "permnd": dict(dropout=0.0, epochs=16, hidden=12, use_position=True,
                       patience=2, lr_decay=0.7),
        "j": dict(dropout=0.5, epochs=18, hidden=24, use_position=False,
                  patience=2, lr_decay=0.7),
    }[variant]
    if variant.startswith("perm") or variant == "j":
        gen_kw["n_entities"] = 48
        gen_kw["holdout_mod"] = 8
    if variant.startswith("perm"):
        gen_kw["rels"] = RELS_PERM
    train_set, test_set, _ = gen(**gen_kw)
    for name in ("all", "sentence"):
        f1, dt = run(train_set, test_set, TOGGLES[name], seed=1, verbose=False, **cases)
        print(f"{variant} {name:<9} F1={f1:.3f} ({dt:.0f}s)", flush=True)
