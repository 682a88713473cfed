"""Scoring protocols, ablation battery, and the n-gram sweep.

Two protocols are implemented: micro-averaged F1 with the negative class
excluded from both numerators and denominators (the Tacred official-script
behavior, even though that script is often described as macro), and the
SemEval 2010 task-8 macro-averaged F1 over relation names with
directionality enforced and Other excluded from the average.

Ablation and sweep runners train one model per configuration and emit
JSON + TSV tables plus a matplotlib figure beside them.
"""

from __future__ import annotations

import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import RelationInstance
from .errors import UsageError
from .sms import FeatureToggles

SEMEVAL_RELATION_NAMES = (
    "Cause-Effect", "Component-Whole", "Content-Container", "Entity-Destination",
    "Entity-Origin", "Instrument-Agency", "Member-Collection", "Message-Topic",
    "Product-Producer",
)

_DIRECTED = re.compile(r"^(.*)\((e1,e2|e2,e1)\)$")


@dataclass
class ClassScores:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    support: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class ScoreReport:
    protocol: str
    precision: float
    recall: float
    f1: float
    per_class: dict[str, ClassScores] = field(default_factory=dict)
    n_instances: int = 0

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n_instances": self.n_instances,
            "per_class": {
                label: {"tp": c.tp, "fp": c.fp, "fn": c.fn, "support": c.support,
                        "precision": c.precision, "recall": c.recall, "f1": c.f1}
                for label, c in sorted(self.per_class.items())
            },
        }

    def format_text(self) -> str:
        lines = [f"protocol: {self.protocol}  ({self.n_instances} instances)",
                 f"{'label':<28} {'tp':>5} {'fp':>5} {'fn':>5} "
                 f"{'P':>7} {'R':>7} {'F1':>7} {'support':>8}"]
        for label, c in sorted(self.per_class.items()):
            lines.append(f"{label:<28} {c.tp:>5} {c.fp:>5} {c.fn:>5} "
                         f"{c.precision:>7.4f} {c.recall:>7.4f} {c.f1:>7.4f} {c.support:>8}")
        lines.append(f"{'overall':<28} {'':>5} {'':>5} {'':>5} "
                     f"{self.precision:>7.4f} {self.recall:>7.4f} {self.f1:>7.4f}")
        return "\n".join(lines)


def micro_f1(gold: Sequence[str], pred: Sequence[str],
             negative_label: str = "no_relation") -> ScoreReport:
    """Micro P/R/F1 with the negative class excluded on both sides.

    correct = positions where pred == gold != negative;
    P = correct / #(pred != negative); R = correct / #(gold != negative).
    """
    if len(gold) != len(pred):
        raise UsageError(f"gold has {len(gold)} labels, pred has {len(pred)}")
    correct = guessed = actual = 0
    per_class: dict[str, ClassScores] = {}

    def cls(label: str) -> ClassScores:
        return per_class.setdefault(label, ClassScores())

    for g, p in zip(gold, pred):
        if g != negative_label:
            actual += 1
            cls(g).support += 1
        if p != negative_label:
            guessed += 1
        if p == g and g != negative_label:
            correct += 1
            cls(g).tp += 1
        else:
            if p != negative_label:
                cls(p).fp += 1
            if g != negative_label:
                cls(g).fn += 1
    precision = correct / guessed if guessed else 0.0
    recall = correct / actual if actual else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ScoreReport(protocol="tacred-micro", precision=precision, recall=recall,
                       f1=f1, per_class=per_class, n_instances=len(gold))


def parse_directed_label(label: str) -> tuple[str, str | None]:
    """Split 'Name(e1,e2)' into (name, direction); 'Other' has no direction."""
    if label == "Other":
        return "Other", None
    m = _DIRECTED.match(label)
    if m is None:
        raise UsageError(f"label {label!r} is neither 'Other' nor 'Name(e1,e2)'-shaped")
    return m.group(1), m.group(2)


def semeval_macro_f1(gold: Sequence[str], pred: Sequence[str],
                     relation_names: Sequence[str] | None = None) -> ScoreReport:
    """Macro-averaged P/R/F1 over relation names with direction enforced.

    A prediction scores a true positive only when both name and direction
    match.  Wrong-direction predictions count as a false positive for the
    predicted name and a false negative for the gold name.  Other is a
    legal label but is excluded from the macro average.  When
    ``relation_names`` is not given, the names are taken from the data.
    """
    if len(gold) != len(pred):
        raise UsageError(f"gold has {len(gold)} labels, pred has {len(pred)}")
    parsed_gold = [parse_directed_label(g) for g in gold]
    parsed_pred = [parse_directed_label(p) for p in pred]
    if relation_names is None:
        names = sorted({n for n, _ in parsed_gold + parsed_pred} - {"Other"})
    else:
        names = list(relation_names)
        known = set(names) | {"Other"}
        for n, _ in parsed_gold + parsed_pred:
            if n not in known:
                raise UsageError(f"label name {n!r} not in the provided relation set")
    per_class = {n: ClassScores() for n in names}

    for (gn, gd), (pn, pd) in zip(parsed_gold, parsed_pred):
        if gn != "Other":
            per_class[gn].support += 1
        if gn == pn and gd == pd and gn != "Other":
            per_class[gn].tp += 1
            continue
        if pn != "Other":
            per_class[pn].fp += 1
        if gn != "Other":
            per_class[gn].fn += 1

    if names:
        precision = sum(per_class[n].precision for n in names) / len(names)
        recall = sum(per_class[n].recall for n in names) / len(names)
        f1 = sum(per_class[n].f1 for n in names) / len(names)
    else:
        precision = recall = f1 = 0.0
    return ScoreReport(protocol="semeval-macro", precision=precision, recall=recall,
                       f1=f1, per_class=per_class, n_instances=len(gold))


def score(gold: Sequence[str], pred: Sequence[str], protocol: str) -> ScoreReport:
    if protocol == "tacred-micro":
        return micro_f1(gold, pred)
    if protocol == "semeval-macro":
        return semeval_macro_f1(gold, pred)
    raise UsageError(f"unknown protocol {protocol!r}")


# ---------------------------------------------------------------------------
# ablations and the n-gram sweep
# ---------------------------------------------------------------------------


def standard_ablation_toggles(kernel_sizes: tuple[int, ...] = (1, 2, 3)
                              ) -> list[tuple[str, FeatureToggles]]:
    return [
        ("sentence", FeatureToggles(True, False, False, kernel_sizes)),
        ("mention", FeatureToggles(False, True, False, kernel_sizes)),
        ("segment", FeatureToggles(False, False, True, kernel_sizes)),
        ("all", FeatureToggles(True, True, True, kernel_sizes)),
    ]


def _train_and_score(job: dict) -> dict:
    """Worker: train one configuration and score the test split."""
    from . import autodiff as ad
    from .model import ModelConfig, RelationModel
    from .training import TrainConfig, train

    model_cfg = ModelConfig.from_dict(job["model_cfg"])
    train_cfg = TrainConfig(**job["train_cfg"])
    ad.set_default_dtype(np.float32 if train_cfg.precision == "float32" else np.float64)
    model = RelationModel(job["vocab_builder"](), model_cfg,
                          np.random.default_rng(train_cfg.seed))
    train(model, job["train_set"], job["dev_set"], train_cfg, protocol=job["protocol"])
    gold = [inst.relation for inst in job["test_set"]]
    pred = model.predict_labels(job["test_set"])
    report = score(gold, pred, job["protocol"])
    return {"name": job["name"], "seed": train_cfg.seed, "report": report.to_dict()}


class _VocabThunk:
    """Picklable deferred vocab build (workers rebuild it identically)."""

    def __init__(self, instances, min_freq, word_dim, seed):
        self.instances = instances
        self.min_freq = min_freq
        self.word_dim = word_dim
        self.seed = seed

    def __call__(self):
        from .data import build_vocab
        return build_vocab(self.instances, min_freq=self.min_freq,
                           word_dim=self.word_dim, seed=self.seed)


def _run_jobs(jobs: list[dict]) -> list[dict]:
    workers = int(os.environ.get("SMS_THREADS", "1"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_train_and_score, jobs))
    return [_train_and_score(job) for job in jobs]


def _make_jobs(model_cfg, train_cfg, train_set, dev_set, test_set, protocol,
               variants: list[tuple[str, FeatureToggles]], seeds: Sequence[int],
               min_freq: int = 1) -> list[dict]:
    from dataclasses import replace
    jobs = []
    for name, toggles in variants:
        for seed in seeds:
            mc = replace(model_cfg, toggles=toggles)
            tc = replace(train_cfg, seed=seed)
            jobs.append({
                "name": name,
                "model_cfg": mc.to_dict(),
                "train_cfg": tc.__dict__.copy(),
                "train_set": list(train_set),
                "dev_set": list(dev_set),
                "test_set": list(test_set),
                "protocol": protocol,
                "vocab_builder": _VocabThunk(list(train_set), min_freq,
                                             mc.channels.word_dim, seed),
            })
    return jobs


def ablation_run(model_cfg, train_cfg, train_set, dev_set, test_set,
                 toggles_list: list[tuple[str, FeatureToggles]] | None = None,
                 seeds: Sequence[int] = (1,), protocol: str = "tacred-micro",
                 min_freq: int = 1) -> dict:
    """Train one model per feature-toggle set (per seed) on a shared recipe.

    Returns rows plus a per-variant mean-F1 summary ordered like the
    standard feature-group table.
    """
    variants = toggles_list or standard_ablation_toggles(model_cfg.toggles.kernel_sizes)
    jobs = _make_jobs(model_cfg, train_cfg, train_set, dev_set, test_set,
                      protocol, variants, seeds, min_freq)
    rows = _run_jobs(jobs)
    summary = []
    for name, _ in variants:
        f1s = [r["report"]["f1"] for r in rows if r["name"] == name]
        summary.append({"name": name, "mean_f1": sum(f1s) / len(f1s),
                        "f1_by_seed": f1s})
    return {"rows": rows, "summary": summary, "seeds": list(seeds)}


def ngram_sweep(model_cfg, train_cfg, train_set, dev_set, test_set,
                max_n_list: Sequence[int] = (1, 2, 3, 4, 5),
                seeds: Sequence[int] = (1,), protocol: str = "tacred-micro",
                min_freq: int = 1) -> dict:
    """Train once per kernel-size set {1..n} and report F1 per n."""
    if any(n < 1 for n in max_n_list):
        raise UsageError(f"max_n_list entries must be >= 1, got {list(max_n_list)}")
    variants = []
    for n in max_n_list:
        sizes = tuple(range(1, n + 1))
        variants.append((f"1..{n}", FeatureToggles(
            use_sentence=model_cfg.toggles.use_sentence,
            use_mention=model_cfg.toggles.use_mention,
            use_segment=True, kernel_sizes=sizes)))
    jobs = _make_jobs(model_cfg, train_cfg, train_set, dev_set, test_set,
                      protocol, variants, seeds, min_freq)
    rows = _run_jobs(jobs)
    summary = []
    for n, (name, _) in zip(max_n_list, variants):
        f1s = [r["report"]["f1"] for r in rows if r["name"] == name]
        summary.append({"max_n": n, "name": name, "mean_f1": sum(f1s) / len(f1s),
                        "f1_by_seed": f1s})
    return {"rows": rows, "summary": summary, "seeds": list(seeds)}


# ---------------------------------------------------------------------------
# report files: JSON + TSV + figure
# ---------------------------------------------------------------------------


def _write_tsv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")


def write_ablation_outputs(result: dict, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1)
    base = result["summary"][0]["mean_f1"] if result["summary"] else 0.0
    _write_tsv(os.path.join(outdir, "ablation.tsv"),
               ["variant", "mean_f1", "delta_vs_first", "f1_by_seed"],
               [[s["name"], f"{s['mean_f1']:.4f}", f"{s['mean_f1'] - base:+.4f}",
                 ",".join(f"{v:.4f}" for v in s["f1_by_seed"])]
                for s in result["summary"]])
    _plot_bars(os.path.join(outdir, "ablation.png"),
               [s["name"] for s in result["summary"]],
               [s["mean_f1"] for s in result["summary"]],
               "feature groups", "test F1", "Feature-group ablation")


def write_sweep_outputs(result: dict, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1)
    _write_tsv(os.path.join(outdir, "sweep.tsv"),
               ["max_n", "kernel_sizes", "mean_f1", "f1_by_seed"],
               [[s["max_n"], s["name"], f"{s['mean_f1']:.4f}",
                 ",".join(f"{v:.4f}" for v in s["f1_by_seed"])]
                for s in result["summary"]])
    _plot_line(os.path.join(outdir, "sweep.png"),
               [s["max_n"] for s in result["summary"]],
               [s["mean_f1"] for s in result["summary"]],
               "n (kernel sizes 1..n)", "test F1", "Segment n-gram sweep")


def _plot_bars(path, labels, values, xlabel, ylabel, title) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    lo = min(values) if values else 0.0
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_line(path, xs, ys, xlabel, ylabel, title) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, marker="o", color="#4878a8")
    ax.set_xticks(list(xs))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
