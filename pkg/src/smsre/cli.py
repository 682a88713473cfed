"""Command-line entry point: train / eval / predict / synth / gradcheck /
ablate / sweep / viz.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure (diverged loss, failed gradient check).  Every subcommand is
deterministic given its config and seed.  SMS_THREADS caps worker
processes for ablate/sweep.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, resolve_config_path
from .errors import DataError, NumericError, SmsreError, UsageError
from .evaluation import (ablation_run, ngram_sweep, score, write_ablation_outputs,
                         write_sweep_outputs)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; our contract is 1
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="smsre", description=__doc__)
    parser.add_argument("--version", action="version", version=f"smsre {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add_config_args(p):
        p.add_argument("--config", help="config file path or preset name")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, help="override the run seed")

    p_train = sub.add_parser("train", help="train a model")
    add_config_args(p_train)
    p_train.add_argument("--data", help="training set path")
    p_train.add_argument("--dev", help="development set path")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--protocol", choices=["tacred-micro", "semeval-macro"])
    p_eval.add_argument("--text", action="store_true", help="aligned-column text report")

    p_pred = sub.add_parser("predict", help="write one predicted label per line")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", help="predictions file (default: stdout)")

    p_synth = sub.add_parser("synth", help="generate a planted-pattern corpus")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--seed", type=int, default=1)
    p_synth.add_argument("--n-train", type=int, default=2000)
    p_synth.add_argument("--n-test", type=int, default=500)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p_gc.add_argument("--d", type=int, default=8, help="encoder width (even)")
    p_gc.add_argument("--n", type=int, default=7, help="token count")
    p_gc.add_argument("--classes", type=int, default=4)
    p_gc.add_argument("--seed", type=int, default=1)
    p_gc.add_argument("--eps", type=float, default=1e-4)
    p_gc.add_argument("--tol", type=float, default=1e-4)

    p_abl = sub.add_parser("ablate", help="train each feature-group variant")
    add_config_args(p_abl)
    p_abl.add_argument("--data", help="training set path")
    p_abl.add_argument("--dev", help="development set path")
    p_abl.add_argument("--test", help="test set path")
    p_abl.add_argument("--out", required=True)
    p_abl.add_argument("--seeds", default="1", help="comma-separated seeds")

    p_swp = sub.add_parser("sweep", help="train once per kernel-size set {1..n}")
    add_config_args(p_swp)
    p_swp.add_argument("--data", help="training set path")
    p_swp.add_argument("--dev", help="development set path")
    p_swp.add_argument("--test", help="test set path")
    p_swp.add_argument("--out", required=True)
    p_swp.add_argument("--max-n", type=int, default=5)
    p_swp.add_argument("--seeds", default="1", help="comma-separated seeds")

    p_viz = sub.add_parser("viz", help="render attention heatmaps")
    p_viz.add_argument("--checkpoint", required=True)
    p_viz.add_argument("--data", required=True)
    p_viz.add_argument("--out", help="directory for HTML files / reports")
    p_viz.add_argument("--format", choices=["terminal", "html"], default="terminal")
    p_viz.add_argument("--threshold", type=float, help="minimum weight to colorize")
    p_viz.add_argument("--limit", type=int, default=10)
    p_viz.add_argument("--no-color", action="store_true")
    return parser


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(resolve_config_path(args.config)) if args.config else RunConfig()
    pairs = {}
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    if pairs:
        cfg.apply_overrides(pairs, source="--set")
    if getattr(args, "data", None):
        cfg.train_path = args.data
    if getattr(args, "dev", None):
        cfg.dev_path = args.dev
    if getattr(args, "test", None):
        cfg.test_path = args.test
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .pipeline import run_training

    cfg = _load_run_config(args)
    outs = run_training(cfg, outdir=args.out, verbose=not args.quiet)
    best = {"best_epoch": outs.result.best_epoch, "best_dev_F1": outs.result.best_f1,
            "checkpoint": os.path.join(args.out, "model.ckpt")}
    print(json.dumps(best))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import load_dataset, load_for_inference, prepare_for_checkpoint

    model, prep = load_for_inference(args.checkpoint)
    fmt = prep.get("dataset_format", "tacred")
    protocol = args.protocol or prep.get("protocol", "tacred-micro")
    instances = prepare_for_checkpoint(load_dataset(args.data, fmt), prep)
    gold = [inst.relation for inst in instances]
    pred = model.predict_labels(instances)
    report = score(gold, pred, protocol)
    if args.text:
        print(report.format_text())
    else:
        print(json.dumps(report.to_dict(), indent=1))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .data import write_predictions
    from .pipeline import load_dataset, load_for_inference, prepare_for_checkpoint

    model, prep = load_for_inference(args.checkpoint)
    fmt = prep.get("dataset_format", "tacred")
    instances = prepare_for_checkpoint(load_dataset(args.data, fmt), prep)
    labels = model.predict_labels(instances)
    if args.out:
        write_predictions(args.out, labels)
    else:
        for label in labels:
            print(label)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import synth_generate, write_annotations, write_tacred_json

    train_set, test_set, annotations = synth_generate(args.seed, args.n_train, args.n_test)
    os.makedirs(args.out, exist_ok=True)
    write_tacred_json(os.path.join(args.out, "train.json"), train_set)
    write_tacred_json(os.path.join(args.out, "test.json"), test_set)
    write_annotations(os.path.join(args.out, "annotations.json"), annotations)
    print(json.dumps({"train": len(train_set), "test": len(test_set),
                      "out": args.out, "seed": args.seed}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .autodiff import grad_check
    from .pipeline import gradcheck_graph

    graph = gradcheck_graph(args.d, args.n, args.classes, args.seed)
    report = grad_check(graph, eps=args.eps, tol=args.tol)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _prep_three_splits(cfg):
    from .pipeline import load_dataset, prepare_instances

    if not (cfg.train_path and cfg.dev_path and cfg.test_path):
        raise UsageError("this command needs --data, --dev and --test")
    train_set = prepare_instances(load_dataset(cfg.train_path, cfg.dataset_format), cfg)
    dev_set = prepare_instances(load_dataset(cfg.dev_path, cfg.dataset_format), cfg)
    test_set = prepare_instances(load_dataset(cfg.test_path, cfg.dataset_format), cfg)
    return train_set, dev_set, test_set


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    cfg.validate()
    seeds = [int(s) for s in args.seeds.split(",") if s]
    train_set, dev_set, test_set = _prep_three_splits(cfg)
    result = ablation_run(cfg.model_config(), cfg.train_config(), train_set, dev_set,
                          test_set, seeds=seeds, protocol=cfg.protocol,
                          min_freq=cfg.min_freq)
    os.makedirs(args.out, exist_ok=True)
    cfg.to_file(os.path.join(args.out, "config.cfg"))
    write_ablation_outputs(result, args.out)
    for row in result["summary"]:
        print(f"{row['name']:<10} mean F1 {row['mean_f1']:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    cfg.validate()
    seeds = [int(s) for s in args.seeds.split(",") if s]
    train_set, dev_set, test_set = _prep_three_splits(cfg)
    result = ngram_sweep(cfg.model_config(), cfg.train_config(), train_set, dev_set,
                         test_set, max_n_list=list(range(1, args.max_n + 1)),
                         seeds=seeds, protocol=cfg.protocol, min_freq=cfg.min_freq)
    os.makedirs(args.out, exist_ok=True)
    cfg.to_file(os.path.join(args.out, "config.cfg"))
    write_sweep_outputs(result, args.out)
    for row in result["summary"]:
        print(f"n={row['max_n']}  mean F1 {row['mean_f1']:.4f}")
    return EXIT_OK


def cmd_viz(args) -> int:
    from .attnviz import emit_heatmap, format_top_k, top_k_report, trace_from_output
    from .pipeline import load_dataset, load_for_inference, prepare_for_checkpoint

    model, prep = load_for_inference(args.checkpoint)
    fmt = prep.get("dataset_format", "tacred")
    instances = prepare_for_checkpoint(load_dataset(args.data, fmt), prep)
    instances = instances[:args.limit]
    traces = []
    for inst in instances:
        out = model.forward(inst)
        traces.append(trace_from_output(inst, out,
                                        predicted=model.vocab.id2rel[out.predicted_class()]))
    if args.format == "html":
        if not args.out:
            raise UsageError("HTML output needs --out DIRECTORY")
        os.makedirs(args.out, exist_ok=True)
        for trace in traces:
            path = os.path.join(args.out, f"{trace.instance_id or 'instance'}.html")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(emit_heatmap(trace, "html", threshold=args.threshold))
        print(f"wrote {len(traces)} heatmaps to {args.out}")
    else:
        for trace in traces:
            print(emit_heatmap(trace, "terminal", threshold=args.threshold,
                               color=not args.no_color))
            print()
    report = format_top_k(top_k_report(traces))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "top_k.txt"), "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
    else:
        print(report)
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "viz": cmd_viz,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("missing subcommand (train | eval | predict | synth | "
                             "gradcheck | ablate | sweep | viz)")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SmsreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
