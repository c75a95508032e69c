"""Command-line entry points: data generation, split construction,
training, inference, evaluation and one-axis ablation sweeps."""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

from . import data as data_mod
from . import engine, mdff
from .engine import TrainConfig, config_from_entries, eval_metrics


def _load_config(path: str | None, cls):
    entries = mdff.read_manifest(path) if path else {}
    return config_from_entries(cls, entries)


def _cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, data_mod.SyntheticConfig)
    corpus = data_mod.generate_corpus(cfg)
    data_mod.save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} samples to {args.out}")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    annotations = data_mod.load_annotations(args.annotations)
    spec = data_mod.SplitSpec(name=args.kind, threshold_s=args.threshold, major_ratio=args.ratio, seed=args.seed)
    builder = data_mod.build_len_split if args.kind == "len" else data_mod.build_mom_split
    train_ids, test_ids = builder(annotations, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_mod.save_annotations([annotations[i] for i in train_ids], out / "train.tsv")
    data_mod.save_annotations([annotations[i] for i in test_ids], out / "test.tsv")
    print(f"{args.kind} split: {len(train_ids)} train / {len(test_ids)} test -> {out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, TrainConfig)
    corpus = data_mod.load_corpus(args.data)
    result = engine.train(corpus, cfg)
    engine.save_checkpoint(result, corpus.video_features.shape[2], corpus.query_features.shape[2], args.out)
    print(f"trained {cfg.epochs} epochs; final loss {result.loss_history[-1]:.4f}; checkpoint -> {args.out}")
    return 0


def _cmd_infer(args: argparse.Namespace) -> int:
    result = engine.load_checkpoint(args.ckpt)
    corpus = data_mod.load_corpus(args.data)
    preds = engine.infer(result.model, corpus, steps=args.steps, eta=args.eta, seed=args.seed)
    engine.save_predictions(preds, corpus.annotations, args.out)
    print(f"wrote {len(preds)} prediction sets to {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    annotations = data_mod.load_annotations(args.annotations)
    ids, preds = engine.load_predictions(args.pred)
    by_query = {ann.query_id: ann for ann in annotations}
    if set(ids) != set(by_query):
        raise ValueError("prediction and annotation query sets differ")
    ordered = [by_query[qid] for qid in ids]
    report = eval_metrics(preds, ordered)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    engine.write_report(report, out / "report.txt")
    engine.write_span_table(preds, ordered, out / "span_table.tsv")
    print(f"R1@0.5 = {report.r1[0.5]:.2f}  R1@0.7 = {report.r1[0.7]:.2f}  MAP_avg = {report.map_avg:.2f}")
    return 0


def _ablate_configs(base: TrainConfig, axis: str, values: list[str]):
    for text in values:
        cfg = dataclasses.replace(base, weights=dataclasses.replace(base.weights))
        if axis == "lambda":
            cfg.span_scale = float(text)
        elif axis == "nr":
            cfg.n_spans = int(text)
        elif axis == "intensity":
            cfg.use_intensity = text.lower() in ("1", "true", "on", "yes")
        elif axis == "embed":
            cfg.embed_type = text
        else:
            raise ValueError(f"unknown ablation axis {axis!r}")
        yield text, cfg


def _cmd_ablate(args: argparse.Namespace) -> int:
    base = _load_config(args.config, TrainConfig)
    corpus = data_mod.load_corpus(args.data)
    eval_corpus = data_mod.load_corpus(args.eval_data) if args.eval_data else corpus
    rows = ["axis\tvalue\tr1@0.5\tr1@0.7\tmap_avg\tinfer_seconds\n"]
    if args.axis == "steps":
        result = engine.train(corpus, base)
        for text in args.values:
            steps = int(text)
            t0 = time.perf_counter()
            preds = engine.infer(result.model, eval_corpus, steps=steps, eta=base.eta, seed=base.seed)
            elapsed = time.perf_counter() - t0
            report = eval_metrics(preds, eval_corpus.annotations)
            rows.append(
                f"steps\t{steps}\t{report.r1[0.5]:.2f}\t{report.r1[0.7]:.2f}\t{report.map_avg:.2f}\t{elapsed:.3f}\n"
            )
    else:
        for text, cfg in _ablate_configs(base, args.axis, args.values):
            result = engine.train(corpus, cfg)
            t0 = time.perf_counter()
            preds = engine.infer(result.model, eval_corpus, steps=cfg.infer_steps, eta=cfg.eta, seed=cfg.seed)
            elapsed = time.perf_counter() - t0
            report = eval_metrics(preds, eval_corpus.annotations)
            rows.append(
                f"{args.axis}\t{text}\t{report.r1[0.5]:.2f}\t{report.r1[0.7]:.2f}\t{report.map_avg:.2f}\t{elapsed:.3f}\n"
            )
    Path(args.out).write_text("".join(rows), encoding="utf-8")
    print(f"wrote ablation table to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffspan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config", help="key = value file mirroring SyntheticConfig")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("split", help="build a distribution-shift split from annotations")
    p.add_argument("--kind", choices=("len", "mom"), required=True)
    p.add_argument("--threshold", type=float, required=True, help="seconds")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key = value file mirroring TrainConfig")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="run iterative denoising inference")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="predictions file")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score predictions against annotations")
    p.add_argument("--pred", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="sweep one model axis and tabulate metrics")
    p.add_argument("--axis", choices=("lambda", "nr", "steps", "intensity", "embed"), required=True)
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--config", help="base TrainConfig file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
