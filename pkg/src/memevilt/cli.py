"""Command-line entry point.

Logs go to stderr, results to files under the output directory, and stdout
gets a single summary line. Exit codes: 0 success, 1 validation error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import OUTPUT_ENV, model_cfg, resolve_config, train_cfg
from .data import (
    FeatureStore,
    OcrConfig,
    apply_consensus,
    corpus_stats,
    generate_synthetic,
    load_manifest,
    resolve_texts,
    save_manifest,
    write_stats,
)
from .errors import RuntimeFailure, ValidationError
from .evaluation import kfold_plan
from .gradcheck import check_model_gradient
from .model import profile_config
from .protocols import augmentation_comparison, run_kfold, run_split_protocol
from .reporting import atomic_write, emit_report, fmt, rounded, table_csv
from .training import evaluate, predict

log = logging.getLogger("memevilt")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _common(p, data=True, training=False):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. train.epochs=20")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./runs)")
    p.add_argument("--profile", choices=("desk", "paper"))
    p.add_argument("-v", "--verbose", action="store_true")
    if data:
        p.add_argument("--manifest")
        p.add_argument("--ocr", choices=("sidecar", "command", "none"))
        p.add_argument("--ocr-command")
    if training:
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--patience", type=int)
        p.add_argument("--augmentation", choices=("off", "online", "offline"))
        p.add_argument("--runs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memevilt", description="Vision-language hateful-meme classifier")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="label counts and caption-length histogram")
    _common(p)

    p = sub.add_parser("consensus", help="resolve annotator votes into labels")
    _common(p)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--output-manifest", help="where to write the resolved manifest")

    p = sub.add_parser("synth", help="write a synthetic corpus")
    _common(p, data=False)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mode", choices=("xor", "easy"), default="xor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)

    p = sub.add_parser("train", help="train/val/test protocol (one or more runs)")
    _common(p, training=True)
    p.add_argument("--compare-augmentation", action="store_true",
                   help="run with augmentation off and on using the same seeds")

    p = sub.add_parser("kfold", help="k-fold protocol with a held-out test set")
    _common(p, training=True)
    p.add_argument("--k", type=int)
    p.add_argument("--plan-only", action="store_true", help="write the fold plan and stop")

    p = sub.add_parser("eval", help="score a checkpoint on a labelled manifest")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("predict", help="probabilities for an unlabelled manifest")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    _common(p, data=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=16)
    return parser


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        ov[key.strip()] = value
    flag_map = {
        "profile": "profile", "out": "output", "manifest": "data.manifest", "ocr": "data.ocr",
        "ocr_command": "data.ocr_command", "epochs": "train.epochs", "lr": "train.learning_rate",
        "patience": "train.patience", "augmentation": "train.augmentation", "runs": "eval.runs",
        "k": "eval.k",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            ov[key] = value
    seed = getattr(args, "seed", None)
    if seed is not None and args.command in ("train", "kfold"):
        ov["train.seed"] = seed
        ov["eval.base_seed"] = seed
    return ov


def _load_corpus(cfg: dict, need_text=True):
    manifest = cfg["data"]["manifest"]
    if not manifest:
        raise UsageError("a manifest is required (--manifest or data.manifest)")
    corpus = load_manifest(manifest)
    if need_text and corpus.needs_ocr():
        ocr = OcrConfig(cfg["data"]["ocr"], cfg["data"]["ocr_command"] or ())
        corpus = resolve_texts(corpus, ocr)
    return corpus


def _out_dir(cfg) -> Path:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_run_checkpoints(out: Path, result):
    for run in result.runs:
        t = run.training
        save_checkpoint(out / "runs" / run.name / "checkpoint", t.params, t.model_config, t.vocab)


def cmd_stats(args, cfg):
    corpus = _load_corpus(cfg, need_text=False)
    stats = corpus_stats(corpus)
    if args.out:
        write_stats(stats, _out_dir(cfg))
    print(json.dumps({str(k): v for k, v in stats["counts"].items()}))


def cmd_consensus(args, cfg):
    corpus = _load_corpus(cfg, need_text=False)
    resolved, unresolved = apply_consensus(corpus, args.threshold)
    target = Path(args.output_manifest) if args.output_manifest else _out_dir(cfg) / "manifest.resolved.jsonl"
    save_manifest(resolved, target)
    for rid in unresolved:
        log.warning("unresolved: %s", rid)
    print(json.dumps({"resolved": len(corpus) - len(unresolved), "unresolved": unresolved, "manifest": str(target)}))


def cmd_synth(args, cfg):
    out = _out_dir(cfg)
    corpus = generate_synthetic(args.n, args.mode, args.seed, out, args.image_size)
    counts = {str(c): sum(1 for r in corpus if r.label == c) for c in (0, 1)}
    print(json.dumps({"records": len(corpus), "counts": counts, "manifest": corpus.source}))


def _resolved_echo(cfg: dict) -> dict:
    return json.loads(json.dumps(cfg))


def cmd_train(args, cfg):
    corpus = _load_corpus(cfg)
    out = _out_dir(cfg)
    tcfg, mcfg = train_cfg(cfg), model_cfg(cfg)
    ev = cfg["eval"]
    atomic_write(out / "config.resolved.json", json.dumps(_resolved_echo(cfg), indent=2) + "\n")
    if args.compare_augmentation:
        mode = tcfg.augmentation if tcfg.augmentation != "off" else "online"
        results = augmentation_comparison(tcfg, mcfg, corpus, ev["runs"], ev["base_seed"], ev["ratios"], mode)
        rows = []
        for technique, result in results.items():
            sub = out / "augmentation" / technique
            first = result.runs[0].training.model_config
            emit_report(sub, result, _resolved_echo(cfg), first)
            _save_run_checkpoints(sub, result)
            rows.append((technique, result.aggregate))
        atomic_write(out / "augmentation_table.csv", table_csv(rows).replace("run,", "technique,", 1))
        summary = {t: rounded(r.aggregate.to_dict()) for t, r in results.items()}
        atomic_write(out / "augmentation.json", json.dumps(summary, indent=2) + "\n")
        print(" ".join(f"{t}: f1_weighted={fmt(r.aggregate.f1_weighted)}" for t, r in results.items()))
        return
    result = run_split_protocol(tcfg, mcfg, corpus, ev["runs"], ev["base_seed"], ev["ratios"],
                                ev["stratified"], ev["aggregation"])
    _save_run_checkpoints(out, result)
    emit_report(out, result, _resolved_echo(cfg), result.runs[0].training.model_config)
    agg = result.aggregate
    print(f"runs={len(result.runs)} loss={fmt(agg.loss)} f1_weighted={fmt(agg.f1_weighted)} report={out / 'report.json'}")


def cmd_kfold(args, cfg):
    corpus = _load_corpus(cfg, need_text=not args.plan_only)
    out = _out_dir(cfg)
    ev = cfg["eval"]
    plan = kfold_plan(corpus, int(ev["k"]), ev["holdout_ratio"], ev["base_seed"], ev["stratified"])
    atomic_write(out / "plan.json", json.dumps(plan.to_dict(), indent=2) + "\n")
    log.info("plan: holdout %d, folds %s", len(plan.holdout_ids), plan.fold_sizes)
    if args.plan_only:
        print(json.dumps({"holdout": len(plan.holdout_ids), "folds": plan.fold_sizes}))
        return
    atomic_write(out / "config.resolved.json", json.dumps(_resolved_echo(cfg), indent=2) + "\n")
    result = run_kfold(train_cfg(cfg), model_cfg(cfg), corpus, plan, ev["aggregation"])
    _save_run_checkpoints(out, result)
    emit_report(out, result, _resolved_echo(cfg), result.runs[0].training.model_config)
    agg = result.aggregate
    print(json.dumps({"holdout": len(plan.holdout_ids), "folds": plan.fold_sizes,
                      "f1_weighted": round(agg.f1_weighted, 6)}))


def _checkpoint_store(args, cfg, corpus):
    params, mcfg, vocab = load_checkpoint(args.checkpoint)
    if vocab is None:
        raise ValidationError("checkpoint has no vocab.json")
    return params, mcfg, FeatureStore(corpus, vocab, mcfg)


def cmd_eval(args, cfg):
    corpus = _load_corpus(cfg)
    if any(r.label is None for r in corpus.records):
        raise ValidationError("eval needs a fully labelled manifest (use predict instead)")
    params, mcfg, store = _checkpoint_store(args, cfg, corpus)
    report = evaluate(params, mcfg, store, corpus.records, cfg["train"]["eval_batch"], cfg["train"]["threshold"])
    out = _out_dir(cfg)
    atomic_write(out / "metrics.json", json.dumps(rounded(report.to_dict()), indent=2) + "\n")
    atomic_write(out / "table.csv", table_csv([("eval", report)]))
    print(f"n={report.n} loss={fmt(report.loss)} f1_weighted={fmt(report.f1_weighted)}")


def cmd_predict(args, cfg):
    corpus = _load_corpus(cfg)
    params, mcfg, store = _checkpoint_store(args, cfg, corpus)
    probs, _ = predict(params, mcfg, store, corpus.records, cfg["train"]["eval_batch"], with_labels=False)
    threshold = cfg["train"]["threshold"]
    lines = ["id,probability,label"]
    lines += [f"{r.id},{fmt(p)},{int(p >= threshold)}" for r, p in zip(corpus.records, probs)]
    out = _out_dir(cfg)
    atomic_write(out / "predictions.csv", "\n".join(lines) + "\n")
    print(f"predicted={len(corpus)} positive={sum(int(p >= threshold) for p in probs)} file={out / 'predictions.csv'}")


def cmd_gradcheck(args, cfg):
    mcfg = profile_config("desk", vocab_size=1000) if cfg["profile"] == "desk" else model_cfg(cfg)
    report = check_model_gradient(mcfg, seed=args.seed, h=args.h, tol=args.tol, max_coords=args.max_coords)
    if args.out:
        atomic_write(_out_dir(cfg) / "gradcheck.json", json.dumps(report.to_dict(), indent=2) + "\n")
    status = "pass" if report.passed else "FAIL"
    print(f"gradcheck {status} max_rel_error={report.max_rel_error:.3e} params={len(report.params)}")
    if not report.passed:
        raise RuntimeFailure("gradient check failed")


COMMANDS = {
    "stats": cmd_stats, "consensus": cmd_consensus, "synth": cmd_synth, "train": cmd_train,
    "kfold": cmd_kfold, "eval": cmd_eval, "predict": cmd_predict, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.config, _overrides(args))
        COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, OSError, FloatingPointError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
