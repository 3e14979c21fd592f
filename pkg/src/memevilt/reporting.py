"""Report files: report.json, table.csv and per-run curves."""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

from .evaluation import METRIC_FIELDS, MetricsReport
from .model import ViltConfig

REPORT_VERSION = 1
TABLE_HEADER = ["run", *METRIC_FIELDS]
CURVE_HEADER = ["epoch", "train_loss", "val_loss", "val_f1_weighted"]


def fmt(x: float) -> str:
    return f"{x:.6f}"


def rounded(obj):
    """Copy of a JSON-ready structure with every float rounded to 6 places."""
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def fidelity_notes(model_cfg: ViltConfig, extra=()) -> list:
    notes = [
        "caption tokenizer is a corpus-built lowercase word/punctuation vocabulary, "
        f"not a pretrained subword tokenizer (vocab size {model_cfg.vocab_size})",
        "all weights are trained from scratch; no pretrained vision-language weights are loaded",
        "whether the original work fine-tuned every encoder layer or only the head is unknown",
        f"pooling: {model_cfg.pooling}; decision threshold 0.5",
        "attention key projections carry no bias (a key bias cannot change attention weights)",
        "early stopping on validation loss restores the best epoch's parameters",
        "headline precision is macro-averaged, recall micro-averaged",
    ]
    req = model_cfg.requested_image_size
    if req is not None and tuple(req) != tuple(model_cfg.image_size):
        notes.append(
            f"images resized to {model_cfg.image_size[0]}x{model_cfg.image_size[1]} instead of "
            f"{req[0]}x{req[1]} so the {model_cfg.patch_size}-pixel patch grid divides them"
        )
    notes.extend(extra)
    return notes


def table_csv(rows) -> str:
    """rows: iterable of (name, MetricsReport)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_HEADER)
    for name, report in rows:
        writer.writerow([name, *(fmt(v) for v in report.row())])
    return buf.getvalue()


def curves_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for epoch, train_loss, val_loss, f1w in history.curve_rows():
        writer.writerow([epoch, fmt(train_loss), fmt(val_loss), fmt(f1w)])
    return buf.getvalue()


def write_history(history, run_dir):
    run_dir = Path(run_dir)
    atomic_write(run_dir / "curves.csv", curves_csv(history))
    atomic_write(run_dir / "history.json", json.dumps(rounded(history.to_dict()), indent=2) + "\n")


def emit_report(out_dir, result, config: dict, model_cfg: ViltConfig, seeds=None, notes=(),
                extra: dict | None = None) -> dict:
    """Write report.json, table.csv and runs/<name>/{curves.csv,history.json}.

    ``result`` is a :class:`~memevilt.protocols.ProtocolResult`.
    """
    out_dir = Path(out_dir)
    for run in result.runs:
        write_history(run.history, out_dir / "runs" / run.name)
    rows = [(run.name, run.test_report) for run in result.runs]
    rows.append((result.aggregation, result.aggregate))
    atomic_write(out_dir / "table.csv", table_csv(rows))
    report = {
        "report_version": REPORT_VERSION,
        "protocol": result.protocol,
        "profile": model_cfg.profile,
        "config": config,
        "model": model_cfg.to_dict(),
        "seeds": list(seeds) if seeds is not None else [run.seed for run in result.runs],
        "fidelity_notes": fidelity_notes(model_cfg, notes),
        "runs": [
            {
                "name": run.name,
                "seed": run.seed,
                "split_sizes": run.split_sizes,
                "best_epoch": run.history.best_epoch,
                "stopped_early": run.history.stopped_early,
                "epochs_run": len(run.history),
                "test": run.test_report.to_dict(),
            }
            for run in result.runs
        ],
        "aggregation": result.aggregation,
        "aggregate": result.aggregate.to_dict(),
    }
    if result.plan is not None:
        plan = result.plan.to_dict()
        report["plan"] = {k: plan[k] for k in ("k", "seed", "holdout_ratio", "holdout_size", "fold_sizes")}
    if extra:
        report.update(extra)
    report = rounded(report)
    atomic_write(out_dir / "report.json", json.dumps(report, indent=2) + "\n")
    return report


def load_report_metrics(path) -> list:
    """Re-read report.json into (name, MetricsReport) pairs, aggregate last."""
    data = json.loads(Path(path).read_text())
    rows = [(r["name"], MetricsReport.from_dict(r["test"])) for r in data["runs"]]
    rows.append((data["aggregation"], MetricsReport.from_dict(data["aggregate"])))
    return rows
