"""Meme records, JSONL manifests, annotation consensus and corpus statistics."""

from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ManifestError, ValidationError

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("id", "image_path", "text", "label", "annotator_labels", "meta")


@dataclass
class MemeRecord:
    id: str
    image_path: str
    text: str | None = None
    label: int | None = None
    annotator_labels: list | None = None
    meta: dict | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "image_path": self.image_path}
        for key in ("text", "label", "annotator_labels", "meta"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass
class Corpus:
    records: list
    source: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = Counter(r.id for r in self.records)
        dupes = sorted(k for k, n in counts.items() if n > 1)
        if dupes:
            raise ValidationError(f"duplicate record ids: {dupes[:5]}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        return isinstance(other, Corpus) and self.records == other.records

    @property
    def ids(self) -> list:
        return [r.id for r in self.records]

    @property
    def labels(self) -> list:
        return [r.label for r in self.records]

    def subset(self, ids) -> "Corpus":
        """Records whose id is in ``ids``, kept in corpus order."""
        wanted = set(ids)
        return Corpus([r for r in self.records if r.id in wanted], self.source, dict(self.metadata))

    def base_dir(self) -> Path:
        return Path(self.source).parent if self.source else Path(".")

    def resolve_image(self, record: MemeRecord) -> Path:
        path = Path(record.image_path)
        return path if path.is_absolute() else self.base_dir() / path

    def needs_ocr(self) -> list:
        return [r.id for r in self.records if r.text is None]


def _check_label(value, line, what="label"):
    if isinstance(value, bool) or value not in (0, 1):
        raise ManifestError(f"{what} must be 0 or 1, got {value!r}", line)
    return int(value)


def parse_record(obj, line=None) -> MemeRecord:
    if not isinstance(obj, dict):
        raise ManifestError("record must be a JSON object", line)
    unknown = set(obj) - set(MANIFEST_FIELDS)
    if unknown:
        raise ManifestError(f"unknown fields {sorted(unknown)}", line)
    for key in ("id", "image_path"):
        if not isinstance(obj.get(key), str) or not obj[key]:
            raise ManifestError(f"field {key!r} must be a non-empty string", line)
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise ManifestError("field 'text' must be a string", line)
    label = obj.get("label")
    if label is not None:
        label = _check_label(label, line)
    votes = obj.get("annotator_labels")
    if votes is not None:
        if not isinstance(votes, list):
            raise ManifestError("annotator_labels must be a list", line)
        votes = [_check_label(v, line, "annotator vote") for v in votes]
    meta = obj.get("meta")
    if meta is not None and not isinstance(meta, dict):
        raise ManifestError("meta must be an object", line)
    return MemeRecord(obj["id"], obj["image_path"], text, label, votes, meta)


def load_manifest(path) -> Corpus:
    """Read a JSONL manifest (one record per line; blank lines ignored)."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    records = []
    seen = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"malformed JSON: {exc.msg}", lineno) from exc
        rec = parse_record(obj, lineno)
        if rec.id in seen:
            raise ManifestError(f"duplicate id {rec.id!r} (first on line {seen[rec.id]})", lineno)
        seen[rec.id] = lineno
        records.append(rec)
    if not records:
        raise ManifestError(f"manifest {path} contains no records")
    corpus = Corpus(records, source=str(path))
    missing = corpus.needs_ocr()
    if missing:
        log.info("%d records have no text and need OCR", len(missing))
    return corpus


def save_manifest(corpus: Corpus, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r.to_json(), ensure_ascii=False, sort_keys=False) for r in corpus.records]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------------------
# annotation consensus


def consensus_label(votes, threshold: float = 0.8):
    """Majority label if its share of the votes reaches ``threshold``, else None.

    Ties never resolve.
    """
    votes = list(votes)
    if not votes:
        raise ValidationError("consensus needs at least one vote")
    ones = sum(1 for v in votes if _check_label(v, None, "vote") == 1)
    zeros = len(votes) - ones
    if ones == zeros:
        return None
    majority, count = (1, ones) if ones > zeros else (0, zeros)
    # compare count/n >= threshold without float rounding at the boundary
    if count >= threshold * len(votes) - 1e-12:
        return majority
    return None


def apply_consensus(corpus: Corpus, threshold: float = 0.8):
    """Fill labels from annotator votes; returns (corpus, unresolved ids)."""
    out, unresolved = [], []
    for rec in corpus.records:
        new = MemeRecord(rec.id, rec.image_path, rec.text, rec.label, rec.annotator_labels, rec.meta)
        if rec.annotator_labels:
            label = consensus_label(rec.annotator_labels, threshold)
            if label is None:
                unresolved.append(rec.id)
                new.label = None
            else:
                new.label = label
        out.append(new)
    return Corpus(out, corpus.source, dict(corpus.metadata)), unresolved


# ---------------------------------------------------------------------------
# statistics


def corpus_stats(corpus: Corpus, bin_width: int = 5) -> dict:
    counts = {0: 0, 1: 0}
    unlabeled = 0
    for rec in corpus.records:
        if rec.label is None:
            unlabeled += 1
        else:
            counts[rec.label] += 1
    labeled = counts[0] + counts[1]
    if labeled == 0:
        log.warning("corpus has no labeled records")
    fractions = {k: (v / labeled if labeled else 0.0) for k, v in counts.items()}
    lengths = [len(rec.text.split()) for rec in corpus.records if rec.text is not None]
    histogram = Counter((n // bin_width) * bin_width for n in lengths)
    return {
        "n": len(corpus),
        "counts": counts,
        "fractions": fractions,
        "unlabeled": unlabeled,
        "missing_text": sum(1 for r in corpus.records if r.text is None),
        "text_length_histogram": [
            {"bin_start": b, "bin_end": b + bin_width - 1, "count": histogram[b]} for b in sorted(histogram)
        ],
    }


def write_stats(stats: dict, out_dir) -> tuple:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "stats.json"
    json_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    csv_path = out_dir / "histogram.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "bin", "count"])
        for label in (0, 1):
            writer.writerow(["label", label, stats["counts"][label]])
        for row in stats["text_length_histogram"]:
            writer.writerow(["text_tokens", f"{row['bin_start']}-{row['bin_end']}", row["count"]])
    return json_path, csv_path
