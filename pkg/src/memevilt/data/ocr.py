"""Boundary to an external OCR engine.

Three adapters: ``sidecar`` reads ``<image_path>.txt``; ``command`` runs an
external program with the image path as its only argument and takes its
standard output; ``none`` trusts the text already in the manifest.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError, OcrError
from .manifest import Corpus, MemeRecord

log = logging.getLogger(__name__)

ADAPTERS = ("sidecar", "command", "none")


@dataclass(frozen=True)
class OcrConfig:
    adapter: str = "sidecar"
    command: tuple = field(default_factory=tuple)
    timeout: float = 60.0

    def __post_init__(self):
        if self.adapter not in ADAPTERS:
            raise ConfigError(f"unknown OCR adapter {self.adapter!r}; choose from {ADAPTERS}")
        if isinstance(self.command, str):
            object.__setattr__(self, "command", tuple(shlex.split(self.command)))
        if self.adapter == "command" and not self.command:
            raise ConfigError("the command OCR adapter needs a command")


def sidecar_path(image_path) -> Path:
    return Path(str(image_path) + ".txt")


def ocr_extract(record: MemeRecord, config: OcrConfig, base_dir=None) -> str:
    image = Path(record.image_path)
    if base_dir is not None and not image.is_absolute():
        image = Path(base_dir) / image
    if config.adapter == "none":
        if record.text is None:
            raise ConfigError(f"record {record.id!r} has no text and OCR is disabled")
        return record.text
    if config.adapter == "sidecar":
        side = sidecar_path(image)
        try:
            return side.read_text(encoding="utf-8")
        except FileNotFoundError:
            log.warning("no OCR sidecar for %s (%s); using empty text", record.id, side)
            return ""
    try:
        proc = subprocess.run(
            [*config.command, str(image)], capture_output=True, timeout=config.timeout, check=False
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise OcrError(f"OCR command failed for {record.id!r}: {exc}") from exc
    if proc.returncode != 0:
        stderr = proc.stderr.decode("utf-8", "replace").strip()
        raise OcrError(f"OCR command exited {proc.returncode} for {record.id!r}: {stderr}")
    return proc.stdout.decode("utf-8").rstrip("\n")


def resolve_texts(corpus: Corpus, config: OcrConfig) -> Corpus:
    """Fill missing captions via OCR; records with text keep it."""
    out = []
    for rec in corpus.records:
        text = rec.text
        if text is None:
            text = ocr_extract(rec, config, corpus.base_dir())
        out.append(MemeRecord(rec.id, rec.image_path, text, rec.label, rec.annotator_labels, rec.meta))
    return Corpus(out, corpus.source, dict(corpus.metadata))
