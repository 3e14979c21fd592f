"""Checkpoint directories.

Layout::

    config.json   model config + profile + format version
    index.json    parameter name -> {file, shape}
    params/*.f32  little-endian float32, row-major
    vocab.json    caption vocabulary (optional)

Directories are written under a temporary name and renamed into place.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .data.text import Vocab
from .errors import ShapeError, ValidationError
from .model import ViltConfig, audit_params

FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


def save_checkpoint(path, params: dict, cfg: ViltConfig, vocab: Vocab | None = None) -> Path:
    path = Path(path)
    audit_params(params, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        (tmp / "params").mkdir()
        index = {}
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype=_F32)
            fname = f"params/{name}.f32"
            (tmp / fname).write_bytes(arr.tobytes())
            index[name] = {"file": fname, "shape": list(arr.shape)}
        config = {"format_version": FORMAT_VERSION, "profile": cfg.profile, "model": cfg.to_dict()}
        (tmp / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
        (tmp / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
        if vocab is not None:
            (tmp / "vocab.json").write_text(json.dumps(vocab.to_json(), ensure_ascii=False) + "\n", encoding="utf-8")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_checkpoint(path):
    """Returns ``(params, config, vocab_or_None)``; rejects shape-audit failures."""
    path = Path(path)
    try:
        config = json.loads((path / "config.json").read_text())
        index = json.loads((path / "index.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"not a checkpoint directory: {path} ({exc})") from exc
    if config.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint format {config.get('format_version')!r}")
    cfg = ViltConfig.from_dict(config["model"])
    params = {}
    for name, entry in index.items():
        raw = (path / entry["file"]).read_bytes()
        shape = tuple(entry["shape"])
        if len(raw) != _F32.itemsize * int(np.prod(shape)):
            raise ShapeError(f"parameter {name}: file size does not match shape {shape}")
        params[name] = np.frombuffer(raw, dtype=_F32).reshape(shape).astype(np.float32)
    audit_params(params, cfg)
    vocab = None
    if (path / "vocab.json").exists():
        vocab = Vocab.from_json(json.loads((path / "vocab.json").read_text(encoding="utf-8")))
    return params, cfg, vocab
