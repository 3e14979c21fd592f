"""Run configuration: defaults, a flat ``section.key = value`` file format, overrides.

Example file::

    profile = desk
    train.epochs = 20
    train.learning_rate = 1e-3
    data.manifest = corpus/manifest.jsonl
    eval.protocol = kfold
    eval.k = 5

Values are parsed as JSON when possible (numbers, booleans, lists, null) and
kept as strings otherwise. Unknown keys are rejected.
"""

from __future__ import annotations

import json
import os
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .model import PROFILES, ViltConfig, profile_config
from .training import TrainConfig

OUTPUT_ENV = "MEMEVILT_OUT"

MODEL_KEYS = tuple(
    f.name for f in fields(ViltConfig) if f.name not in ("profile", "requested_image_size", "num_modal_types")
)
TRAIN_KEYS = tuple(k for k in TrainConfig.field_names() if k != "profile")
DATA_DEFAULTS = {"manifest": None, "ocr": "sidecar", "ocr_command": None}
EVAL_DEFAULTS = {
    "protocol": "split",
    "k": 5,
    "ratios": [0.8, 0.1, 0.1],
    "runs": 1,
    "base_seed": 0,
    "holdout_ratio": 0.1,
    "stratified": True,
    "aggregation": "median",
}
TOP_DEFAULTS = {"profile": "desk", "output": None}


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    return text


def read_config_file(path) -> dict:
    flat = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        flat[key.strip()] = parse_value(value)
    return flat


def default_config() -> dict:
    return {
        **TOP_DEFAULTS,
        "model": {},
        "train": {},
        "data": dict(DATA_DEFAULTS),
        "eval": dict(EVAL_DEFAULTS),
    }


def _set(cfg: dict, key: str, value):
    if "." not in key:
        if key not in TOP_DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value
        return
    section, name = key.split(".", 1)
    allowed = {
        "model": MODEL_KEYS,
        "train": TRAIN_KEYS,
        "data": tuple(DATA_DEFAULTS),
        "eval": tuple(EVAL_DEFAULTS),
    }.get(section)
    if allowed is None or name not in allowed:
        raise ConfigError(f"unknown config key {key!r}")
    cfg[section][name] = value


def resolve_config(path=None, overrides=None) -> dict:
    """Defaults, then the file, then overrides (flags win). Returns a plain dict."""
    cfg = default_config()
    if path is not None:
        for key, value in read_config_file(path).items():
            _set(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        _set(cfg, key, parse_value(value) if isinstance(value, str) else value)
    if cfg["profile"] not in PROFILES:
        raise ConfigError(f"unknown profile {cfg['profile']!r}")
    if cfg["output"] is None:
        cfg["output"] = os.environ.get(OUTPUT_ENV, "runs")
    train = {k: v for k, v in TrainConfig().to_dict().items() if k != "profile"}
    train.update(cfg["train"])
    cfg["train"] = train
    model_cfg(cfg)  # validates
    train_cfg(cfg)
    return cfg


def model_cfg(cfg: dict, vocab_size: int = 1000) -> ViltConfig:
    overrides = dict(cfg["model"])
    overrides.setdefault("vocab_size", vocab_size)
    try:
        return profile_config(cfg["profile"], **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def train_cfg(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(profile=cfg["profile"], **cfg["train"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
