"""Adam, the epoch loop with early stopping, and training history."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data.batching import FeatureStore, make_batches, rotated_copies
from .data.manifest import Corpus
from .data.text import Vocab, build_vocab
from .errors import ConfigError, ShapeError, TrainingError, ValidationError
from .evaluation import MetricsReport, compute_metrics
from .model import ViltConfig, as_leaves, init_params, model_forward
from .rng import RngStream
from .tensor import bce_per_sample

log = logging.getLogger(__name__)

AUGMENTATION_MODES = ("off", "online", "offline")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    train_batch: int = 16
    eval_batch: int = 2
    patience: int | None = 3  # None disables early stopping
    min_delta: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    augmentation: str = "off"
    max_rotation: float = 15.0
    min_freq: int = 1
    restore_best: bool = True
    threshold: float = 0.5
    profile: str = "desk"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.patience is not None and self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.train_batch < 1 or self.eval_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.augmentation not in AUGMENTATION_MODES:
            raise ConfigError(f"augmentation must be one of {AUGMENTATION_MODES}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """One Adam update in place; decoupled weight decay is applied first when set."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"adam: shape mismatch for parameter {name!r}")
    state.t += 1
    t = state.t
    lr = cfg.learning_rate
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if cfg.weight_decay > 0:
            p -= p * p.dtype.type(lr * cfg.weight_decay)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# history and early stopping


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_metrics: MetricsReport

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "val_loss": self.val_loss,
                "val_metrics": self.val_metrics.to_dict()}


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 before any epoch
    stopped_early: bool = False

    def __len__(self):
        return len(self.epochs)

    @property
    def val_losses(self) -> list:
        return [e.val_loss for e in self.epochs]

    def curve_rows(self) -> list:
        return [(e.epoch, e.train_loss, e.val_loss, e.val_metrics.f1_weighted) for e in self.epochs]

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch, "stopped_early": self.stopped_early,
                "epochs": [e.to_dict() for e in self.epochs]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        epochs = [EpochRecord(e["epoch"], e["train_loss"], e["val_loss"], MetricsReport.from_dict(e["val_metrics"]))
                  for e in d["epochs"]]
        return cls(epochs, d["best_epoch"], d["stopped_early"])


def early_stop(val_losses, patience: int, min_delta: float = 0.0) -> bool:
    """True once ``patience`` epochs have passed without beating the best loss by more than ``min_delta``."""
    if patience < 0:
        raise ValidationError("patience must be >= 0")
    best = math.inf
    last_improvement = -1
    for i, loss in enumerate(val_losses):
        if loss < best - min_delta:
            best = loss
            last_improvement = i
    if last_improvement < 0:
        return False
    waited = len(val_losses) - 1 - last_improvement
    return waited > 0 and waited >= patience


# ---------------------------------------------------------------------------
# inference helpers


def predict(params: dict, cfg: ViltConfig, store: FeatureStore, records, batch_size: int = 2,
            with_labels: bool = True):
    """Infer-mode probabilities and logits for ``records`` in order."""
    leaves = as_leaves(params)
    probs, logits = [], []
    for group in make_batches(records, batch_size):
        batch = store.collate(group, with_labels=with_labels)
        out = model_forward(batch, leaves, cfg, train=False)
        probs.append(out.probs)
        logits.append(out.logits.data.astype(np.float64))
    return np.concatenate(probs), np.concatenate(logits)


def evaluate(params: dict, cfg: ViltConfig, store: FeatureStore, records, batch_size: int = 2,
             threshold: float = 0.5, precision_average: str = "macro") -> MetricsReport:
    records = list(records)
    probs, logits = predict(params, cfg, store, records, batch_size)
    labels = np.array([r.label for r in records], dtype=np.float64)
    loss = float(bce_per_sample(logits, labels).mean())
    return compute_metrics(probs, labels, threshold, loss, precision_average=precision_average)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: dict
    history: TrainHistory
    vocab: Vocab
    model_config: ViltConfig
    final_params: dict | None = None


def train_model(cfg: TrainConfig, model_cfg: ViltConfig, train: Corpus, val: Corpus,
                rng: RngStream | None = None, vocab: Vocab | None = None) -> TrainResult:
    """Train from scratch and return the best-validation-loss snapshot.

    The vocabulary is built from the training split unless given. Captions
    must already be resolved (no ``None`` text).
    """
    if len(train) == 0 or len(val) == 0:
        raise ValidationError("training and validation splits must be non-empty")
    for corpus in (train, val):
        missing = corpus.needs_ocr()
        if missing:
            raise ValidationError(f"records without text: {missing[:5]} (run OCR first)")
    root = rng if rng is not None else RngStream(cfg.seed)
    if vocab is None:
        vocab = build_vocab((r.text for r in train.records), cfg.min_freq)
    model_cfg = model_cfg.with_vocab(len(vocab))
    params = init_params(model_cfg, root.derive("init"))
    state = AdamState.zeros_like(params)

    train_records = list(train.records)
    if cfg.augmentation == "offline":
        train_records += rotated_copies(train.records, root.derive("offline"), cfg.max_rotation)
    train_store = FeatureStore(train, vocab, model_cfg)
    val_store = FeatureStore(val, vocab, model_cfg)

    history = TrainHistory()
    best_loss = math.inf
    best_params = None
    for epoch in range(1, cfg.epochs + 1):
        batches = make_batches(train_records, cfg.train_batch, shuffle=True, rng=root.derive("shuffle", epoch))
        aug_rng = root.derive("augment", epoch) if cfg.augmentation == "online" else None
        total, count = 0.0, 0
        for bi, group in enumerate(batches):
            batch = train_store.collate(group, aug_rng, cfg.max_rotation)
            leaves = as_leaves(params, requires_grad=True)
            out = model_forward(batch, leaves, model_cfg, train=True, rng=root.derive("dropout", epoch, bi))
            loss = out.loss.item()
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}, batch {bi} (ids {batch.ids})")
            out.loss.backward()
            grads = {k: t.grad for k, t in leaves.items() if t.grad is not None}
            adam_step(params, grads, state, cfg)
            total += loss * len(batch)
            count += len(batch)
        report = evaluate(params, model_cfg, val_store, val.records, cfg.eval_batch, cfg.threshold)
        history.epochs.append(EpochRecord(epoch, total / count, report.loss, report))
        if report.loss < best_loss:
            best_loss = report.loss
            best_params = {k: v.copy() for k, v in params.items()}
            history.best_epoch = epoch
        log.info("epoch %d train_loss=%.4f val_loss=%.4f val_f1w=%.4f",
                 epoch, total / count, report.loss, report.f1_weighted)
        if cfg.patience is not None and epoch < cfg.epochs and early_stop(
                history.val_losses, cfg.patience, cfg.min_delta):
            history.stopped_early = True
            log.info("early stop after epoch %d (best epoch %d)", epoch, history.best_epoch)
            break
    chosen = best_params if cfg.restore_best else params
    return TrainResult(chosen, history, vocab, model_cfg, final_params=params)
