"""Single-stream vision-and-language transformer with a binary classifier head.

Image patches are projected linearly, caption tokens are looked up in an
embedding table, both receive learned positional and modality-type
embeddings, and the concatenated sequence ``[CLS, text..., patches...]`` runs
through a pre-norm transformer encoder. The CLS state is pooled (dense + tanh)
and scored by an MLP head ending in a sigmoid.

Parameters live in a plain ``dict[str, np.ndarray]``; forward functions take
the same names mapped to :class:`~memevilt.tensor.Tensor` leaves.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import tensor as tm
from .errors import ConfigError, ShapeError, VocabularyError
from .rng import RngStream

POOLING_MODES = ("cls", "mean")
MODALITIES = ("both", "text", "image")


@dataclass(frozen=True)
class ViltConfig:
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: int = 4
    patch_size: int = 16
    image_size: tuple = (64, 64)
    max_text_len: int = 40
    vocab_size: int = 1000
    dropout_head: float = 0.3
    dropout_encoder: float = 0.1
    eps: float = 1e-5
    num_modal_types: int = 2
    pooling: str = "cls"
    modalities: str = "both"
    profile: str = "desk"
    # resize target requested by the profile before rounding up to the patch grid
    requested_image_size: tuple = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if self.requested_image_size is not None:
            object.__setattr__(
                self, "requested_image_size", tuple(int(v) for v in self.requested_image_size)
            )
        self.validate()

    def validate(self):
        positive = ("hidden_dim", "num_layers", "num_heads", "mlp_ratio", "patch_size",
                    "max_text_len", "vocab_size")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ConfigError(f"image_size must be two positive ints, got {self.image_size}")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(f"image size {self.image_size} is not divisible by patch size {self.patch_size}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must cover PAD and UNK")
        for name in ("dropout_head", "dropout_encoder"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.num_modal_types != 2:
            raise ConfigError("exactly two modality types are supported")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}")
        if self.modalities not in MODALITIES:
            raise ConfigError(f"modalities must be one of {MODALITIES}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def num_patches(self) -> int:
        h, w = self.image_size
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def seq_len(self) -> int:
        return 1 + self.max_text_len + self.num_patches

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        if self.requested_image_size is not None:
            d["requested_image_size"] = list(self.requested_image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ViltConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_vocab(self, vocab_size: int) -> "ViltConfig":
        return replace(self, vocab_size=int(vocab_size))


def round_up(value: int, multiple: int) -> int:
    return -(-value // multiple) * multiple


PROFILES = {
    "desk": dict(hidden_dim=64, num_layers=2, num_heads=4, mlp_ratio=4, patch_size=16,
                 image_size=(64, 64), max_text_len=40),
    "paper": dict(hidden_dim=768, num_layers=12, num_heads=12, mlp_ratio=4, patch_size=32,
                  image_size=(252, 252), max_text_len=40),
}


def profile_config(name: str, vocab_size: int = 1000, **overrides) -> ViltConfig:
    """Build a named profile; image sizes are rounded up to the patch grid."""
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    settings = dict(PROFILES[name])
    settings.update(overrides)
    patch = settings["patch_size"]
    size = settings["image_size"]
    requested = (size, size) if isinstance(size, int) else tuple(size)
    settings["image_size"] = tuple(round_up(v, patch) for v in requested)
    settings.setdefault("vocab_size", vocab_size)
    return ViltConfig(profile=name, requested_image_size=requested, **settings)


# ---------------------------------------------------------------------------
# parameters


def param_shapes(cfg: ViltConfig) -> dict:
    d, p = cfg.hidden_dim, cfg.patch_size
    hidden = cfg.mlp_ratio * d
    shapes = {
        "patch.weight": (p * p * 3, d),
        "patch.bias": (d,),
        "text.token_embedding": (cfg.vocab_size, d),
        "cls": (d,),
        "pos.text": (cfg.max_text_len + 1, d),
        "pos.image": (cfg.num_patches, d),
        "modal_type": (cfg.num_modal_types, d),
    }
    for i in range(cfg.num_layers):
        pre = f"layers.{i}"
        shapes[f"{pre}.ln1.gamma"] = (d,)
        shapes[f"{pre}.ln1.beta"] = (d,)
        for proj in ("q", "k", "v", "o"):
            shapes[f"{pre}.attn.{proj}.weight"] = (d, d)
            # a key bias only shifts each score row by a constant, which softmax ignores
            if proj != "k":
                shapes[f"{pre}.attn.{proj}.bias"] = (d,)
        shapes[f"{pre}.ln2.gamma"] = (d,)
        shapes[f"{pre}.ln2.beta"] = (d,)
        shapes[f"{pre}.mlp.fc1.weight"] = (d, hidden)
        shapes[f"{pre}.mlp.fc1.bias"] = (hidden,)
        shapes[f"{pre}.mlp.fc2.weight"] = (hidden, d)
        shapes[f"{pre}.mlp.fc2.bias"] = (d,)
    shapes.update({
        "final_ln.gamma": (d,),
        "final_ln.beta": (d,),
        "pooler.weight": (d, d),
        "pooler.bias": (d,),
        "head.ln1.gamma": (d,),
        "head.ln1.beta": (d,),
        "head.fc1.weight": (d, d),
        "head.fc1.bias": (d,),
        "head.ln2.gamma": (d,),
        "head.ln2.beta": (d,),
        "head.fc2.weight": (d, 1),
        "head.fc2.bias": (1,),
    })
    return shapes


def audit_params(params: dict, cfg: ViltConfig):
    """Raise ShapeError unless ``params`` holds exactly the expected shapes."""
    expected = param_shapes(cfg)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ShapeError(f"parameter set mismatch: missing={missing} unexpected={extra}")
    for name, shape in expected.items():
        got = tuple(np.shape(params[name].data if isinstance(params[name], tm.Tensor) else params[name]))
        if got != tuple(shape):
            raise ShapeError(f"parameter {name}: expected shape {shape}, got {got}")


def count_params(cfg: ViltConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


def describe(cfg: ViltConfig) -> dict:
    return {
        "profile": cfg.profile,
        "parameters": count_params(cfg),
        "sequence_length": cfg.seq_len,
        "image_tokens": cfg.num_patches,
        "text_tokens": cfg.max_text_len,
        "hidden_dim": cfg.hidden_dim,
        "layers": cfg.num_layers,
        "heads": cfg.num_heads,
    }


def random_point(cfg: ViltConfig, rng: RngStream, dtype=np.float64) -> dict:
    """A generic, well-conditioned parameter point for gradient checks.

    Matrices get N(0, 1/fan_in), embeddings N(0, 1), biases and layer-norm
    offsets N(0, 0.1), gains 1 + N(0, 0.1). Unlike the training init, the
    residual stream has unit scale and attention is far from uniform.
    """
    params = {}
    embeddings = {"text.token_embedding", "cls", "pos.text", "pos.image", "modal_type"}
    for name, shape in param_shapes(cfg).items():
        r = rng.derive(name)
        leaf = name.rsplit(".", 1)[-1]
        if name in embeddings:
            arr = r.normal(0.0, 1.0, shape)
        elif leaf == "gamma":
            arr = 1.0 + r.normal(0.0, 0.1, shape)
        elif leaf in ("beta", "bias"):
            arr = r.normal(0.0, 0.1, shape)
        else:
            arr = r.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        params[name] = arr.astype(dtype)
    return params


def init_params(cfg: ViltConfig, rng: RngStream, dtype=np.float32) -> dict:
    """Truncated-normal(0, 0.02) weights and embeddings, zero biases, unit gains.

    Each tensor draws from its own stream derived from its name, so adding or
    reordering parameters never changes the others.
    """
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            arr = np.ones(shape)
        elif leaf in ("beta", "bias"):
            arr = np.zeros(shape)
        else:
            arr = rng.derive(name).truncated_normal(shape, std=0.02)
        params[name] = arr.astype(dtype)
    return params


# ---------------------------------------------------------------------------
# forward pieces


@dataclass
class Batch:
    images: np.ndarray  # [B, H, W, 3] in [-1, 1]
    token_ids: np.ndarray  # [B, T] int
    text_mask: np.ndarray  # [B, T] 0/1
    labels: np.ndarray | None = None
    ids: list = field(default_factory=list)

    def __len__(self):
        return self.token_ids.shape[0]


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """[B, H, W, C] -> [B, N, P*P*C], patches row-major, pixels (row, col, channel)."""
    b, h, w, c = images.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {patch}")
    x = images.reshape(b, h // patch, patch, w // patch, patch, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // patch) * (w // patch), patch * patch * c)


def embed_patches(images, params, cfg: ViltConfig) -> tm.Tensor:
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1:] != (*cfg.image_size, 3):
        raise ShapeError(f"images must be [B, {cfg.image_size[0]}, {cfg.image_size[1]}, 3], got {images.shape}")
    flat = patchify(images.astype(params["patch.weight"].data.dtype, copy=False), cfg.patch_size)
    return tm.linear(tm.Tensor(flat), params["patch.weight"], params["patch.bias"])


def embed_text(token_ids, text_mask, params) -> tm.Tensor:
    """Token rows from the embedding table; PAD rows are embedded like any other."""
    ids = np.asarray(token_ids)
    vocab = params["text.token_embedding"].shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise VocabularyError(f"token id out of range [0, {vocab})")
    if np.shape(text_mask) != ids.shape:
        raise ShapeError(f"text mask {np.shape(text_mask)} does not match ids {ids.shape}")
    return tm.embedding(params["text.token_embedding"], ids)


def assemble_sequence(text_emb: tm.Tensor, image_emb: tm.Tensor, text_mask, params, cfg: ViltConfig):
    """Concatenate ``[CLS, text, image]`` and add position and modality embeddings.

    Returns the sequence ``[B, S, D]`` and the key mask ``[B, S]``.
    """
    b, t, d = text_emb.shape
    if image_emb.ndim != 3 or image_emb.shape[0] != b or image_emb.shape[2] != d:
        raise ShapeError(f"text embeddings {text_emb.shape} and image embeddings {image_emb.shape} disagree")
    if t != cfg.max_text_len or image_emb.shape[1] != cfg.num_patches:
        raise ShapeError("sequence lengths do not match the config")
    text_mask = np.asarray(text_mask)
    if text_mask.shape != (b, t):
        raise ShapeError(f"text mask {text_mask.shape} does not match {(b, t)}")
    cls = tm.repeat_rows(tm.reshape(params["cls"], (1, d)), b)
    text_part = tm.concat([cls, text_emb], axis=1)  # [B, 1+T, D]
    type_text = tm.select(params["modal_type"], 0, axis=0)
    type_image = tm.select(params["modal_type"], 1, axis=0)
    text_extra = tm.add_bias(params["pos.text"], type_text)  # [1+T, D]
    image_extra = tm.add_bias(params["pos.image"], type_image)  # [N, D]
    text_part = text_part + tm.repeat_rows(text_extra, b)
    image_part = image_emb + tm.repeat_rows(image_extra, b)
    seq = tm.concat([text_part, image_part], axis=1)
    attn_mask = np.concatenate(
        [np.ones((b, 1), dtype=np.int64), text_mask.astype(np.int64), np.ones((b, cfg.num_patches), dtype=np.int64)],
        axis=1,
    )
    return seq, attn_mask


def self_attention(x: tm.Tensor, attn_mask, params, prefix: str, cfg: ViltConfig,
                   train=False, rng=None, record=None) -> tm.Tensor:
    """Multi-head scaled dot-product attention over already-normalised ``x``."""
    b, s, d = x.shape
    h, dh = cfg.num_heads, cfg.head_dim

    def heads(name):
        proj = tm.matmul(x, params[f"{prefix}.{name}.weight"])
        if name != "k":
            proj = tm.add_bias(proj, params[f"{prefix}.{name}.bias"])
        return tm.transpose(tm.reshape(proj, (b, s, h, dh)), (0, 2, 1, 3))  # [B, H, S, dh]

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = tm.scale(tm.matmul(q, tm.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = tm.softmax(scores, key_mask=attn_mask)
    if record is not None:
        record.append(weights.data)
    weights = tm.dropout(weights, cfg.dropout_encoder, train, rng)
    ctx = tm.matmul(weights, v)  # [B, H, S, dh]
    ctx = tm.reshape(tm.transpose(ctx, (0, 2, 1, 3)), (b, s, d))
    return tm.linear(ctx, params[f"{prefix}.o.weight"], params[f"{prefix}.o.bias"])


def encoder_forward(seq: tm.Tensor, attn_mask, params, cfg: ViltConfig, train=False, rng=None,
                    record=None) -> tm.Tensor:
    """Pre-norm encoder blocks followed by a final layer norm.

    When ``record`` is a list, each layer's attention weights ``[B, H, S, S]``
    are appended to it.
    """
    x = seq
    p_drop = cfg.dropout_encoder
    for i in range(cfg.num_layers):
        pre = f"layers.{i}"
        hn = tm.layer_norm(x, params[f"{pre}.ln1.gamma"], params[f"{pre}.ln1.beta"], cfg.eps)
        att = self_attention(hn, attn_mask, params, f"{pre}.attn", cfg, train, rng, record)
        x = x + tm.dropout(att, p_drop, train, rng)
        hn = tm.layer_norm(x, params[f"{pre}.ln2.gamma"], params[f"{pre}.ln2.beta"], cfg.eps)
        hn = tm.gelu(tm.linear(hn, params[f"{pre}.mlp.fc1.weight"], params[f"{pre}.mlp.fc1.bias"]))
        hn = tm.linear(hn, params[f"{pre}.mlp.fc2.weight"], params[f"{pre}.mlp.fc2.bias"])
        x = x + tm.dropout(hn, p_drop, train, rng)
    return tm.layer_norm(x, params["final_ln.gamma"], params["final_ln.beta"], cfg.eps)


def pool(hidden: tm.Tensor, params, attn_mask=None, mode: str = "cls") -> tm.Tensor:
    if mode == "cls":
        summary = tm.select(hidden, 0, axis=1)
    elif mode == "mean":
        summary = tm.masked_mean(hidden, attn_mask)
    else:
        raise ConfigError(f"unknown pooling mode {mode!r}")
    return tm.tanh(tm.linear(summary, params["pooler.weight"], params["pooler.bias"]))


def classifier_logits(pooled: tm.Tensor, params, cfg: ViltConfig, train=False, rng=None) -> tm.Tensor:
    x = tm.layer_norm(pooled, params["head.ln1.gamma"], params["head.ln1.beta"], cfg.eps)
    x = tm.dropout(x, cfg.dropout_head, train, rng)
    x = tm.linear(x, params["head.fc1.weight"], params["head.fc1.bias"])
    x = tm.layer_norm(x, params["head.ln2.gamma"], params["head.ln2.beta"], cfg.eps)
    x = tm.relu(x)
    x = tm.dropout(x, cfg.dropout_head, train, rng)
    x = tm.linear(x, params["head.fc2.weight"], params["head.fc2.bias"])
    return tm.reshape(x, (x.shape[0],))


def classifier_head(pooled: tm.Tensor, params, cfg: ViltConfig, train=False, rng=None) -> tm.Tensor:
    return tm.sigmoid(classifier_logits(pooled, params, cfg, train, rng))


def bce_loss(probs, labels) -> float:
    """Mean BCE of probabilities; probabilities are clipped into the open interval."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"bce: probs {p.shape} vs labels {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ShapeError("bce: labels must be 0 or 1")
    tiny = np.finfo(np.float64).tiny
    logit = np.log(np.clip(p, tiny, None)) - np.log(np.clip(1 - p, tiny, None))
    return float(tm.bce_per_sample(logit, y).mean())


# keeps reported probabilities strictly inside (0, 1) for saturated logits
_P_MIN = np.finfo(np.float64).tiny
_P_MAX = 1.0 - np.finfo(np.float64).epsneg


@dataclass
class ForwardOutput:
    probs: np.ndarray
    logits: tm.Tensor
    loss: tm.Tensor | None = None
    attention: list | None = None
    cls_hidden: np.ndarray | None = None


def as_leaves(params: dict, requires_grad=False, dtype=None) -> dict:
    return {k: tm.Tensor(v, requires_grad=requires_grad, dtype=dtype) for k, v in params.items()}


def model_forward(batch: Batch, params: dict, cfg: ViltConfig, train=False, rng=None,
                  record_attention=False) -> ForwardOutput:
    """Full pipeline from a batch to probabilities (and loss when labelled).

    ``params`` maps names to Tensors (see :func:`as_leaves`) or raw arrays.
    """
    if params and not isinstance(next(iter(params.values())), tm.Tensor):
        params = as_leaves(params)
    dtype = params["patch.weight"].data.dtype
    text_emb = embed_text(batch.token_ids, batch.text_mask, params)
    if cfg.modalities == "text":
        image_emb = tm.Tensor(np.zeros((len(batch), cfg.num_patches, cfg.hidden_dim), dtype=dtype))
    else:
        image_emb = embed_patches(batch.images, params, cfg)
    if cfg.modalities == "image":
        text_emb = tm.Tensor(np.zeros(text_emb.shape, dtype=dtype))
    seq, attn_mask = assemble_sequence(text_emb, image_emb, batch.text_mask, params, cfg)
    record = [] if record_attention else None
    hidden = encoder_forward(seq, attn_mask, params, cfg, train, rng, record)
    pooled = pool(hidden, params, attn_mask, cfg.pooling)
    logits = classifier_logits(pooled, params, cfg, train, rng)
    probs = np.clip(tm._stable_sigmoid(logits.data.astype(np.float64)), _P_MIN, _P_MAX)
    loss = None
    if batch.labels is not None:
        loss = tm.bce_with_logits(logits, batch.labels)
    return ForwardOutput(probs, logits, loss, record, hidden.data[:, 0, :].copy())
