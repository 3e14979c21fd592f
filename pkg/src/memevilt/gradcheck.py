"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError
from .rng import RngStream
from .tensor import Tensor


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    coords_checked: int
    worst_index: tuple = ()
    analytic: float = 0.0
    numeric: float = 0.0


@dataclass
class GradCheckReport:
    h: float
    tol: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.max_rel_error <= self.tol for p in self.params)

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "tol": self.tol,
            "pass": self.passed,
            "max_rel_error": self.max_rel_error,
            "params": [
                {
                    "name": p.name,
                    "max_rel_error": p.max_rel_error,
                    "coords_checked": p.coords_checked,
                    "pass": p.max_rel_error <= self.tol,
                }
                for p in self.params
            ],
        }


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-12)


def _pick_coords(grad: np.ndarray, max_coords):
    size = grad.size
    if max_coords is None or size <= max_coords:
        return list(range(size))
    # largest analytic entries: their truncation error is smallest relative to the signal
    return sorted(int(i) for i in np.argsort(-np.abs(grad.reshape(-1)), kind="stable")[:max_coords])


def check_gradient(loss_fn, params: dict, h: float = 1e-3, tol: float = 1e-4,
                   max_coords=None, directions: int = 0, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` maps a dict of named Tensors to a scalar Tensor and must be
    deterministic. All parameters are promoted to float64.

    ``max_coords`` caps the coordinates checked per parameter (those with the
    largest analytic gradient are used). ``directions`` adds that many random
    Gaussian directions per parameter, compared as directional derivatives,
    so every coordinate still contributes to some check.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v.copy(), requires_grad=True) for k, v in base.items()}
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data).all():
        raise EvaluationError("loss is not finite at the base point")
    loss.backward()
    rng = RngStream(seed, 0x6772616463686B)
    report = GradCheckReport(h=h, tol=tol)

    def evaluate(name):
        try:
            val = loss_fn({k: Tensor(v) for k, v in base.items()}).item()
        except FloatingPointError as exc:
            raise EvaluationError(f"non-finite loss while perturbing parameter {name!r}: {exc}") from exc
        if not np.isfinite(val):
            raise EvaluationError(f"non-finite loss while perturbing parameter {name!r}")
        return val

    for name in base:
        grad = leaves[name].grad
        if grad is None:
            grad = np.zeros_like(base[name])
        arr = base[name]
        flat = arr.reshape(-1)
        worst = ParamCheck(name, 0.0, 0)

        def record(err, where, analytic, numeric):
            if err >= worst.max_rel_error:
                worst.max_rel_error = err
                worst.worst_index = where
                worst.analytic = analytic
                worst.numeric = numeric

        coords = _pick_coords(grad, max_coords)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate(name)
            flat[i] = orig - h
            down = evaluate(name)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            analytic = float(grad.reshape(-1)[i])
            record(relative_error(analytic, numeric), tuple(int(j) for j in np.unravel_index(i, arr.shape)),
                   analytic, numeric)
        dir_rng = rng.derive(name)
        for k in range(directions):
            v = dir_rng.normal(0.0, 1.0, arr.shape)
            v /= np.linalg.norm(v)
            orig = arr.copy()
            arr += h * v
            up = evaluate(name)
            arr[...] = orig - h * v
            down = evaluate(name)
            arr[...] = orig
            numeric = (up - down) / (2 * h)
            analytic = float((grad * v).sum())
            record(relative_error(analytic, numeric), ("direction", k), analytic, numeric)
        worst.coords_checked = len(coords) + directions
        report.params.append(worst)
    return report


KINK_MARGIN = 0.01


def _relu_inputs(batch, params, cfg):
    from . import model as vm

    leaves = vm.as_leaves(params)
    text = vm.embed_text(batch.token_ids, batch.text_mask, leaves)
    image = vm.embed_patches(batch.images, leaves, cfg)
    seq, mask = vm.assemble_sequence(text, image, batch.text_mask, leaves, cfg)
    pooled = vm.pool(vm.encoder_forward(seq, mask, leaves, cfg), leaves, mask, cfg.pooling)
    from . import tensor as tm

    x = tm.layer_norm(pooled, leaves["head.ln1.gamma"], leaves["head.ln1.beta"], cfg.eps)
    x = tm.linear(x, leaves["head.fc1.weight"], leaves["head.fc1.bias"])
    x = tm.layer_norm(x, leaves["head.ln2.gamma"], leaves["head.ln2.beta"], cfg.eps)
    return x.data


def model_check_case(cfg, seed: int = 0, batch_size: int = 2, max_tries: int = 64):
    """A random batch and parameter point for checking the full model.

    Points are redrawn until every head ReLU input sits at least
    ``KINK_MARGIN`` from zero, since a central difference straddling the kink
    measures a jump rather than a derivative.
    """
    from . import model as vm

    root = RngStream(seed, 0x6D6F64656C)
    for attempt in range(max_tries):
        r = root.derive(attempt)
        t = cfg.max_text_len
        ids = r.integers(2, cfg.vocab_size, size=(batch_size, t))
        mask = np.zeros((batch_size, t), dtype=np.int64)
        for b in range(batch_size):
            mask[b, : int(r.integers(1, t + 1))] = 1
        ids = np.where(mask == 1, ids, 0)
        images = r.uniform(-1.0, 1.0, size=(batch_size, *cfg.image_size, 3))
        labels = (np.arange(batch_size) % 2 == 0).astype(np.float64)
        batch = vm.Batch(images, ids, mask, labels, [f"g{b}" for b in range(batch_size)])
        params = vm.random_point(cfg, r.derive("params"))
        if np.abs(_relu_inputs(batch, params, cfg)).min() >= KINK_MARGIN:
            return batch, params
    raise EvaluationError("could not find a check point away from ReLU kinks")


def check_model_gradient(cfg, seed: int = 0, h: float = 1e-3, tol: float = 1e-4,
                         max_coords=16, directions: int = 2, batch_size: int = 2) -> GradCheckReport:
    """Gradient check of the mean BCE loss of the whole model in float64."""
    from . import model as vm

    batch, params = model_check_case(cfg, seed, batch_size)

    def loss_fn(leaves):
        return vm.model_forward(batch, leaves, cfg, train=False).loss

    return check_gradient(loss_fn, params, h=h, tol=tol, max_coords=max_coords,
                          directions=directions, seed=seed)


# ---------------------------------------------------------------------------
# per-op suite

GELU_STATIONARY = -0.7517915246935645  # argmin of x * Phi(x)


def _dims(r, count, low=1, high=8):
    return tuple(int(v) for v in r.integers(low, high + 1, size=count))


def _away_from_zero(r, shape, margin=0.05):
    mag = r.uniform(margin, 2.0, size=shape)
    return np.where(r.random(shape) < 0.5, -mag, mag)


def op_cases(seed: int) -> dict:
    """Random small instances of every differentiable op: name -> (forward, params).

    ``forward`` maps a dict of Tensors to the op output; shapes are at most 8
    per axis. ReLU inputs keep a margin from the kink.
    """
    from . import tensor as tm

    root = RngStream(seed, 0x6F7073)
    cases = {}

    def add_case(name, fn, **arrays):
        cases[name] = (fn, arrays)

    r = root.derive("elementwise")
    m, n = _dims(r, 2)
    for name, op in (("add", tm.add), ("sub", tm.sub), ("mul", tm.mul)):
        add_case(name, lambda p, op=op: op(p["a"], p["b"]), a=r.normal(size=(m, n)), b=r.normal(size=(m, n)))
    add_case("scale", lambda p: tm.scale(p["a"], 1.7), a=r.normal(size=(m, n)))
    add_case("sum_all", lambda p: tm.sum_all(p["a"]), a=r.normal(size=(m, n)))
    add_case("mean_all", lambda p: tm.mean_all(p["a"]), a=r.normal(size=(m, n)))

    r = root.derive("linear")
    b, m, k, n = _dims(r, 4)
    add_case("add_bias", lambda p: tm.add_bias(p["x"], p["bias"]), x=r.normal(size=(b, m, n)), bias=r.normal(size=n))
    add_case("matmul", lambda p: tm.matmul(p["a"], p["b"]), a=r.normal(size=(m, k)), b=r.normal(size=(k, n)))
    add_case("matmul_shared", lambda p: tm.matmul(p["a"], p["w"]), a=r.normal(size=(b, m, k)), w=r.normal(size=(k, n)))
    add_case("matmul_batched", lambda p: tm.matmul(p["a"], p["b"]),
             a=r.normal(size=(b, m, k)), b=r.normal(size=(b, k, n)))
    add_case("linear", lambda p: tm.linear(p["x"], p["w"], p["bias"]),
             x=r.normal(size=(b, m, k)), w=r.normal(size=(k, n)), bias=r.normal(size=n))

    r = root.derive("norm")
    (m,), (d,) = _dims(r, 1), _dims(r, 1, low=3)
    # truncation error relative to the gradient scales as (h / row std)^2
    x = r.normal(0.0, 3.0, size=(m, d))
    while (x.var(axis=-1) < 1.0).any():
        x = r.normal(0.0, 3.0, size=(m, d))
    add_case("layer_norm", lambda p: tm.layer_norm(p["x"], p["gamma"], p["beta"], 1e-5),
             x=x, gamma=r.normal(size=d), beta=r.normal(size=d))

    r = root.derive("softmax")
    b, h, s = _dims(r, 3)
    key_mask = (r.random((b, s)) < 0.7).astype(np.int64)
    key_mask[:, 0] = 1
    add_case("softmax", lambda p: tm.softmax(p["x"]), x=r.normal(size=(b, s)))
    add_case("softmax_masked", lambda p: tm.softmax(p["x"], key_mask=key_mask), x=r.normal(size=(b, h, s, s)))

    r = root.derive("activations")
    shape = _dims(r, 2)
    add_case("relu", lambda p: tm.relu(p["x"]), x=_away_from_zero(r, shape))
    for name in ("sigmoid", "tanh"):
        add_case(name, lambda p, f=getattr(tm, name): f(p["x"]), x=r.normal(size=shape) * 2.0)
    # GELU: skip the flat tail and the stationary point, where derivatives vanish
    x = r.uniform(-4.0, 4.0, size=shape)
    while (np.abs(x - GELU_STATIONARY) < 0.05).any():
        x = r.uniform(-4.0, 4.0, size=shape)
    add_case("gelu", lambda p: tm.gelu(p["x"]), x=x)
    drop_seed = int(r.integers(0, 2**31))
    add_case("dropout", lambda p: tm.dropout(p["x"], 0.3, True, RngStream(drop_seed)), x=r.normal(size=shape))

    r = root.derive("layout")
    b, s, d = _dims(r, 3)
    add_case("reshape", lambda p: tm.reshape(p["x"], (s, b * d)), x=r.normal(size=(b, s, d)))
    add_case("transpose", lambda p: tm.transpose(p["x"], (2, 0, 1)), x=r.normal(size=(b, s, d)))
    s2 = _dims(r, 1)[0]
    add_case("concat", lambda p: tm.concat([p["a"], p["b"]], axis=1),
             a=r.normal(size=(b, s, d)), b=r.normal(size=(b, s2, d)))
    v = _dims(r, 1)[0]
    ids = r.integers(0, v, size=(b, s))
    add_case("embedding", lambda p: tm.embedding(p["table"], ids), table=r.normal(size=(v, d)))
    add_case("repeat_rows", lambda p: tm.repeat_rows(p["x"], b), x=r.normal(size=(s, d)))
    add_case("select", lambda p: tm.select(p["x"], s - 1, axis=1), x=r.normal(size=(b, s, d)))
    mask = (r.random((b, s)) < 0.6).astype(np.int64)
    mask[:, 0] = 1
    add_case("masked_mean", lambda p: tm.masked_mean(p["x"], mask), x=r.normal(size=(b, s, d)))
    labels = (r.random(b * s) < 0.5).astype(np.float64)
    add_case("bce_with_logits", lambda p: tm.bce_with_logits(p["z"], labels), z=r.normal(size=b * s) * 3.0)
    return cases


def check_ops(seed: int, h: float = 1e-3, tol: float = 1e-4) -> dict:
    """Gradient-check every op of :func:`op_cases` on a random weighted-sum loss."""
    from . import tensor as tm

    reports = {}
    for name, (forward, arrays) in op_cases(seed).items():
        probe = forward({k: Tensor(v) for k, v in arrays.items()})
        weights = Tensor(RngStream(seed, 0x77).derive(name).normal(size=probe.shape))

        def loss_fn(p, forward=forward, weights=weights):
            return tm.sum_all(tm.mul(forward(p), weights))

        reports[name] = check_gradient(loss_fn, arrays, h=h, tol=tol)
    return reports
