"""Span-classification probes over pooled vectors.

Two shapes: a bare linear layer, and an MLP with one ReLU hidden layer.
Training follows a fixed recipe: AdamW (decoupled weight decay, bias
correction), linear warmup then linear decay to zero, seed-shuffled
batches, inverted dropout, several replicas with the best picked by dev
score.  All arithmetic is float64 internally; model files store float32.

The gradient path lives in `loss_and_grads`, a pure function of
(params, config, batch), so it can be checked against finite differences.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from epb.corpus import TaskSchema
from epb.errors import DataError, NumericError
from epb.rng import substream

KINDS = ("linear", "mlp")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01


@dataclass(frozen=True)
class ProbeConfig:
    kind: str
    input_dim: int
    n_classes: int
    labeling: str = "single-label"
    hidden_dim: int = 1024
    dropout: float = 0.1
    epochs: int = 3
    batch_size: int = 16
    lr: float = 1e-3
    warmup: float = 0.1
    weight_decay: float = WEIGHT_DECAY
    replicas: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown probe kind {self.kind!r}")
        if self.input_dim <= 0 or self.n_classes <= 0 or self.hidden_dim <= 0:
            raise DataError("probe dimensions must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise DataError(f"dropout {self.dropout} outside [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.replicas < 1:
            raise DataError("epochs, batch size and replicas must be >= 1")
        if self.labeling not in ("single-label", "multi-label"):
            raise DataError(f"unknown labeling {self.labeling!r}")
        if not (0.0 <= self.warmup <= 1.0):
            raise DataError(f"warmup fraction {self.warmup} outside [0, 1]")

    @property
    def single_label(self) -> bool:
        return self.labeling == "single-label"

    @property
    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, c, h = self.input_dim, self.n_classes, self.hidden_dim
        if self.kind == "linear":
            return {"W": (d, c), "b": (c,)}
        return {"W1": (d, h), "b1": (h,), "W2": (h, c), "b2": (c,)}

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes.values())


@dataclass
class TrainingLog:
    step_losses: list[float] = field(default_factory=list)
    epoch_dev_scores: list[float] = field(default_factory=list)
    replica: int = 0
    threads: int = 1


@dataclass
class ProbeModel:
    config: ProbeConfig
    params: dict[str, np.ndarray]
    log: TrainingLog = field(default_factory=TrainingLog)

    @property
    def n_params(self) -> int:
        return self.config.n_params


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init(config: ProbeConfig, replica: int = 0) -> ProbeModel:
    """Glorot-uniform weights, zero biases, determined by (seed, replica)."""
    rng = substream(config.seed, "probe-init", replica)
    params: dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes.items():
        if len(shape) == 2:
            params[name] = _glorot(rng, shape)
        else:
            params[name] = np.zeros(shape, dtype=np.float64)
    return ProbeModel(config, params, TrainingLog(replica=replica))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(logits: np.ndarray) -> np.ndarray:
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    ez = np.exp(logits[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _dropout_mask(rng, shape, rate: float) -> np.ndarray:
    # inverted dropout: surviving units scaled by 1/(1-rate)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _logits(params, config: ProbeConfig, X, masks=None):
    """Forward pass; returns (logits, cache for backward)."""
    if config.kind == "linear":
        Xd = X * masks["input"] if masks else X
        return Xd @ params["W"] + params["b"], {"Xd": Xd}
    pre = X @ params["W1"] + params["b1"]
    h = np.maximum(pre, 0.0)
    hd = h * masks["hidden"] if masks else h
    logits = hd @ params["W2"] + params["b2"]
    return logits, {"pre": pre, "hd": hd, "mask": masks["hidden"] if masks else None}


def forward(
    model: ProbeModel,
    X: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Class probabilities for a batch of pooled vectors."""
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise NumericError("non-finite probe input")
    config = model.config
    masks = None
    if mode == "train" and config.dropout > 0.0:
        if rng is None:
            raise DataError("train-mode forward needs an rng for dropout")
        if config.kind == "linear":
            masks = {"input": _dropout_mask(rng, X.shape, config.dropout)}
        else:
            masks = {
                "hidden": _dropout_mask(
                    rng, (X.shape[0], config.hidden_dim), config.dropout
                )
            }
    logits, _ = _logits(model.params, config, X, masks)
    return softmax(logits) if config.single_label else sigmoid(logits)


def loss_and_grads(
    params: dict[str, np.ndarray],
    config: ProbeConfig,
    X: np.ndarray,
    Y: np.ndarray,
    masks: dict | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss (nats) and its gradients.

    Single-label: softmax cross-entropy against integer class indices.
    Multi-label: per-class binary cross-entropy against a 0/1 matrix,
    summed over classes.  Pure function; no parameter mutation.
    """
    n = X.shape[0]
    logits, cache = _logits(params, config, X, masks)
    if config.single_label:
        probs = softmax(logits)
        gold = probs[np.arange(n), Y]
        loss = float(-np.log(np.maximum(gold, 1e-300)).mean())
        dlogits = probs.copy()
        dlogits[np.arange(n), Y] -= 1.0
        dlogits /= n
    else:
        probs = sigmoid(logits)
        # stable BCE: log(1+exp(-|z|)) + max(z,0) - z*y, summed over classes
        z = logits
        per = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0) - z * Y
        loss = float(per.sum(axis=1).mean())
        dlogits = (probs - Y) / n

    grads: dict[str, np.ndarray] = {}
    if config.kind == "linear":
        grads["W"] = cache["Xd"].T @ dlogits
        grads["b"] = dlogits.sum(axis=0)
    else:
        grads["W2"] = cache["hd"].T @ dlogits
        grads["b2"] = dlogits.sum(axis=0)
        dh = dlogits @ params["W2"].T
        if cache["mask"] is not None:
            dh = dh * cache["mask"]
        dpre = dh * (cache["pre"] > 0.0)
        grads["W1"] = X.T @ dpre
        grads["b1"] = dpre.sum(axis=0)
    return loss, grads


def lr_at(step: int, total: int, warmup_frac: float, peak: float) -> float:
    """Learning rate at a 1-based step: linear 0 -> peak over the warmup
    fraction of steps, then linear decay to 0 at the final step."""
    w = warmup_frac * total
    if w > 0.0 and step <= w:
        return peak * step / w
    if total <= w:
        return peak
    return peak * (total - step) / (total - w)


class _AdamW:
    def __init__(self, params: dict[str, np.ndarray], weight_decay: float):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0
        self.wd = weight_decay

    def step(self, params, grads, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            params[k] -= lr * (update + self.wd * params[k])


def targets_matrix(examples, schema: TaskSchema) -> np.ndarray:
    """Gold encoding for training: (n,) class indices for single-label,
    (n, C) 0/1 floats for multi-label."""
    if schema.single_label:
        return np.array(
            [schema.class_index(ex.gold[0]) for ex in examples], dtype=np.int64
        )
    Y = np.zeros((len(examples), len(schema.labels)), dtype=np.float64)
    for i, ex in enumerate(examples):
        for lab in ex.gold:
            Y[i, schema.class_index(lab)] = 1.0
    return Y


def predict(model: ProbeModel, X: np.ndarray):
    """Single-label: argmax class indices (ties -> lowest index).
    Multi-label: boolean matrix of classes with probability > 0.5."""
    probs = forward(model, X, mode="eval")
    if model.config.single_label:
        return probs.argmax(axis=1)
    return probs > 0.5


def _dev_score(model: ProbeModel, X_dev, Y_dev) -> float:
    """Accuracy for single-label dev sets, micro-F1 for multi-label."""
    pred = predict(model, X_dev)
    if model.config.single_label:
        return float((pred == Y_dev).mean())
    gold = Y_dev > 0.5
    tp = int(np.logical_and(pred, gold).sum())
    fp = int(np.logical_and(pred, ~gold).sum())
    fn = int(np.logical_and(~pred, gold).sum())
    denom = 2 * tp + fp + fn
    return (2 * tp / denom) if denom else 0.0


def _train_one(config: ProbeConfig, replica: int, X, Y, X_dev, Y_dev) -> ProbeModel:
    model = init(config, replica)
    params = model.params
    n = X.shape[0]
    n_batches = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * n_batches
    opt = _AdamW(params, config.weight_decay)
    drop_rng = substream(config.seed, "probe-dropout", replica)
    step = 0
    for epoch in range(config.epochs):
        order = substream(config.seed, "probe-shuffle", replica, epoch).permutation(n)
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            Xb, Yb = X[idx], Y[idx]
            masks = None
            if config.dropout > 0.0:
                if config.kind == "linear":
                    masks = {"input": _dropout_mask(drop_rng, Xb.shape, config.dropout)}
                else:
                    masks = {
                        "hidden": _dropout_mask(
                            drop_rng, (Xb.shape[0], config.hidden_dim), config.dropout
                        )
                    }
            step += 1
            loss, grads = loss_and_grads(params, config, Xb, Yb, masks)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step}")
            opt.step(params, grads, lr_at(step, total_steps, config.warmup, config.lr))
            model.log.step_losses.append(loss)
        if X_dev is not None:
            model.log.epoch_dev_scores.append(_dev_score(model, X_dev, Y_dev))
    return model


def train(config: ProbeConfig, X_train, Y_train, X_dev=None, Y_dev=None) -> ProbeModel:
    """Train `config.replicas` probes and keep the best by dev score
    (ties -> lowest replica index).  With no dev set only replica 0 runs.
    """
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != config.input_dim:
        raise DataError(
            f"train matrix shaped {X.shape}, config expects dim {config.input_dim}"
        )
    if X.shape[0] == 0:
        raise DataError("empty training set")
    if not np.isfinite(X).all():
        raise NumericError("non-finite training input")
    Y = np.asarray(Y_train)
    if Y.shape[0] != X.shape[0]:
        raise DataError("train vectors and labels disagree in length")

    have_dev = X_dev is not None and len(X_dev) > 0
    Xd = np.asarray(X_dev, dtype=np.float64) if have_dev else None
    Yd = np.asarray(Y_dev) if have_dev else None

    if not have_dev:
        return _train_one(config, 0, X, Y, None, None)
    best: ProbeModel | None = None
    best_score = -1.0
    for replica in range(config.replicas):
        model = _train_one(config, replica, X, Y, Xd, Yd)
        score = model.log.epoch_dev_scores[-1]
        if score > best_score:
            best, best_score = model, score
    return best


# ---------------------------------------------------------------------------
# Model files: magic, u32 config-JSON length, config JSON, parameters in
# declaration order as little-endian f32.
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"EPM1\x00"


def save_model(model: ProbeModel, path) -> None:
    cfg = json.dumps(asdict(model.config), sort_keys=True, separators=(",", ":"))
    blob = cfg.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in model.config.param_shapes:
            f.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())


def load_model(path) -> ProbeModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise DataError(f"{path}: bad model magic")
    off = len(MODEL_MAGIC)
    (cfg_len,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        config = ProbeConfig(**json.loads(data[off : off + cfg_len]))
    except (json.JSONDecodeError, TypeError) as e:
        raise DataError(f"{path}: bad config block: {e}") from None
    off += cfg_len
    params: dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes.items():
        count = int(np.prod(shape))
        end = off + count * 4
        if end > len(data):
            raise DataError(f"{path}: truncated parameters at byte {off}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        params[name] = arr.reshape(shape).astype(np.float64)
        off = end
    if off != len(data):
        raise DataError(f"{path}: {len(data) - off} trailing bytes")
    return ProbeModel(config, params)
