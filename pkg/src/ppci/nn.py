"""Multi-layer perceptron with manual backpropagation and Adam.

Hidden layers use a rectifier, the output layer a softmax. Training
minimizes the mean per-sample-weighted cross-entropy, optionally with a
variance (vREx-style) or gradient-norm (IRMv1-style) penalty computed
per environment stratum.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .dgp import Dataset
from .errors import ConfigError, DataError, NumericalError

N_CLASSES = 10
OBJECTIVES = ("erm", "derm", "vrex", "irm")


@dataclass
class Predictor:
    layer_sizes: list
    weights: list
    biases: list

    def copy(self) -> "Predictor":
        return Predictor(list(self.layer_sizes),
                         [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


@dataclass
class TrainConfig:
    objective: str = "erm"
    penalty_lambda: float = 0.0
    environment_variable: str = "none"
    learning_rate: float = 0.0001
    epochs: int = 40
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.penalty_lambda < 0:
            raise ConfigError("penalty_lambda must be nonnegative")


def init_predictor(layer_sizes, seed: int) -> Predictor:
    """Fan-in scaled Gaussian initialization, deterministic given seed."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigError("need at least input and output layer sizes")
    if any(s < 1 for s in sizes):
        raise ConfigError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in),
                                  (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Predictor(sizes, weights, biases)


def _as_matrix(data, input_size: int) -> np.ndarray:
    if isinstance(data, Dataset):
        if data.x is None:
            raise DataError("dataset has no images to predict from")
        data = data.x
    X = np.asarray(data, dtype=np.float64)
    X = X.reshape(X.shape[0], -1)
    if X.shape[1] != input_size:
        raise DataError(
            f"input width {X.shape[1]} does not match model input {input_size}"
        )
    return X


def forward(p: Predictor, X) -> tuple[list, np.ndarray, np.ndarray]:
    """Returns (activations per layer, logits, softmax probabilities)."""
    a = _as_matrix(X, p.layer_sizes[0])
    acts = [a]
    for W, b in zip(p.weights[:-1], p.biases[:-1]):
        a = np.maximum(a @ W + b, 0.0)
        acts.append(a)
    logits = a @ p.weights[-1] + p.biases[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    return acts, logits, probs


def predict(p: Predictor, data) -> np.ndarray:
    """Argmax class per unit; ties break toward the smallest index."""
    _, _, probs = forward(p, data)
    return probs.argmax(axis=1)


def representation(p: Predictor, data) -> np.ndarray:
    """Penultimate-layer activations (the raw input for a linear model)."""
    acts, _, _ = forward(p, data)
    return acts[-1]


def _batch_ce(logits, probs, y):
    # per-sample cross-entropy via the log-sum-exp trick
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return lse - logits[np.arange(len(y)), y]


def loss_and_grads(p: Predictor, X, y, sample_weights, objective="erm",
                   penalty_lambda=0.0, env_ids=None):
    """Objective value and analytic parameter gradients on one batch."""
    acts, logits, probs = forward(p, X)
    y = np.asarray(y, dtype=np.int64)
    wts = np.asarray(sample_weights, dtype=np.float64)
    n = len(y)
    ce = _batch_ce(logits, probs, y)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1.0

    loss = float(np.mean(wts * ce))
    dlogits = wts[:, None] * (probs - onehot) / n

    if objective in ("vrex", "irm") and penalty_lambda > 0:
        if env_ids is None:
            raise ConfigError(f"{objective} requires environment ids")
        env_ids = np.asarray(env_ids)
        envs = np.unique(env_ids)
        if objective == "vrex":
            risks = np.array([np.mean(wts[env_ids == e] * ce[env_ids == e])
                              for e in envs])
            loss += penalty_lambda * float(np.var(risks))
            coeffs = penalty_lambda * 2.0 / len(envs) * (risks - risks.mean())
            for e, coef in zip(envs, coeffs):
                mask = env_ids == e
                dlogits[mask] += (coef / mask.sum()) * wts[mask, None] \
                    * (probs[mask] - onehot[mask])
        else:
            # IRMv1: squared gradient of the per-environment risk w.r.t. a
            # scalar multiplier on the logits, evaluated at 1
            s = (probs * logits).sum(axis=1)
            d = ((probs - onehot) * logits).sum(axis=1)
            for e in envs:
                mask = env_ids == e
                g = np.mean(wts[mask] * d[mask])
                loss += penalty_lambda * g * g
                dd = (probs[mask] - onehot[mask]) \
                    + probs[mask] * (logits[mask] - s[mask, None])
                dlogits[mask] += (2.0 * penalty_lambda * g / mask.sum()) \
                    * wts[mask, None] * dd

    if not np.isfinite(loss):
        raise NumericalError(f"non-finite training loss: {loss}")

    grads_w = [None] * len(p.weights)
    grads_b = [None] * len(p.biases)
    delta = dlogits
    for layer in range(len(p.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ p.weights[layer].T) * (acts[layer] > 0)
    return loss, grads_w, grads_b


def risk_by_environment(p: Predictor, data, y, sample_weights, env_ids) -> dict:
    """Mean weighted cross-entropy per environment stratum."""
    _, logits, probs = forward(p, data)
    y = np.asarray(y, dtype=np.int64)
    wts = np.asarray(sample_weights, dtype=np.float64)
    ce = _batch_ce(logits, probs, y)
    env_ids = np.asarray(env_ids)
    envs = np.unique(env_ids)
    if len(envs) < 1:
        raise DataError("need at least one environment stratum")
    return {e if not isinstance(e, np.generic) else e.item():
            float(np.mean(wts[env_ids == e] * ce[env_ids == e]))
            for e in envs}


def vrex_penalty(risks: dict) -> float:
    """Population variance of the per-environment risks."""
    return float(np.var(np.array(list(risks.values()))))


def train(init: Predictor, data, y, sample_weights, cfg: TrainConfig,
          env_ids=None) -> Predictor:
    """Adam on the configured objective; deterministic given cfg.seed."""
    X = _as_matrix(data, init.layer_sizes[0])
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    wts = np.asarray(sample_weights, dtype=np.float64)
    if wts.shape != (n,):
        raise DataError(f"need one weight per sample, got shape {wts.shape}")
    if (wts < 0).any():
        raise DataError("sample weights must be nonnegative")
    if cfg.objective in ("vrex", "irm"):
        if env_ids is None:
            raise ConfigError(f"{cfg.objective} requires environment ids")
        env_ids = np.asarray(env_ids)
        if any((env_ids == e).sum() == 0 for e in np.unique(env_ids)):
            raise DataError("empty environment stratum")

    p = init.copy()
    if cfg.epochs == 0:
        return p
    params = p.weights + p.biases
    m = [np.zeros_like(q) for q in params]
    v = [np.zeros_like(q) for q in params]
    step = 0
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gw, gb = loss_and_grads(
                p, X[idx], y[idx], wts[idx], cfg.objective,
                cfg.penalty_lambda,
                env_ids[idx] if env_ids is not None else None)
            step += 1
            grads = gw + gb
            bc1 = 1.0 - cfg.adam_beta1 ** step
            bc2 = 1.0 - cfg.adam_beta2 ** step
            for q, mq, vq, g in zip(params, m, v, grads):
                mq *= cfg.adam_beta1
                mq += (1.0 - cfg.adam_beta1) * g
                vq *= cfg.adam_beta2
                vq += (1.0 - cfg.adam_beta2) * g * g
                q -= cfg.learning_rate * (mq / bc1) \
                    / (np.sqrt(vq / bc2) + cfg.adam_eps)
    return p


def train_on_dataset(init: Predictor, ds: Dataset, sample_weights,
                     cfg: TrainConfig) -> Predictor:
    if not ds.labeled:
        raise DataError("training requires a labeled dataset")
    env_ids = None
    if cfg.objective in ("vrex", "irm"):
        if cfg.environment_variable == "none":
            raise ConfigError(
                f"{cfg.objective} requires an environment variable")
        env_ids = ds.column(cfg.environment_variable)
    return train(init, ds, ds.y, sample_weights, cfg, env_ids)


# ---------------------------------------------------------------------------
# Checkpoint file

_CKPT_MAGIC = b"PPNN"
_CKPT_VERSION = 1


def save_predictor(p: Predictor, path) -> None:
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<HB", _CKPT_VERSION, len(p.layer_sizes)))
        f.write(struct.pack(f"<{len(p.layer_sizes)}I", *p.layer_sizes))
        for W, b in zip(p.weights, p.biases):
            f.write(W.astype("<f4").tobytes())
            f.write(b.astype("<f4").tobytes())


def load_predictor(path) -> Predictor:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _CKPT_MAGIC:
        raise DataError(f"bad checkpoint magic in {path}")
    version, n_layers = struct.unpack_from("<HB", blob, 4)
    if version != _CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    sizes = list(struct.unpack_from(f"<{n_layers}I", blob, 7))
    off = 7 + 4 * n_layers
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = np.frombuffer(blob, "<f4", fan_in * fan_out, off)
        off += 4 * fan_in * fan_out
        b = np.frombuffer(blob, "<f4", fan_out, off)
        off += 4 * fan_out
        weights.append(W.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(blob):
        raise DataError(f"trailing bytes in checkpoint {path}")
    return Predictor(sizes, weights, biases)
