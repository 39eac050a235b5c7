"""Minimal dense-network engine used by the simulator and baselines.

Architecture is fixed at two hidden layers with ReLU activations and a
softmax cross-entropy objective. All parameters live in one flat float64
vector so that client updates can be exchanged, scaled, and aggregated as
plain arrays. Layout, in order: W1 (in x h1, row-major), b1, W2 (h1 x h2),
b2, W3 (h2 x out), b3.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation, DataFormatError, TrainingDiverged

_EVAL_CHUNK = 4096


@dataclass(frozen=True)
class Model:
    """Immutable network state: layer sizes plus the flat parameter vector."""

    layer_dims: tuple[int, int, int, int]
    params: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) != 4 or any(d <= 0 for d in dims):
            raise ConfigurationError(f"layer_dims must be 4 positive ints, got {self.layer_dims}")
        params = np.asarray(self.params, dtype=np.float64)
        if params.ndim != 1 or params.size != param_count(dims):
            raise ConfigurationError(
                f"parameter vector has length {params.size}, expected {param_count(dims)}"
            )
        params = params.copy()
        params.flags.writeable = False
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "params", params)

    @property
    def num_params(self) -> int:
        return self.params.size


@dataclass(frozen=True)
class Batch:
    """A features/labels pair with matching first dimension."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ConfigurationError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ConfigurationError(
                f"labels shape {y.shape} does not match {x.shape[0]} feature rows"
            )
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))


def param_count(layer_dims) -> int:
    d0, d1, d2, d3 = layer_dims
    return d0 * d1 + d1 + d1 * d2 + d2 + d2 * d3 + d3


def _views(layer_dims, params):
    """Reshape the flat vector into (W1, b1, W2, b2, W3, b3) without copying."""
    d0, d1, d2, d3 = layer_dims
    sizes = [d0 * d1, d1, d1 * d2, d2, d2 * d3, d3]
    offs = np.cumsum([0] + sizes)
    w1 = params[offs[0]:offs[1]].reshape(d0, d1)
    b1 = params[offs[1]:offs[2]]
    w2 = params[offs[2]:offs[3]].reshape(d1, d2)
    b2 = params[offs[3]:offs[4]]
    w3 = params[offs[4]:offs[5]].reshape(d2, d3)
    b3 = params[offs[5]:offs[6]]
    return w1, b1, w2, b2, w3, b3


def init_model(layer_dims, seed: int) -> Model:
    """Build a model with uniform Glorot weights and zero biases.

    Each weight matrix is drawn from U(-a, a) with a = sqrt(6 / (fan_in +
    fan_out)), which keeps activation variance stable across layers.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) != 4:
        raise ConfigurationError(f"layer_dims must have 4 entries, got {layer_dims}")
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(dims))
    w1, b1, w2, b2, w3, b3 = _views(dims, params)
    for w in (w1, w2, w3):
        fan_in, fan_out = w.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w[:] = rng.uniform(-bound, bound, size=w.shape)
    return Model(dims, params)


def _forward_raw(layer_dims, params, x):
    w1, b1, w2, b2, w3, b3 = _views(layer_dims, params)
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    a2 = np.maximum(z2, 0.0)
    logits = a2 @ w3 + b3
    return z1, a1, z2, a2, logits


def forward(model: Model, batch: Batch) -> np.ndarray:
    """Return raw logits for a batch; softmax is applied only inside the loss."""
    if batch.features.shape[1] != model.layer_dims[0]:
        raise ConfigurationError(
            f"feature dim {batch.features.shape[1]} does not match input dim {model.layer_dims[0]}"
        )
    return _forward_raw(model.layer_dims, model.params, batch.features)[-1]


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def mean_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    log_p = _log_softmax(logits)
    return float(-log_p[np.arange(labels.shape[0]), labels].mean())


def loss_and_gradient(model_or_dims, params_or_x, x=None, y=None):
    """Mean cross-entropy loss and its gradient in the flat parameter layout.

    Callable either as loss_and_gradient(model, x, y) or with explicit
    (layer_dims, params, x, y); the latter avoids Model construction in
    inner training loops.
    """
    if isinstance(model_or_dims, Model):
        dims, params, x, y = model_or_dims.layer_dims, model_or_dims.params, params_or_x, x
    else:
        dims, params = model_or_dims, params_or_x
    n = x.shape[0]
    z1, a1, z2, a2, logits = _forward_raw(dims, params, x)
    log_p = _log_softmax(logits)
    loss = float(-log_p[np.arange(n), y].mean())

    d_logits = np.exp(log_p)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n

    w1, b1, w2, b2, w3, b3 = _views(dims, params)
    grad = np.empty_like(params)
    gw1, gb1, gw2, gb2, gw3, gb3 = _views(dims, grad)

    gw3[:] = a2.T @ d_logits
    gb3[:] = d_logits.sum(axis=0)
    d_a2 = d_logits @ w3.T
    d_z2 = d_a2 * (z2 > 0.0)
    gw2[:] = a1.T @ d_z2
    gb2[:] = d_z2.sum(axis=0)
    d_a1 = d_z2 @ w2.T
    d_z1 = d_a1 * (z1 > 0.0)
    gw1[:] = x.T @ d_z1
    gb1[:] = d_z1.sum(axis=0)
    return loss, grad


def train_epochs(model: Model, data, epochs: int, lr: float, batch_size: int,
                 rng_seed: int) -> Model:
    """Run plain mini-batch SGD and return the trained model.

    The caller's model is never mutated. Sample order is reshuffled once per
    epoch from a generator seeded with rng_seed, so equal seeds reproduce the
    exact trajectory. The final partial batch of each epoch is included.
    """
    trained, _ = train_epochs_tracked(model, data, epochs, lr, batch_size, rng_seed)
    return trained


def train_epochs_tracked(model: Model, data, epochs: int, lr: float, batch_size: int,
                         rng_seed: int) -> tuple[Model, np.ndarray]:
    """Like train_epochs but also returns the per-epoch mean training loss."""
    if epochs < 1:
        raise ConfigurationError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    x = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    if x.shape[1] != model.layer_dims[0]:
        raise ConfigurationError(
            f"feature dim {x.shape[1]} does not match input dim {model.layer_dims[0]}"
        )
    params = model.params.copy()
    rng = np.random.default_rng(rng_seed)
    epoch_losses = np.zeros(epochs)
    step = 0
    for ep in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            loss, grad = loss_and_gradient(model.layer_dims, params, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(step, loss)
            params -= lr * grad
            total += loss * idx.shape[0]
            step += 1
        epoch_losses[ep] = total / n
    return Model(model.layer_dims, params), epoch_losses


def evaluate(model: Model, data) -> tuple[float, float]:
    """Mean cross-entropy loss and top-1 accuracy over a dataset."""
    x = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, _EVAL_CHUNK):
        xs = x[start:start + _EVAL_CHUNK]
        ys = y[start:start + _EVAL_CHUNK]
        logits = _forward_raw(model.layer_dims, model.params, xs)[-1]
        log_p = _log_softmax(logits)
        loss_sum += float(-log_p[np.arange(ys.shape[0]), ys].sum())
        correct += int((logits.argmax(axis=1) == ys).sum())
    return loss_sum / n, correct / n


def aggregate(base: Model, deltas: list[np.ndarray], weights: list[float]) -> Model:
    """Apply a convex combination of parameter deltas to a base model.

    Weights must be nonnegative and sum to 1 within 1e-9. Accumulation order
    is canonicalized (sorted by weight, then by delta bytes) so the result
    does not depend on how the caller ordered the list.
    """
    if len(deltas) != len(weights):
        raise ContractViolation(
            f"{len(deltas)} deltas but {len(weights)} weights")
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise ContractViolation("aggregate needs at least one delta")
    if (w < 0).any():
        raise ContractViolation(f"negative aggregation weight in {weights}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ContractViolation(f"aggregation weights sum to {w.sum()!r}, not 1")
    arrs = []
    for d in deltas:
        a = np.asarray(d, dtype=np.float64)
        if a.shape != base.params.shape:
            raise ContractViolation(
                f"delta length {a.size} does not match model size {base.params.size}")
        arrs.append(a)
    order = sorted(range(len(arrs)), key=lambda i: (w[i], arrs[i].tobytes()))
    out = base.params.copy()
    for i in order:
        out += w[i] * arrs[i]
    return Model(base.layer_dims, out)


def save_model(model: Model, path) -> None:
    """Write a checkpoint: four little-endian uint32 layer dims, then the
    parameter vector as little-endian float64. Round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4I", *model.layer_dims))
        fh.write(model.params.astype("<f8", copy=False).tobytes())


def load_model(path) -> Model:
    """Read a checkpoint written by save_model."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise DataFormatError(f"checkpoint truncated at offset {len(blob)}: header needs 16 bytes")
    dims = struct.unpack("<4I", blob[:16])
    expected = 16 + 8 * param_count(dims)
    if len(blob) != expected:
        raise DataFormatError(
            f"checkpoint payload ends at offset {len(blob)}, expected {expected} "
            f"for layer dims {dims}")
    params = np.frombuffer(blob, dtype="<f8", offset=16).copy()
    return Model(dims, params)
