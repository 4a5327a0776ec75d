"""A small 1-D CNN classifier written directly in numpy.

The network is the fixed stack

    Conv1D(16, 3) -> LeakyReLU -> MaxPool(2)
    Conv1D(32, 3) -> LeakyReLU -> MaxPool(2)
    Conv1D(64, 3) -> LeakyReLU -> MaxPool(2)
    Flatten -> Linear(16) -> LeakyReLU -> Linear(num_outputs) -> LogSoftmax

with valid convolutions (stride 1, no padding) and floor-mode pooling. The
backward pass is explicit so gradients with respect to the input are exact,
which is what every attack in :mod:`uwbpatch.attacks` relies on.

Internally activations use the ``(batch, length, channels)`` layout; weights
use the conventional ``(out, in, kernel)`` layout.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .signal import FRAME_LENGTH

CONV_CHANNELS = (16, 32, 64)
KERNEL_SIZE = 3
POOL = 2
HIDDEN_UNITS = 16
DEFAULT_OUTPUTS = 5
LAYER_NAMES = ("conv1", "conv2", "conv3", "fc1", "fc2")


class ShapeError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    """Loss or activations became non-finite during optimisation."""


@dataclass(frozen=True)
class ArchSpec:
    input_length: int = FRAME_LENGTH
    num_outputs: int = DEFAULT_OUTPUTS
    conv_channels: tuple = CONV_CHANNELS
    kernel_size: int = KERNEL_SIZE
    hidden_units: int = HIDDEN_UNITS

    def layer_shapes(self):
        """Output shape ``(channels, length)`` of every conv/pool stage, then the flatten width."""
        shapes = []
        length = self.input_length
        for ch in self.conv_channels:
            length = length - self.kernel_size + 1
            if length < 1:
                raise ShapeError(f"input length {self.input_length} too short for the conv stack")
            shapes.append(("conv", (ch, length)))
            length //= POOL
            if length < 1:
                raise ShapeError(f"input length {self.input_length} too short for the pool stack")
            shapes.append(("pool", (ch, length)))
        shapes.append(("flatten", (self.conv_channels[-1] * length,)))
        return shapes

    @property
    def flat_features(self) -> int:
        return self.layer_shapes()[-1][1][0]

    def param_shapes(self):
        shapes = {}
        c_in = 1
        for name, c_out in zip(LAYER_NAMES[:3], self.conv_channels):
            shapes[name] = ((c_out, c_in, self.kernel_size), (c_out,))
            c_in = c_out
        shapes["fc1"] = ((self.hidden_units, self.flat_features), (self.hidden_units,))
        shapes["fc2"] = ((self.num_outputs, self.hidden_units), (self.num_outputs,))
        return shapes

    def num_parameters(self) -> int:
        return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in self.param_shapes().values())

    def to_dict(self) -> dict:
        return {
            "input_length": self.input_length,
            "num_outputs": self.num_outputs,
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
            "hidden_units": self.hidden_units,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ArchSpec":
        return cls(
            input_length=int(data["input_length"]),
            num_outputs=int(data["num_outputs"]),
            conv_channels=tuple(int(c) for c in data["conv_channels"]),
            kernel_size=int(data["kernel_size"]),
            hidden_units=int(data["hidden_units"]),
        )


@dataclass
class ModelParams:
    """Weights and biases of every layer plus the LeakyReLU slope."""

    arch: ArchSpec
    weights: dict
    biases: dict
    leaky_slope: float = 0.01

    def __post_init__(self):
        for name, (w_shape, b_shape) in self.arch.param_shapes().items():
            w = np.asarray(self.weights[name], dtype=np.float64)
            b = np.asarray(self.biases[name], dtype=np.float64)
            if w.shape != w_shape or b.shape != b_shape:
                raise ShapeError(
                    f"{name}: expected weight {w_shape} / bias {b_shape}, got {w.shape} / {b.shape}"
                )
            self.weights[name] = w
            self.biases[name] = b

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.biases.items()},
            self.leaky_slope,
        )

    def flat(self):
        parts = []
        for name in LAYER_NAMES:
            parts.append(self.weights[name].ravel())
            parts.append(self.biases[name].ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, arch: ArchSpec, flat, leaky_slope: float = 0.01) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != arch.num_parameters():
            raise ShapeError(f"expected {arch.num_parameters()} parameters, got {flat.size}")
        weights, biases, pos = {}, {}, 0
        for name, (w_shape, b_shape) in arch.param_shapes().items():
            n = int(np.prod(w_shape))
            weights[name] = flat[pos : pos + n].reshape(w_shape).copy()
            pos += n
            n = int(np.prod(b_shape))
            biases[name] = flat[pos : pos + n].reshape(b_shape).copy()
            pos += n
        return cls(arch, weights, biases, leaky_slope)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights.values(), *self.biases.values()))


def init_params(arch: ArchSpec = ArchSpec(), seed: int = 0, leaky_slope: float = 0.01) -> ModelParams:
    """Uniform ``±1/sqrt(fan_in)`` initialisation for every weight and bias."""
    rng = np.random.default_rng(seed)
    weights, biases = {}, {}
    for name, (w_shape, b_shape) in arch.param_shapes().items():
        fan_in = int(np.prod(w_shape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        weights[name] = rng.uniform(-bound, bound, size=w_shape)
        biases[name] = rng.uniform(-bound, bound, size=b_shape)
    return ModelParams(arch, weights, biases, leaky_slope)


def zero_params(arch: ArchSpec = ArchSpec(), leaky_slope: float = 0.01) -> ModelParams:
    weights, biases = {}, {}
    for name, (w_shape, b_shape) in arch.param_shapes().items():
        weights[name] = np.zeros(w_shape)
        biases[name] = np.zeros(b_shape)
    return ModelParams(arch, weights, biases, leaky_slope)


# ---------------------------------------------------------------------------
# layer primitives; each forward returns (output, cache)


def conv1d_forward(x, w, b):
    """Valid 1-D convolution. ``x``: (B, L, Cin), ``w``: (Cout, Cin, K) -> (B, L-K+1, Cout)."""
    c_out, c_in, k = w.shape
    batch, length, _ = x.shape
    lo = length - k + 1
    # im2col with columns ordered (tap, channel)
    cols = np.concatenate([x[:, j : j + lo, :] for j in range(k)], axis=2)
    w_mat = w.transpose(2, 1, 0).reshape(k * c_in, c_out)
    out = (cols.reshape(batch * lo, k * c_in) @ w_mat).reshape(batch, lo, c_out) + b
    return out, (cols, x.shape)


def conv1d_backward(dout, w, cache, need_params=True):
    cols, x_shape = cache
    c_out, c_in, k = w.shape
    batch, lo, _ = dout.shape
    d2 = dout.reshape(batch * lo, c_out)
    w_mat = w.transpose(2, 1, 0).reshape(k * c_in, c_out)
    dcols = (d2 @ w_mat.T).reshape(batch, lo, k * c_in)
    dx = np.zeros(x_shape)
    for j in range(k):
        dx[:, j : j + lo, :] += dcols[:, :, j * c_in : (j + 1) * c_in]
    if not need_params:
        return dx, None, None
    dw = (cols.reshape(batch * lo, k * c_in).T @ d2).reshape(k, c_in, c_out).transpose(2, 1, 0)
    return dx, dw, d2.sum(axis=0)


def leaky_forward(x, slope):
    positive = x > 0
    return np.where(positive, x, slope * x), positive


def leaky_backward(dout, positive, slope):
    return np.where(positive, dout, slope * dout)


def maxpool_forward(x):
    """Non-overlapping max pooling of width 2 over axis 1; odd tails are dropped.

    Ties go to the first (lower-index) element.
    """
    lp = x.shape[1] // POOL
    left = x[:, 0 : 2 * lp : 2, :]
    right = x[:, 1 : 2 * lp : 2, :]
    first = left >= right
    return np.where(first, left, right), (first, x.shape)


def maxpool_backward(dout, cache):
    first, x_shape = cache
    lp = dout.shape[1]
    dx = np.zeros(x_shape)
    dx[:, 0 : 2 * lp : 2, :] = np.where(first, dout, 0.0)
    dx[:, 1 : 2 * lp : 2, :] = np.where(first, 0.0, dout)
    return dx


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# network


def _as_batch(params: ModelParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.input_length:
        raise ShapeError(
            f"expected input of length {params.arch.input_length}, got shape {np.shape(x)}"
        )
    return x, single


def _forward_cached(params: ModelParams, x):
    slope = params.leaky_slope
    caches = []
    h = x[:, :, None]
    for name in LAYER_NAMES[:3]:
        h, c_conv = conv1d_forward(h, params.weights[name], params.biases[name])
        # pooling commutes with the strictly increasing LeakyReLU; pooling first halves its cost
        h, c_pool = maxpool_forward(h)
        h, c_act = leaky_forward(h, slope)
        caches.append((c_conv, c_act, c_pool))
    pooled_shape = h.shape
    # channel-major flatten, matching the (channels, length) reading of the layer table
    flat = h.transpose(0, 2, 1).reshape(h.shape[0], -1)
    z1 = flat @ params.weights["fc1"].T + params.biases["fc1"]
    a1, c_a1 = leaky_forward(z1, slope)
    logits = a1 @ params.weights["fc2"].T + params.biases["fc2"]
    return log_softmax(logits), (caches, pooled_shape, flat, a1, c_a1)


def forward(params: ModelParams, x):
    """Log-probabilities for one signal ``(d,)`` or a batch ``(n, d)``."""
    xb, single = _as_batch(params, x)
    logp, _ = _forward_cached(params, xb)
    return logp[0] if single else logp


def intermediate_shapes(params: ModelParams, x):
    """Per-stage output shapes ``(channels, length)`` observed on an actual forward pass."""
    xb, _ = _as_batch(params, x)
    shapes = []
    h = xb[:, :, None]
    for name in LAYER_NAMES[:3]:
        h, _ = conv1d_forward(h, params.weights[name], params.biases[name])
        shapes.append(("conv", (h.shape[2], h.shape[1])))
        h, _ = maxpool_forward(h)
        shapes.append(("pool", (h.shape[2], h.shape[1])))
    shapes.append(("flatten", (h.shape[1] * h.shape[2],)))
    return shapes


def predict(params: ModelParams, x):
    return np.argmax(forward(params, x), axis=-1)


def _backward(params: ModelParams, logp, y, cache, need_params: bool):
    caches, pooled_shape, flat, a1, c_a1 = cache
    slope = params.leaky_slope
    batch = logp.shape[0]
    dlogits = np.exp(logp)
    dlogits[np.arange(batch), y] -= 1.0
    grads = {}
    if need_params:
        grads["fc2"] = (dlogits.T @ a1, dlogits.sum(axis=0))
    da1 = dlogits @ params.weights["fc2"]
    dz1 = leaky_backward(da1, c_a1, slope)
    if need_params:
        grads["fc1"] = (dz1.T @ flat, dz1.sum(axis=0))
    dflat = dz1 @ params.weights["fc1"]
    b, length, ch = pooled_shape
    dh = dflat.reshape(b, ch, length).transpose(0, 2, 1)
    for name, (c_conv, c_act, c_pool) in zip(LAYER_NAMES[2::-1], caches[::-1]):
        dh = leaky_backward(dh, c_act, slope)
        dh = maxpool_backward(dh, c_pool)
        dh, dw, db = conv1d_backward(dh, params.weights[name], c_conv, need_params)
        if need_params:
            grads[name] = (dw, db)
    return dh[:, :, 0], grads


def _nll(logp, y):
    return -logp[np.arange(logp.shape[0]), y]


def _check_labels(params, y, batch):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size == 1 and batch > 1:
        y = np.full(batch, int(y[0]))
    if y.size != batch:
        raise ShapeError(f"got {y.size} labels for {batch} signals")
    if np.any(y < 0) or np.any(y >= params.arch.num_outputs):
        raise ValueError(f"labels must be in [0, {params.arch.num_outputs})")
    return y


def loss_and_input_gradient(params: ModelParams, x, y):
    """Negative log-likelihood of ``y`` and its exact gradient with respect to ``x``.

    For a batch the loss and gradient are returned per signal (no averaging),
    so row ``i`` of the gradient is the gradient of sample ``i``'s own loss.
    """
    xb, single = _as_batch(params, x)
    y = _check_labels(params, y, xb.shape[0])
    logp, cache = _forward_cached(params, xb)
    loss = _nll(logp, y)
    if not np.all(np.isfinite(loss)):
        raise FloatingPointError("non-finite activations in forward pass")
    dx, _ = _backward(params, logp, y, cache, need_params=False)
    if single:
        return float(loss[0]), dx[0]
    return loss, dx


def loss_and_param_gradients(params: ModelParams, x, y):
    """Mean NLL over the batch and its gradient for every weight and bias."""
    xb, _ = _as_batch(params, x)
    y = _check_labels(params, y, xb.shape[0])
    logp, cache = _forward_cached(params, xb)
    loss = _nll(logp, y)
    _, grads = _backward(params, logp, y, cache, need_params=True)
    scale = 1.0 / xb.shape[0]
    grads = {k: (dw * scale, db * scale) for k, (dw, db) in grads.items()}
    return float(loss.mean()), grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate, batch_size must be positive and epochs non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            raise ValueError("invalid Adam hyper-parameters")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class Adam:
    """Adam over a :class:`ModelParams`, updating it in place."""

    def __init__(self, params: ModelParams, lr, beta1, beta2, eps):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: (np.zeros_like(params.weights[k]), np.zeros_like(params.biases[k])) for k in LAYER_NAMES}
        self.v = {k: (np.zeros_like(params.weights[k]), np.zeros_like(params.biases[k])) for k in LAYER_NAMES}

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for name in LAYER_NAMES:
            for i, target in enumerate((self.params.weights, self.params.biases)):
                g = grads[name][i]
                m = self.m[name][i]
                v = self.v[name][i]
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                target[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)


def iterate_minibatches(n: int, batch_size: int, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(X, y, config: TrainConfig = TrainConfig(), arch: ArchSpec | None = None,
          params: ModelParams | None = None, X_test=None, y_test=None, batch_grad=None,
          verbose: bool = False):
    """Fit the CNN with Adam on the mean negative log-likelihood.

    Parameters
    ----------
    X, y : training signals ``(n, d)`` and integer labels.
    config : optimiser settings.
    arch, params : architecture for a fresh initialisation, or parameters to
        continue from (copied, never modified in place).
    X_test, y_test : optional held-out set; accuracy is recorded per epoch.
    batch_grad : optional ``(params, Xb, yb, rng) -> (loss, grads)`` hook that
        replaces the plain minibatch gradient (used by adversarial training).

    Returns
    -------
    (ModelParams, TrainHistory)
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set must be a non-empty (n, d) array")
    if X.shape[0] != y.shape[0]:
        raise ShapeError("X and y disagree on the number of samples")
    if params is None:
        arch = arch or ArchSpec(input_length=X.shape[1])
        params = init_params(arch, seed=config.seed)
    else:
        params = params.copy()
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    history = TrainHistory()
    step_fn = batch_grad or (lambda p, xb, yb, _rng: loss_and_param_gradients(p, xb, yb))
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in iterate_minibatches(X.shape[0], config.batch_size, rng):
            loss, grads = step_fn(params, X[idx], y[idx], rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, step {opt.t}; "
                    f"lr={config.learning_rate}, batch_size={config.batch_size}"
                )
            opt.step(grads)
            total += loss * len(idx)
            count += len(idx)
        history.train_loss.append(total / count)
        if X_test is not None:
            history.test_accuracy.append(accuracy(params, X_test, y_test))
        if verbose:
            acc = f" test_acc={history.test_accuracy[-1]:.4f}" if X_test is not None else ""
            print(f"epoch {epoch + 1}/{config.epochs} loss={history.train_loss[-1]:.5f}{acc}")
    if not params.is_finite():
        raise TrainingDivergedError("parameters are not finite after training")
    return params, history


def predict_batched(params: ModelParams, X, chunk: int = 512):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        return int(predict(params, X))
    out = np.empty(X.shape[0], dtype=np.int64)
    for start in range(0, X.shape[0], chunk):
        out[start : start + chunk] = predict(params, X[start : start + chunk])
    return out


def accuracy(params_or_predict, X, y) -> float:
    """Fraction of ``X`` classified as ``y``.

    ``params_or_predict`` is either :class:`ModelParams` or any callable
    mapping a batch of signals to predicted labels.
    """
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    if isinstance(params_or_predict, ModelParams):
        pred = predict_batched(params_or_predict, X)
    else:
        pred = np.asarray(params_or_predict(np.asarray(X, dtype=np.float64)))
    return float(np.mean(pred == y))


def success_rate(params_or_predict, X_perturbed, y) -> float:
    """Attack success rate: one minus accuracy on perturbed inputs."""
    return 1.0 - accuracy(params_or_predict, X_perturbed, y)


# ---------------------------------------------------------------------------
# checkpoint format
#
#   magic  b"UWBM"   4 bytes
#   version          uint16 LE
#   arch JSON length uint32 LE, followed by UTF-8 JSON of ArchSpec (+ leaky slope)
#   param count      uint64 LE
#   params           float64 LE, layer order conv1..fc2, weight then bias

MODEL_MAGIC = b"UWBM"
MODEL_VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


def save_params(params: ModelParams, path, train_config: TrainConfig | None = None):
    header = json.dumps({**params.arch.to_dict(), "leaky_slope": params.leaky_slope}, sort_keys=True).encode()
    flat = params.flat().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HI", MODEL_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.tobytes())
    if train_config is not None:
        with open(f"{path}.json", "w") as fh:
            json.dump({"train_config": train_config.to_dict()}, fh, indent=2, sort_keys=True)


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)

    def take(n, what):
        offset = buf.tell()
        chunk = buf.read(n)
        if len(chunk) != n:
            raise CheckpointError(f"truncated checkpoint while reading {what}", offset)
        return chunk

    if take(4, "magic") != MODEL_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)", 0)
    version, hlen = struct.unpack("<HI", take(6, "header"))
    if version != MODEL_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 4)
    offset = buf.tell()
    try:
        meta = json.loads(take(hlen, "architecture").decode())
        arch = ArchSpec.from_dict(meta)
        slope = float(meta.get("leaky_slope", 0.01))
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed architecture header: {exc}", offset) from exc
    (count,) = struct.unpack("<Q", take(8, "parameter count"))
    if count != arch.num_parameters():
        raise CheckpointError(
            f"parameter count {count} does not match architecture ({arch.num_parameters()})",
            buf.tell() - 8,
        )
    flat = np.frombuffer(take(8 * count, "parameters"), dtype="<f8").astype(np.float64)
    return ModelParams.from_flat(arch, flat, slope)
