"""Tiny numpy classifier over 192-channel band images.

Architecture: per-channel standardization -> conv(k1) -> ReLU -> conv(k2) ->
ReLU -> global average pool -> linear -> softmax. Convolutions use "same"
zero padding and stride 1. Gradients are derived by hand; the test suite
checks them against central finite differences.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, StructuralError
from .freq import BLOCK, N_SPATIAL, _band_basis, spatial_channels

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
CHECKPOINT_FORMAT = "freqrand-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 4
    in_channels: int = N_SPATIAL
    hidden1: int = 16
    hidden2: int = 16
    kernel1: int = 1
    kernel2: int = 3
    head_init_std: float = 0.01

    def param_count(self, in_channels: int | None = None) -> int:
        """Number of weights and biases, optionally for another input width."""
        c = self.in_channels if in_channels is None else in_channels
        return (self.hidden1 * (c * self.kernel1**2 + 1)
                + self.hidden2 * (self.hidden1 * self.kernel2**2 + 1)
                + self.n_classes * (self.hidden2 + 1))

    def input_overhead(self) -> float:
        """Extra parameters of the band-channel input over a plain RGB input, as a fraction."""
        rgb = self.param_count(3)
        return (self.param_count() - rgb) / rgb


@dataclass(frozen=True)
class AdamConfig:
    # a slow schedule suited to large pretrained networks; toy training overrides lr
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step_size: int = 5000
    gamma: float = 0.1


@dataclass
class ClassifierState:
    config: ModelConfig
    optimizer: AdamConfig
    params: dict
    norm_mean: np.ndarray
    norm_scale: np.ndarray
    moment1: dict = field(default_factory=dict)
    moment2: dict = field(default_factory=dict)
    step: int = 0
    seed: int = 0

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ClassifierState":
        return ClassifierState(
            config=self.config,
            optimizer=self.optimizer,
            params={k: v.copy() for k, v in self.params.items()},
            norm_mean=self.norm_mean.copy(),
            norm_scale=self.norm_scale.copy(),
            moment1={k: v.copy() for k, v in self.moment1.items()},
            moment2={k: v.copy() for k, v in self.moment2.items()},
            step=self.step,
            seed=self.seed,
        )


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    entropy: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


def init_state(config: ModelConfig = ModelConfig(), optimizer: AdamConfig = AdamConfig(), seed: int = 0) -> ClassifierState:
    """He-initialized convolutions, small-normal head, zero biases."""
    for k in (config.kernel1, config.kernel2):
        if k < 1 or k % 2 == 0:
            raise StructuralError(f"kernel sizes must be odd and positive, got {k}")
    rng = np.random.default_rng(seed)
    c0, c1, c2 = config.in_channels, config.hidden1, config.hidden2
    k1, k2 = config.kernel1, config.kernel2
    params = {
        "w1": rng.normal(0.0, np.sqrt(2.0 / (c0 * k1 * k1)), (c1, c0, k1, k1)),
        "b1": np.zeros(c1),
        "w2": rng.normal(0.0, np.sqrt(2.0 / (c1 * k2 * k2)), (c2, c1, k2, k2)),
        "b2": np.zeros(c2),
        "w3": rng.normal(0.0, config.head_init_std, (config.n_classes, c2)),
        "b3": np.zeros(config.n_classes),
    }
    return ClassifierState(
        config=config,
        optimizer=optimizer,
        params=params,
        norm_mean=np.zeros(c0),
        norm_scale=np.ones(c0),
        moment1={k: np.zeros_like(v) for k, v in params.items()},
        moment2={k: np.zeros_like(v) for k, v in params.items()},
        seed=seed,
    )


class ChannelStats:
    """Streaming per-channel mean/std accumulator for input standardization."""

    def __init__(self, n_channels: int = N_SPATIAL):
        self.count = 0
        self.total = np.zeros(n_channels)
        self.total_sq = np.zeros(n_channels)

    def update(self, x: np.ndarray) -> None:
        self.count += x.shape[0] * x.shape[2] * x.shape[3]
        self.total += x.sum(axis=(0, 2, 3))
        self.total_sq += np.einsum("nchw,nchw->c", x, x)

    def finalize(self, dead_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(mean, scale)``; channels that never vary get scale 0."""
        mean = self.total / self.count
        var = np.maximum(self.total_sq / self.count - mean**2, 0.0)
        std = np.sqrt(var)
        scale = np.where(std > dead_tol, 1.0 / np.where(std > dead_tol, std, 1.0), 0.0)
        return mean, scale


def normalize(state: ClassifierState, x: np.ndarray) -> np.ndarray:
    return (x - state.norm_mean[None, :, None, None]) * state.norm_scale[None, :, None, None]


def _conv(x, w, b):
    """'Same' convolution of a channels-last batch ``(N, H, W, C)``.

    All taps come out of a single matmul over the padded input; the output
    is then the sum of k*k shifted slices. Returns the padded input for the
    backward pass.
    """
    k = w.shape[-1]
    n, h, wd, c = x.shape
    o = w.shape[0]
    if k == 1:
        return (x.reshape(-1, c) @ w[:, :, 0, 0].T + b).reshape(n, h, wd, o), x
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    taps = xp.reshape(-1, c) @ w.transpose(1, 2, 3, 0).reshape(c, k * k * o)
    taps = taps.reshape(n, h + 2 * p, wd + 2 * p, k, k, o)
    out = np.broadcast_to(b, (n, h, wd, o)).copy()
    for i in range(k):
        for j in range(k):
            out += taps[:, i:i + h, j:j + wd, i, j]
    return out, xp


def _conv_backward(dout, xp, w, need_dx=True):
    """Gradients of :func:`_conv` given the upstream gradient and padded input."""
    k = w.shape[-1]
    n, h, wd, o = dout.shape
    c = xp.shape[-1]
    db = dout.sum(axis=(0, 1, 2))
    d2 = dout.reshape(-1, o)
    if k == 1:
        dw = (d2.T @ xp.reshape(-1, c))[:, :, None, None]
        dx = (d2 @ w[:, :, 0, 0]).reshape(n, h, wd, c) if need_dx else None
        return dx, dw, db
    dw = np.empty_like(w)
    for i in range(k):
        for j in range(k):
            tap = xp[:, i:i + h, j:j + wd].reshape(-1, c)
            dw[:, :, i, j] = d2.T @ tap
    dx = None
    if need_dx:
        p = k // 2
        spread = (d2 @ w.transpose(0, 2, 3, 1).reshape(o, k * k * c)).reshape(n, h, wd, k, k, c)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + h, j:j + wd] += spread[:, :, :, i, j]
        dx = dxp[:, p:p + h, p:p + wd]
    return dx, dw, db


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _prediction(logits):
    logp = _log_softmax(logits)
    probs = np.exp(logp)
    entropy = -(probs * logp).sum(axis=1)
    return Prediction(logits, probs, np.maximum(entropy, 0.0))


def _layer1_spatial(state, x):
    if x.ndim != 4 or x.shape[1] != state.config.in_channels:
        raise StructuralError(
            f"model expects (N, {state.config.in_channels}, H, W) input, got {x.shape}"
        )
    xn = np.ascontiguousarray(normalize(state, x).transpose(0, 2, 3, 1))
    z1, pad1 = _conv(xn, state.params["w1"], state.params["b1"])

    def grads(dz1):
        _, dw, db = _conv_backward(dz1, pad1, state.params["w1"], need_dx=False)
        return dw, db

    return z1, grads


def _layer1_coeffs(state, coeffs):
    """First layer straight from band coefficients (1x1 kernels only).

    Standardization, band-image synthesis and the 1x1 convolution are all
    linear, so they fold into two small contractions and the 192-channel
    tensor is never built.
    """
    if coeffs.ndim != 5 or coeffs.shape[1] * coeffs.shape[4] != state.config.in_channels:
        raise StructuralError(f"expected (N, 3, h, w, 64) coefficients, got {coeffs.shape}")
    n, c, nby, nbx, nb = coeffs.shape
    basis = _band_basis().reshape(nb, BLOCK * BLOCK)
    w = state.params["w1"][:, :, 0, 0]
    k = w.shape[0]
    scale = state.norm_scale.reshape(c, nb)
    ws = w.reshape(k, c, nb) * scale
    bias = state.params["b1"] - ws.reshape(k, -1) @ state.norm_mean
    flat = coeffs.transpose(0, 2, 3, 1, 4).reshape(n * nby * nbx, c * nb)
    proj = np.einsum("mci,oci->moi", flat.reshape(-1, c, nb), ws, optimize=True)
    pix = (proj @ basis).reshape(n, nby, nbx, k, BLOCK, BLOCK)
    z1 = pix.transpose(0, 1, 4, 2, 5, 3).reshape(n, nby * BLOCK, nbx * BLOCK, k) + bias

    def grads(dz1):
        dz = dz1.reshape(n, nby, BLOCK, nbx, BLOCK, k).transpose(0, 1, 3, 5, 2, 4)
        q = dz.reshape(-1, k, BLOCK * BLOCK) @ basis.T  # (blocks, o, band)
        raw = np.einsum("mci,moi->oci", flat.reshape(-1, c, nb), q, optimize=True)
        db = dz1.sum(axis=(0, 1, 2))
        mean = state.norm_mean.reshape(c, nb)
        dw = (raw - mean[None] * db[:, None, None]) * scale[None]
        return dw.reshape(k, c * nb, 1, 1), db

    return z1, grads


def _forward(state, x=None, coeffs=None):
    p = state.params
    if coeffs is not None and state.config.kernel1 == 1:
        z1, layer1_grads = _layer1_coeffs(state, coeffs)
    else:
        if coeffs is not None:
            x = spatial_channels(coeffs)
        z1, layer1_grads = _layer1_spatial(state, x)
    a1 = np.maximum(z1, 0.0)
    z2, pad2 = _conv(a1, p["w2"], p["b2"])
    a2 = np.maximum(z2, 0.0)
    pooled = a2.mean(axis=(1, 2))
    logits = pooled @ p["w3"].T + p["b3"]
    cache = (layer1_grads, z1, pad2, z2, pooled)
    return logits, cache


def forward(state: ClassifierState, x: np.ndarray) -> Prediction:
    """Class probabilities and per-sample entropy (nats) for a batch."""
    logits, _ = _forward(state, x=np.asarray(x, dtype=np.float64))
    return _prediction(logits)


def forward_coeffs(state: ClassifierState, coeffs: np.ndarray) -> Prediction:
    """:func:`forward` on ``spatial_channels(coeffs)``, computed without building it."""
    logits, _ = _forward(state, coeffs=np.asarray(coeffs, dtype=np.float64))
    return _prediction(logits)


def cross_entropy(pred: Prediction, labels) -> float:
    """Mean negative log-likelihood of the true classes (0-based labels)."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = _log_softmax(pred.logits)
    return float(-logp[np.arange(labels.size), labels].mean())


def backward(state: ClassifierState, x: np.ndarray, labels) -> tuple[float, dict]:
    """Cross-entropy loss and its gradient with respect to every parameter."""
    return _backward(state, labels, x=np.asarray(x, dtype=np.float64))


def backward_coeffs(state: ClassifierState, coeffs: np.ndarray, labels) -> tuple[float, dict]:
    """:func:`backward` on ``spatial_channels(coeffs)``."""
    return _backward(state, labels, coeffs=np.asarray(coeffs, dtype=np.float64))


def _backward(state, labels, x=None, coeffs=None):
    labels = np.asarray(labels, dtype=np.int64)
    logits, (layer1_grads, z1, pad2, z2, pooled) = _forward(state, x=x, coeffs=coeffs)
    n = logits.shape[0]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")

    p = state.params
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = {"w3": dlogits.T @ pooled, "b3": dlogits.sum(axis=0)}
    dpooled = dlogits @ p["w3"]
    hw = z2.shape[1] * z2.shape[2]
    dz2 = (dpooled[:, None, None, :] / hw) * (z2 > 0)
    da1, grads["w2"], grads["b2"] = _conv_backward(dz2, pad2, p["w2"])
    grads["w1"], grads["b1"] = layer1_grads(da1 * (z1 > 0))
    return loss, grads


def learning_rate(state: ClassifierState) -> float:
    """Step-decay schedule evaluated at the current step counter."""
    opt = state.optimizer
    return opt.lr * opt.gamma ** (state.step // opt.step_size)


def optimizer_step(state: ClassifierState, grads: dict) -> ClassifierState:
    """One Adam update in place; returns ``state`` for chaining."""
    opt = state.optimizer
    lr = learning_rate(state)
    t = state.step + 1
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    for name in PARAM_NAMES:
        g = grads[name]
        m = state.moment1[name]
        v = state.moment2[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        state.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    state.step = t
    return state


def add_grads(total: dict | None, grads: dict, weight: float = 1.0) -> dict:
    if total is None:
        return {k: weight * v for k, v in grads.items()}
    for k, v in grads.items():
        total[k] += weight * v
    return total


def save_checkpoint(state: ClassifierState, path, extra: dict | None = None) -> None:
    """Write an ``.npz`` with arrays plus a JSON ``meta`` record."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "model": asdict(state.config),
        "optimizer": asdict(state.optimizer),
        "step": state.step,
        "seed": state.seed,
        "n_params": state.n_params,
    }
    meta.update(extra or {})
    arrays = {"norm_mean": state.norm_mean, "norm_scale": state.norm_scale}
    for name in PARAM_NAMES:
        arrays[f"param_{name}"] = state.params[name]
        arrays[f"m1_{name}"] = state.moment1[name]
        arrays[f"m2_{name}"] = state.moment2[name]
    buf = io.BytesIO()
    np.savez(buf, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ClassifierState, dict]:
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data.files:
            raise ConfigError(f"{path}: not a checkpoint (no meta record)", "checkpoint")
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: unsupported format {meta.get('format')!r}", "checkpoint")
        state = ClassifierState(
            config=ModelConfig(**meta["model"]),
            optimizer=AdamConfig(**meta["optimizer"]),
            params={n: data[f"param_{n}"].copy() for n in PARAM_NAMES},
            norm_mean=data["norm_mean"].copy(),
            norm_scale=data["norm_scale"].copy(),
            moment1={n: data[f"m1_{n}"].copy() for n in PARAM_NAMES},
            moment2={n: data[f"m2_{n}"].copy() for n in PARAM_NAMES},
            step=int(meta["step"]),
            seed=int(meta["seed"]),
        )
    return state, meta
