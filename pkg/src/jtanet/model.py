"""Siamcoder (encoder) and decoder networks.

Both networks are seven-block stacks of 3x3 (transposed) convolutions with
batch normalisation.  The encoder maps a (B, 64, 64, 3) patch batch to a
(B, EL) embedding, halving the spatial size after each of the first six
blocks; the decoder mirrors it with bilinear upsampling and finishes with
a tanh so reconstructions lie in (-1, 1).

Channel widths follow the reference architecture; ``channel_scale`` shrinks
every hidden width by a common factor for desk-scale runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import ShapeError

ENCODER_WIDTHS = (64, 128, 256, 512, 1024, 1024)
DECODER_WIDTHS = (1024, 1024, 512, 256, 128, 64)
EMBEDDING_LENGTHS = (2, 4, 8, 16, 32, 64, 128, 256, 512, 1024)
N_BLOCKS = 7


@dataclass(frozen=True)
class ModelConfig:
    embedding_len: int = 512
    input_side: int = 64
    channel_scale: float = 1.0

    def __post_init__(self):
        if self.embedding_len < 1:
            raise ValueError("embedding_len must be positive")
        if self.channel_scale <= 0:
            raise ValueError("channel_scale must be positive")
        if self.input_side != 64:
            # six 2x2 poolings must reduce the patch to a single 1x1xEL vector
            raise ValueError(f"input_side must be 64, got {self.input_side}")

    def width(self, c: int) -> int:
        return max(1, int(round(c * self.channel_scale)))

    @property
    def encoder_channels(self) -> list[int]:
        """Output channels of encoder blocks 1..7."""
        return [self.width(c) for c in ENCODER_WIDTHS] + [self.embedding_len]

    @property
    def decoder_channels(self) -> list[int]:
        """Output channels of decoder blocks 1..7."""
        return [self.width(c) for c in DECODER_WIDTHS] + [3]

    def to_dict(self) -> dict:
        return {
            "embedding_len": self.embedding_len,
            "input_side": self.input_side,
            "channel_scale": self.channel_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(int(d["embedding_len"]), int(d["input_side"]), float(d["channel_scale"]))


@dataclass
class ModelParams:
    """Learnable weights plus batch-norm running statistics."""

    config: ModelConfig
    weights: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for group in (self.weights, self.buffers):
            for name in sorted(group):
                arr = np.ascontiguousarray(group[name])
                h.update(name.encode())
                h.update(arr.dtype.str.encode())
                h.update(str(arr.shape).encode())
                h.update(arr.tobytes())
        return h.hexdigest()


def layer_manifest(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) of every learnable tensor."""
    out = []
    cin = 3
    for i, cout in enumerate(config.encoder_channels, 1):
        out += [
            (f"enc{i}.conv", (cout, cin, 3, 3)),
            (f"enc{i}.bn.gamma", (cout,)),
            (f"enc{i}.bn.beta", (cout,)),
        ]
        cin = cout
    cin = config.embedding_len
    for i, cout in enumerate(config.decoder_channels, 1):
        # transposed-convolution kernels are stored (C_in, C_out, 3, 3)
        out += [
            (f"dec{i}.convt", (cin, cout, 3, 3)),
            (f"dec{i}.bn.gamma", (cout,)),
            (f"dec{i}.bn.beta", (cout,)),
        ]
        cin = cout
    return out


def init_gain(slope: float = L.LEAKY_SLOPE) -> float:
    return float(np.sqrt(2.0 / (1.0 + slope ** 2)))


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    return (rng.standard_normal(shape) * (init_gain() / np.sqrt(fan_in))).astype(dtype)


def init_params(config: ModelConfig, rng_seed: int = 0, dtype=np.float64) -> ModelParams:
    """He-normal kernels (fan-in, leaky-ReLU gain), unit gamma, zero beta."""
    rng = np.random.default_rng(rng_seed)
    weights, buffers = {}, {}
    for name, shape in layer_manifest(config):
        if name.endswith(".conv"):
            weights[name] = he_normal(rng, shape, shape[1] * 9, dtype)
        elif name.endswith(".convt"):
            # every output of a transposed conv sums C_in x 9 inputs
            weights[name] = he_normal(rng, shape, shape[0] * 9, dtype)
        elif name.endswith(".gamma"):
            weights[name] = np.ones(shape, dtype=dtype)
        else:
            weights[name] = np.zeros(shape, dtype=dtype)
            prefix = name[: -len(".beta")]
            buffers[prefix + ".running_mean"] = np.zeros(shape, dtype=dtype)
            buffers[prefix + ".running_var"] = np.ones(shape, dtype=dtype)
    return ModelParams(config, weights, buffers)


@dataclass
class ForwardCache:
    """Everything a backward pass needs, plus the layer shape trace."""

    mode: str
    blocks: list[dict] = field(default_factory=list)
    trace: list[tuple[str, str, tuple, tuple]] = field(default_factory=list)
    running: dict[str, np.ndarray] = field(default_factory=dict)


def _hwc(x_cbhw: np.ndarray) -> tuple[int, int, int]:
    c, _, h, w = x_cbhw.shape
    return (h, w, c)


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def _bn(params: ModelParams, prefix: str, x, mode, cache: ForwardCache):
    y, bnc = L.batchnorm_forward(
        x,
        params.weights[prefix + ".gamma"],
        params.weights[prefix + ".beta"],
        params.buffers[prefix + ".running_mean"],
        params.buffers[prefix + ".running_var"],
        mode=mode,
        channel_axis=0,
    )
    if mode == "train":
        cache.running[prefix + ".running_mean"] = bnc.running_mean
        cache.running[prefix + ".running_var"] = bnc.running_var
    return y, bnc


def siamcoder_forward(params: ModelParams, patches: np.ndarray, mode: str = "eval"):
    """Encode a (B, m, m, 3) patch batch into (B, EL) features.

    Returns ``(features, cache)``.  In train mode ``cache.running`` holds the
    updated batch-norm statistics; apply them with :func:`apply_running_stats`.
    """
    _check_mode(mode)
    cfg = params.config
    x = np.asarray(patches)
    if x.ndim != 4 or x.shape[1:] != (cfg.input_side, cfg.input_side, 3):
        raise ShapeError(
            f"expected patches of shape (B, {cfg.input_side}, {cfg.input_side}, 3), got {x.shape}"
        )
    L.check_finite(x, "patch batch")
    a = np.ascontiguousarray(x.transpose(3, 0, 1, 2), dtype=params.dtype)
    cache = ForwardCache(mode)
    for i in range(1, N_BLOCKS + 1):
        blk = {"a": a}
        w = params.weights[f"enc{i}.conv"]
        if w.shape[1] != a.shape[0]:
            raise ShapeError(f"enc{i}: kernel expects {w.shape[1]} channels, got {a.shape[0]}")
        z = L.conv_cbhw(a, w)
        cache.trace.append((f"enc{i}", "Conv", _hwc(a), _hwc(z)))
        y, blk["bn"] = _bn(params, f"enc{i}.bn", z, mode, cache)
        r = L.leaky_relu(y)
        blk["y"] = y
        cache.trace.append((f"enc{i}", "BatchNorm, LeakyReLu", _hwc(z), _hwc(r)))
        if i < N_BLOCKS:
            a, blk["idx"] = L.maxpool2x2(r)
            cache.trace.append((f"enc{i}", "MaxPool", _hwc(r), _hwc(a)))
        else:
            a = r
        cache.blocks.append(blk)
    features = a.reshape(a.shape[0], -1).T.copy()
    return features, cache


def siamcoder_backward(params: ModelParams, cache: ForwardCache, grad_features: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the encoder weights given d(loss)/d(features)."""
    grads = {}
    g = np.ascontiguousarray(grad_features.T).reshape(grad_features.shape[1], -1, 1, 1)
    for i in range(N_BLOCKS, 0, -1):
        blk = cache.blocks[i - 1]
        if i < N_BLOCKS:
            g = L.maxpool2x2_backward(blk["idx"], g)
        g = L.leaky_relu_backward(blk["y"], g)
        bg = L.batchnorm_backward(blk["bn"], g)
        grads[f"enc{i}.bn.gamma"] = bg.param_grads["gamma"]
        grads[f"enc{i}.bn.beta"] = bg.param_grads["beta"]
        g = bg.input_grad
        grads[f"enc{i}.conv"] = L.conv_weight_grad_cbhw(blk["a"], g)
        if i > 1:
            g = L.conv_adjoint_cbhw(g, params.weights[f"enc{i}.conv"])
    return grads


def decoder_forward(params: ModelParams, features: np.ndarray, mode: str = "eval"):
    """Decode (B, EL) features into (B, m, m, 3) reconstructions in (-1, 1).

    Returns ``(reconstructions, cache)``.
    """
    _check_mode(mode)
    cfg = params.config
    f = np.asarray(features)
    if f.ndim != 2 or f.shape[1] != cfg.embedding_len:
        raise ShapeError(f"expected features of shape (B, {cfg.embedding_len}), got {f.shape}")
    L.check_finite(f, "features")
    a = np.ascontiguousarray(f.T, dtype=params.dtype).reshape(f.shape[1], f.shape[0], 1, 1)
    cache = ForwardCache(mode)
    for i in range(1, N_BLOCKS + 1):
        blk = {"a": a}
        z = L.conv_adjoint_cbhw(a, params.weights[f"dec{i}.convt"])
        cache.trace.append((f"dec{i}", "ConvTranspose", _hwc(a), _hwc(z)))
        y, blk["bn"] = _bn(params, f"dec{i}.bn", z, mode, cache)
        if i < N_BLOCKS:
            r = L.leaky_relu(y)
            blk["y"] = y
            cache.trace.append((f"dec{i}", "BatchNorm, LeakyReLu", _hwc(z), _hwc(r)))
            a = L.upsample_bilinear_2x(r)
            cache.trace.append((f"dec{i}", "UpSample", _hwc(r), _hwc(a)))
        else:
            a = L.tanh(y)
            blk["out"] = a
            cache.trace.append((f"dec{i}", "BatchNorm, Tanh", _hwc(z), _hwc(a)))
        cache.blocks.append(blk)
    recon = np.ascontiguousarray(a.transpose(1, 2, 3, 0))
    return recon, cache


def decoder_backward(params: ModelParams, cache: ForwardCache, grad_recon: np.ndarray):
    """Returns ``(decoder weight grads, d(loss)/d(features))``."""
    grads = {}
    g = np.ascontiguousarray(grad_recon.transpose(3, 0, 1, 2))
    for i in range(N_BLOCKS, 0, -1):
        blk = cache.blocks[i - 1]
        if i == N_BLOCKS:
            g = L.tanh_backward(blk["out"], g)
        else:
            g = L.upsample_bilinear_2x_backward(g)
            g = L.leaky_relu_backward(blk["y"], g)
        bg = L.batchnorm_backward(blk["bn"], g)
        grads[f"dec{i}.bn.gamma"] = bg.param_grads["gamma"]
        grads[f"dec{i}.bn.beta"] = bg.param_grads["beta"]
        g = bg.input_grad
        w = params.weights[f"dec{i}.convt"]
        # convt(a) == conv_adjoint(a, w): weight grad swaps the roles of a and g
        grads[f"dec{i}.convt"] = L.conv_weight_grad_cbhw(g, blk["a"])
        g = L.conv_cbhw(g, w)
    grad_features = g.reshape(g.shape[0], -1).T.copy()
    return grads, grad_features


def apply_running_stats(params: ModelParams, cache: ForwardCache) -> None:
    for name, value in cache.running.items():
        params.buffers[name] = value
