"""The residual patch scorer: architecture, forward passes, loss and gradients.

The network is a 12-conv-layer residual net (3x3 stem, five residual blocks of
two 3x3 convs, 1x1 two-class head). A valid average-pool over the final
feature map makes the patch classifier fully convolutional: applied to a
larger image it scores every patch-sized window at the output stride, so the
dense map at cell (i, j) equals the patch forward on the window starting at
(i*stride, j*stride).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from . import nn
from .errors import ConfigError, DataError, NumericalError


@dataclass(frozen=True)
class ScorerConfig:
    """Layer plan of the scorer.

    ``block_channels[i]`` / ``block_strides[i]`` give the width and the
    downsampling factor entering residual block i; the stem shares the first
    block's width.
    """

    patch_size: int = 128
    block_channels: tuple[int, ...] = (16, 32, 32, 64, 64)
    block_strides: tuple[int, ...] = (1, 2, 2, 2, 2)
    num_classes: int = 2

    def __post_init__(self):
        if len(self.block_channels) != len(self.block_strides) or not self.block_channels:
            raise ConfigError("block_channels and block_strides must be non-empty "
                              "and the same length")
        if any(s not in (1, 2) for s in self.block_strides):
            raise ConfigError("block strides must be 1 or 2")
        if any(c <= 0 for c in self.block_channels):
            raise ConfigError("block channels must be positive")
        if self.num_classes != 2:
            raise ConfigError("the scorer head emits exactly 2 channels")
        if self.patch_size % self.output_stride != 0:
            raise ConfigError(f"patch_size {self.patch_size} not divisible by "
                              f"output stride {self.output_stride}")
        if self.pool_size < 1:
            raise ConfigError("patch_size smaller than the output stride")
        if self.receptive_field < self.patch_size:
            raise ConfigError(f"receptive field {self.receptive_field} smaller than "
                              f"patch size {self.patch_size}")

    @classmethod
    def reference(cls) -> "ScorerConfig":
        return cls()

    @classmethod
    def desk_scale(cls) -> "ScorerConfig":
        """Reduced plan for CPU-scale runs: patch 64, half channels, stride 8."""
        return cls(patch_size=64, block_channels=(8, 16, 16, 32, 32),
                   block_strides=(2, 2, 2, 1, 1))

    @property
    def output_stride(self) -> int:
        return prod(self.block_strides)

    @property
    def pool_size(self) -> int:
        return self.patch_size // self.output_stride

    @property
    def conv_reach(self) -> int:
        """One-sided input reach of a feature-map cell through the conv tower."""
        reach, stride = 0, 1
        reach += stride  # stem
        for s in self.block_strides:
            reach += stride          # first block conv (reach at incoming stride)
            stride *= s
            reach += stride          # second block conv
        return reach

    @property
    def receptive_field(self) -> int:
        return 2 * self.conv_reach + 1 + (self.pool_size - 1) * self.output_stride

    @property
    def rf_radius(self) -> int:
        """Max distance from a scored window's center to any pixel it reads."""
        return self.patch_size // 2 + self.conv_reach

    def to_dict(self) -> dict:
        return {"patch_size": self.patch_size,
                "block_channels": list(self.block_channels),
                "block_strides": list(self.block_strides),
                "num_classes": self.num_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerConfig":
        return cls(patch_size=int(d["patch_size"]),
                   block_channels=tuple(int(c) for c in d["block_channels"]),
                   block_strides=tuple(int(s) for s in d["block_strides"]),
                   num_classes=int(d.get("num_classes", 2)))


@dataclass
class ProbabilityMap:
    """Dense foreground probabilities on a regular pixel grid.

    Cell (i, j) sits at image pixel (origin[0] + i*stride, origin[1] + j*stride).
    """

    values: np.ndarray
    stride: int
    origin: tuple[int, int]


def is_buffer(name: str) -> bool:
    return name.endswith(".rmean") or name.endswith(".rvar")


def trainable_names(params: dict[str, np.ndarray]) -> list[str]:
    return [k for k in params if not is_buffer(k)]


def _bn_params(prefix: str, channels: int, dtype) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.gamma": np.ones(channels, dtype=dtype),
        f"{prefix}.beta": np.zeros(channels, dtype=dtype),
        f"{prefix}.rmean": np.zeros(channels, dtype=dtype),
        f"{prefix}.rvar": np.ones(channels, dtype=dtype),
    }


def init_params(config: ScorerConfig, seed: int,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """He fan-in initialization; normalization starts at identity.

    Convolutions carry no separate bias: each is followed by a normalization
    shift, which is initialized to zero. The head keeps an explicit zero bias.
    """
    rng = np.random.Generator(np.random.PCG64(seed))

    def he_conv(cout, k, cin):
        std = np.sqrt(2.0 / (k * k * cin))
        return (rng.standard_normal((cout, k, k, cin)) * std).astype(dtype)

    params: dict[str, np.ndarray] = {}
    ch = config.block_channels
    params["stem.w"] = he_conv(ch[0], 3, 3)
    params.update(_bn_params("stem.bn", ch[0], dtype))
    cin = ch[0]
    for i, (cout, _) in enumerate(zip(ch, config.block_strides), start=1):
        params[f"block{i}.conv1.w"] = he_conv(cout, 3, cin)
        params.update(_bn_params(f"block{i}.bn1", cout, dtype))
        params[f"block{i}.conv2.w"] = he_conv(cout, 3, cout)
        params.update(_bn_params(f"block{i}.bn2", cout, dtype))
        cin = cout
    params["head.w"] = he_conv(config.num_classes, 1, cin)
    params["head.b"] = np.zeros(config.num_classes, dtype=dtype)
    return params


def normalize_patches(pixels: np.ndarray) -> np.ndarray:
    """Map 8-bit RGB to the network input range [-0.5, 0.5]."""
    return (pixels.astype(np.float32) / 255.0) - 0.5


def _run_bn(params, prefix, x, train, caches, new_buffers):
    out, cache, updated = nn.batchnorm_forward(
        x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"],
        params[f"{prefix}.rmean"], params[f"{prefix}.rvar"], train)
    if train:
        caches[prefix] = cache
        new_buffers[f"{prefix}.rmean"] = updated[0]
        new_buffers[f"{prefix}.rvar"] = updated[1]
    return out


def _forward(params: dict, x: np.ndarray, config: ScorerConfig, train: bool):
    """Shared forward pass; returns (logit map NHWC, caches, new buffers)."""
    caches: dict = {}
    new_buffers: dict = {}

    a, caches["stem.w"] = nn.conv3x3_forward(x, params["stem.w"], 1)
    a = _run_bn(params, "stem.bn", a, train, caches, new_buffers)
    a, caches["stem.relu"] = nn.relu_forward(a)

    for i, (cout, stride) in enumerate(zip(config.block_channels,
                                           config.block_strides), start=1):
        identity, caches[f"block{i}.shortcut"] = nn.shortcut_forward(a, stride, cout)
        h, caches[f"block{i}.conv1.w"] = nn.conv3x3_forward(a, params[f"block{i}.conv1.w"], stride)
        h = _run_bn(params, f"block{i}.bn1", h, train, caches, new_buffers)
        h, caches[f"block{i}.relu1"] = nn.relu_forward(h)
        h, caches[f"block{i}.conv2.w"] = nn.conv3x3_forward(h, params[f"block{i}.conv2.w"], 1)
        h = _run_bn(params, f"block{i}.bn2", h, train, caches, new_buffers)
        a, caches[f"block{i}.relu2"] = nn.relu_forward(h + identity)

    a, caches["pool"] = nn.avgpool_forward(a, config.pool_size)
    logits, caches["head"] = nn.conv1x1_forward(a, params["head.w"], params["head.b"])
    return logits, caches, new_buffers


def _backward(params: dict, dlogits: np.ndarray, config: ScorerConfig, caches: dict):
    grads: dict[str, np.ndarray] = {}
    da, grads["head.w"], grads["head.b"] = nn.conv1x1_backward(dlogits, caches["head"])
    da = nn.avgpool_backward(da, caches["pool"])

    for i in range(len(config.block_channels), 0, -1):
        dsum = nn.relu_backward(da, caches[f"block{i}.relu2"])
        didentity = nn.shortcut_backward(dsum, caches[f"block{i}.shortcut"])
        dh = nn.batchnorm_backward(dsum, caches[f"block{i}.bn2"])
        dh, grads[f"block{i}.bn2.gamma"], grads[f"block{i}.bn2.beta"] = dh
        dh, grads[f"block{i}.conv2.w"] = nn.conv3x3_backward(dh, caches[f"block{i}.conv2.w"])
        dh = nn.relu_backward(dh, caches[f"block{i}.relu1"])
        dh, grads[f"block{i}.bn1.gamma"], grads[f"block{i}.bn1.beta"] = \
            nn.batchnorm_backward(dh, caches[f"block{i}.bn1"])
        dh, grads[f"block{i}.conv1.w"] = nn.conv3x3_backward(dh, caches[f"block{i}.conv1.w"])
        da = dh + didentity

    da = nn.relu_backward(da, caches["stem.relu"])
    da, grads["stem.bn.gamma"], grads["stem.bn.beta"] = \
        nn.batchnorm_backward(da, caches["stem.bn"])
    _, grads["stem.w"] = nn.conv3x3_backward(da, caches["stem.w"])
    return grads


def forward_patch(params: dict, batch: np.ndarray, config: ScorerConfig,
                  train: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Score a batch of patches; returns (logits (N, 2), probabilities (N, 2))."""
    if batch.ndim != 4 or batch.shape[1] != config.patch_size \
            or batch.shape[2] != config.patch_size or batch.shape[3] != 3:
        raise DataError(f"expected (N, {config.patch_size}, {config.patch_size}, 3) "
                        f"batch, got {batch.shape}")
    logits, _, _ = _forward(params, batch, config, train)
    logits = logits.reshape(batch.shape[0], config.num_classes)
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite activations in patch forward")
    return logits, nn.softmax(logits)


def forward_dense(params: dict, image: np.ndarray,
                  config: ScorerConfig) -> ProbabilityMap:
    """Score every patch-sized window of a normalized image at the output stride."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    p, s = config.patch_size, config.output_stride
    if h < p or w < p:
        raise DataError(f"image {h}x{w} smaller than patch size {p}")
    logits, _, _ = _forward(params, image[None], config, train=False)
    nr = (h - p) // s + 1
    nc = (w - p) // s + 1
    logits = logits[0, :nr, :nc, :]
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite activations in dense forward")
    probs = nn.softmax(logits)[..., 1].astype(np.float32)
    return ProbabilityMap(probs, s, (p // 2, p // 2))


def loss_and_grad(params: dict, batch: np.ndarray, labels: np.ndarray,
                  config: ScorerConfig):
    """Mean cross-entropy and gradients in training mode.

    Returns (loss, grads, new_buffers); ``new_buffers`` holds the running
    normalization statistics after this batch (momentum 0.9).
    """
    logits, caches, new_buffers = _forward(params, batch, config, train=True)
    logits = logits.reshape(batch.shape[0], config.num_classes)
    loss, dlogits, _ = nn.softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NumericalError("non-finite training loss")
    dlogits = dlogits.reshape(batch.shape[0], 1, 1, config.num_classes)
    grads = _backward(params, dlogits, config, caches)
    return loss, grads, new_buffers
