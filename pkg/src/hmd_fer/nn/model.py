"""VGG-style classifier assembled from the kernels in :mod:`hmd_fer.nn.ops`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    convs: int = 2
    kernel: int = 3
    pad: int = 1
    stride: int = 1
    dropout: float = 0.25


@dataclass(frozen=True)
class DenseSpec:
    width: int
    dropout: float = 0.5


@dataclass(frozen=True)
class ArchitecturePreset:
    name: str
    blocks: tuple[ConvBlock, ...]
    classifier: tuple[DenseSpec, ...]
    num_classes: int = 7
    in_channels: int = 1
    input_size: int = 48
    batchnorm: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def feature_shape(self) -> tuple[int, int, int]:
        """Shape ``(C, H, W)`` of the last block's output."""
        size = self.input_size
        for blk in self.blocks:
            for _ in range(blk.convs):
                size = ops.conv_output_size(size, blk.kernel, blk.pad, blk.stride)
            if size % 2:
                raise ValueError(f"preset {self.name}: odd extent {size} before pooling")
            size //= 2
        if size < 1:
            raise ValueError(f"preset {self.name}: input {self.input_size} too small")
        return self.blocks[-1].out_channels, size, size

    def flat_width(self) -> int:
        c, h, w = self.feature_shape()
        return c * h * w

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        """Every learned tensor and running statistic, in canonical order."""
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = self.in_channels
        for bi, blk in enumerate(self.blocks, 1):
            for ci in range(1, blk.convs + 1):
                pre = f"block{bi}.conv{ci}"
                shapes[f"{pre}.weight"] = (blk.out_channels, c_in, blk.kernel, blk.kernel)
                shapes[f"{pre}.bias"] = (blk.out_channels,)
                if self.batchnorm:
                    bn = f"block{bi}.bn{ci}"
                    for s in ("gamma", "beta", "running_mean", "running_var"):
                        shapes[f"{bn}.{s}"] = (blk.out_channels,)
                c_in = blk.out_channels
        width = self.flat_width()
        for di, spec in enumerate(self.classifier, 1):
            shapes[f"fc{di}.weight"] = (spec.width, width)
            shapes[f"fc{di}.bias"] = (spec.width,)
            width = spec.width
        out = len(self.classifier) + 1
        shapes[f"fc{out}.weight"] = (self.num_classes, width)
        shapes[f"fc{out}.bias"] = (self.num_classes,)
        return shapes


def _vgg_preset(name, channels, dense):
    return ArchitecturePreset(
        name=name,
        blocks=tuple(ConvBlock(c) for c in channels),
        classifier=(DenseSpec(dense),),
    )


PRESETS = {
    "vgg-fer-mini": _vgg_preset("vgg-fer-mini", (32, 64, 128, 256), 1024),
    "vgg-fer-full": _vgg_preset("vgg-fer-full", (64, 128, 256, 512), 4096),
}


def get_preset(name: str) -> ArchitecturePreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _is_buffer(name: str) -> bool:
    return name.endswith(("running_mean", "running_var"))


class VGGNet:
    """Stack of conv blocks plus a dense head with an explicit backward pass.

    ``params`` maps tensor names to arrays (learned weights and batchnorm
    running statistics alike); ``grads`` is filled by :meth:`backward` for
    the learned entries only.
    """

    def __init__(self, preset: ArchitecturePreset, params: dict[str, np.ndarray]):
        expected = preset.parameter_shapes()
        if list(params) != list(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            if missing or extra:
                raise ValueError(f"parameters do not fit preset {preset.name}: "
                                 f"missing {missing}, unexpected {extra}")
            params = {k: params[k] for k in expected}
        for k, shape in expected.items():
            if params[k].shape != shape:
                raise ValueError(f"{k}: shape {params[k].shape} != preset shape {shape}")
        self.preset = preset
        self.params = params
        self.grads: dict[str, np.ndarray] = {}
        self._tape: list = []
        self._bn = {}
        for bi, blk in enumerate(preset.blocks, 1):
            for ci in range(1, blk.convs + 1):
                if preset.batchnorm:
                    self._bn[(bi, ci)] = self._bn_view(f"block{bi}.bn{ci}")

    @classmethod
    def initialize(cls, preset: ArchitecturePreset, rng: np.random.Generator,
                   dtype=np.float32) -> "VGGNet":
        """He-normal conv kernels, LeCun-normal dense weights (the output layer
        scaled down so initial logits are near zero), zero biases, unit
        batchnorm scale."""
        params = {}
        shapes = preset.parameter_shapes()
        last = [k for k in shapes if k.startswith("fc")][-2]
        for name, shape in shapes.items():
            if name.endswith(".weight"):
                fan_in = int(np.prod(shape[1:]))
                gain = 2.0 if len(shape) == 4 else 1.0
                std = np.sqrt(gain / fan_in) * (0.1 if name == last else 1.0)
                params[name] = (rng.standard_normal(shape) * std).astype(dtype)
            elif name.endswith(("gamma", "running_var")):
                params[name] = np.ones(shape, dtype=dtype)
            else:
                params[name] = np.zeros(shape, dtype=dtype)
        return cls(preset, params)

    def _bn_view(self, prefix):
        # state object whose arrays alias the entries in self.params
        st = ops.BatchNormState.__new__(ops.BatchNormState)
        st.gamma = self.params[f"{prefix}.gamma"]
        st.beta = self.params[f"{prefix}.beta"]
        st.running_mean = self.params[f"{prefix}.running_mean"]
        st.running_var = self.params[f"{prefix}.running_var"]
        st.momentum = self.preset.bn_momentum
        st.eps = self.preset.bn_eps
        return st

    def learned(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if not _is_buffer(k)}

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None):
        """Logits for a batch ``x`` of shape [B, C, H, W].

        ``train=True`` uses batch statistics, updates running statistics,
        applies dropout from ``rng`` and records what :meth:`backward` needs.
        """
        mode = "train" if train else "infer"
        if train and rng is None:
            rng = np.random.default_rng(0)
        p = self.params
        tape = []
        for bi, blk in enumerate(self.preset.blocks, 1):
            for ci in range(1, blk.convs + 1):
                pre = f"block{bi}.conv{ci}"
                x, cache = ops.conv2d_forward(x, p[f"{pre}.weight"], p[f"{pre}.bias"],
                                              stride=blk.stride, pad=blk.pad)
                tape.append(("conv", pre, cache))
                if self.preset.batchnorm:
                    x, cache = ops.batchnorm_forward(x, self._bn[(bi, ci)], mode)
                    tape.append(("bn", f"block{bi}.bn{ci}", cache))
                x, cache = ops.relu_forward(x)
                tape.append(("relu", None, cache))
            x, cache = ops.maxpool2_forward(x)
            tape.append(("pool", None, cache))
            x, cache = ops.dropout_forward(x, blk.dropout, rng, mode)
            tape.append(("drop", None, cache))

        tape.append(("flatten", None, x.shape))
        x = x.reshape(x.shape[0], -1)
        n_fc = len(self.preset.classifier) + 1
        for di in range(1, n_fc + 1):
            pre = f"fc{di}"
            x, cache = ops.dense_forward(x, p[f"{pre}.weight"], p[f"{pre}.bias"])
            tape.append(("dense", pre, cache))
            if di < n_fc:
                x, cache = ops.relu_forward(x)
                tape.append(("relu", None, cache))
                rate = self.preset.classifier[di - 1].dropout
                x, cache = ops.dropout_forward(x, rate, rng, mode)
                tape.append(("drop", None, cache))
        self._tape = tape if train else []
        return x

    def backward(self, dlogits):
        """Backpropagate ``dlogits``; fills ``self.grads`` and returns d(input)."""
        if not self._tape:
            raise RuntimeError("backward() needs a preceding forward(train=True)")
        grads = {}
        d = dlogits
        for kind, name, cache in reversed(self._tape):
            if kind == "dense":
                d, grads[f"{name}.weight"], grads[f"{name}.bias"] = ops.dense_backward(d, cache)
            elif kind == "conv":
                d, grads[f"{name}.weight"], grads[f"{name}.bias"] = ops.conv2d_backward(d, cache)
            elif kind == "bn":
                d, grads[f"{name}.gamma"], grads[f"{name}.beta"] = ops.batchnorm_backward(d, cache)
            elif kind == "relu":
                d = ops.relu_backward(d, cache)
            elif kind == "pool":
                d = ops.maxpool2_backward(d, cache)
            elif kind == "drop":
                d = ops.dropout_backward(d, cache)
            elif kind == "flatten":
                d = d.reshape(cache)
        self._tape = []
        self.grads = {k: grads[k] for k in self.params if k in grads}
        return d
