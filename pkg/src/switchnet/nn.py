"""Task networks: bias-free MLP and LeNet-style CNN with per-neuron scaling.

Layer output neurons flagged ``scalable`` are multiplied by a nonnegative
factor vector right after their activation.  For a ``flatten`` layer that is
the raw input features; for ``fc`` the post-ReLU hidden units; for ``conv``
the post-BN-ReLU channels (before pooling).  The classification layer is
never scaled.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import InvalidWidth, ShapeMismatch
from .tensor import (
    RunningStats,
    Tensor,
    as_tensor,
    batchnorm2d,
    conv2d,
    matmul,
    maxpool2d,
    relu,
    reshape,
    scale_rows,
    take,
)

FC_STD = 0.1  # normal(0, variance 0.01)
CONV_KERNEL = 5
POOL_WINDOW = 2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class LayerSpec:
    kind: str  # "fc" | "conv" | "pool" | "flatten"
    fan_in: int
    fan_out: int
    kernel: int = 0
    scalable: bool = False

    @property
    def parameterized(self) -> bool:
        return self.kind in ("fc", "conv")

    def n_params(self, fan_in: int | None = None, fan_out: int | None = None) -> int:
        fi = self.fan_in if fan_in is None else fan_in
        fo = self.fan_out if fan_out is None else fan_out
        if self.kind == "fc":
            return fi * fo
        if self.kind == "conv":
            return fi * fo * self.kernel * self.kernel
        return 0


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    stats: RunningStats


@dataclass
class TNNModel:
    """Layer list plus parameters.

    ``weights[i]`` belongs to the i-th parameterized layer.  FC weights are
    stored fan_in x fan_out so that row j holds every outgoing connection of
    source neuron j.  ``flatten_index`` is set on compact (pruned) models: the
    flatten layer keeps only those features (for an MLP, the surviving input
    pixels).
    """

    layers: list[LayerSpec]
    weights: list[Tensor]
    bn: list[BatchNormParams] = field(default_factory=list)
    input_shape: tuple[int, ...] = ()
    flatten_index: np.ndarray | None = None

    @property
    def is_conv(self) -> bool:
        return any(l.kind == "conv" for l in self.layers)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].fan_out

    def parameters(self) -> list[Tensor]:
        params = list(self.weights)
        for bn in self.bn:
            params += [bn.gamma, bn.beta]
        return params

    def scalable_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.scalable]

    def scalable_sizes(self) -> list[int]:
        return [self.layers[i].fan_out for i in self.scalable_layers()]

    def weight_of(self, layer_index: int) -> Tensor:
        k = sum(1 for l in self.layers[:layer_index] if l.parameterized)
        return self.weights[k]

    def bn_of(self, layer_index: int) -> BatchNormParams:
        k = sum(1 for l in self.layers[:layer_index] if l.kind == "conv")
        return self.bn[k]

    def architecture(self) -> list[int]:
        """Neuron counts: input, every scalable layer, output."""
        first = self.layers[0]
        counts = [] if first.scalable else [first.fan_in]
        counts += self.scalable_sizes()
        counts.append(self.num_classes)
        return counts

    def n_params(self) -> int:
        return sum(l.n_params() for l in self.layers)

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def copy(self) -> "TNNModel":
        return copy.deepcopy(self)

    def state(self) -> list[np.ndarray]:
        """Snapshot of every trainable array plus running statistics."""
        arrays = [p.data.copy() for p in self.parameters()]
        for bn in self.bn:
            arrays += [bn.stats.mean.copy(), bn.stats.var.copy()]
        return arrays


def _check_widths(widths: Sequence[int], what: str) -> None:
    for w in widths:
        if int(w) <= 0:
            raise InvalidWidth(f"{what} must be positive, got {list(widths)}")


def build_mlp(widths: Sequence[int], num_classes: int, seed: int = 0) -> TNNModel:
    """Bias-free MLP; ``widths`` lists the input size then hidden sizes.

    ``build_mlp([784, 300, 100], 10)`` gives weight matrices 784x300,
    300x100 and 100x10.  Every non-output layer is scalable, the input
    pixels included.
    """
    widths = list(widths)
    if not widths:
        raise InvalidWidth("widths must be nonempty")
    _check_widths(widths + [num_classes], "layer widths")
    rng = np.random.default_rng(seed)
    layers = [LayerSpec("flatten", widths[0], widths[0], scalable=True)]
    sizes = widths + [num_classes]
    weights = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(LayerSpec("fc", a, b, scalable=not last))
        weights.append(Tensor(rng.normal(0.0, FC_STD, size=(a, b)), requires_grad=True, name=f"fc{i}"))
    return TNNModel(layers, weights, [], (widths[0],))


def build_lenet_small(
    conv_channels: Sequence[int],
    fc_widths: Sequence[int],
    num_classes: int = 10,
    seed: int = 0,
    image_size: int = 28,
    in_channels: int = 1,
) -> TNNModel:
    """LeNet-style CNN: [conv5x5 -> BN -> ReLU -> maxpool2] blocks, flatten, FC stack.

    Conv kernels are Kaiming-normal (fan_in, ReLU gain); FC weights normal
    with variance 0.01.  With ``[20, 50]`` / ``[500]`` on 28x28 inputs the
    flattened width is 800, the classic LeNet5-Caffe 20-50-800-500 layout.
    """
    conv_channels, fc_widths = list(conv_channels), list(fc_widths)
    if not conv_channels:
        raise InvalidWidth("conv_channels must be nonempty")
    _check_widths(conv_channels + fc_widths + [num_classes], "layer widths")
    rng = np.random.default_rng(seed)
    layers: list[LayerSpec] = []
    weights: list[Tensor] = []
    bns: list[BatchNormParams] = []
    side, c_in = image_size, in_channels
    for n, c_out in enumerate(conv_channels):
        side = side - CONV_KERNEL + 1
        if side < POOL_WINDOW:
            raise InvalidWidth(f"image too small for {len(conv_channels)} conv blocks")
        side //= POOL_WINDOW
        layers.append(LayerSpec("conv", c_in, c_out, CONV_KERNEL, scalable=True))
        layers.append(LayerSpec("pool", c_out, c_out, POOL_WINDOW))
        std = np.sqrt(2.0 / (c_in * CONV_KERNEL * CONV_KERNEL))
        weights.append(Tensor(rng.normal(0.0, std, size=(c_out, c_in, CONV_KERNEL, CONV_KERNEL)),
                              requires_grad=True, name=f"conv{n}"))
        bns.append(BatchNormParams(
            Tensor(np.ones(c_out), requires_grad=True, name=f"bn{n}.gamma"),
            Tensor(np.zeros(c_out), requires_grad=True, name=f"bn{n}.beta"),
            RunningStats.fresh(c_out, BN_MOMENTUM),
        ))
        c_in = c_out
    flat = c_in * side * side
    layers.append(LayerSpec("flatten", flat, flat, scalable=True))
    sizes = [flat] + fc_widths + [num_classes]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(LayerSpec("fc", a, b, scalable=not last))
        weights.append(Tensor(rng.normal(0.0, FC_STD, size=(a, b)), requires_grad=True, name=f"fc{i}"))
    return TNNModel(layers, weights, bns, (in_channels, image_size, image_size))


def _factor_list(model: TNNModel, g) -> list[Tensor] | None:
    if g is None:
        return None
    factors = [as_tensor(v) for v in g]
    sizes = model.scalable_sizes()
    if len(factors) != len(sizes) or any(f.shape != (n,) for f, n in zip(factors, sizes)):
        raise ShapeMismatch(
            f"factors {[f.shape for f in factors]} do not match scalable sizes {sizes}"
        )
    return factors


def prepare_input(model: TNNModel, x) -> Tensor:
    x = as_tensor(x)
    return reshape(x, (x.shape[0],) + tuple(model.input_shape))


def forward(model: TNNModel, x, g=None, mode: str = "train") -> Tensor:
    """Logits of the task network, optionally with scaling factors ``g``.

    ``g`` holds one vector per scalable layer, in layer order.  ``mode``
    selects batch or running statistics for batch normalization.
    """
    factors = _factor_list(model, g)
    h = prepare_input(model, x)
    k = 0  # next factor vector
    p = 0  # next weight
    c = 0  # next batchnorm
    last_fc = max(i for i, l in enumerate(model.layers) if l.kind == "fc")
    for i, layer in enumerate(model.layers):
        if layer.kind == "flatten":
            h = reshape(h, (h.shape[0], -1))
            if model.flatten_index is not None:
                h = take(h, (slice(None), model.flatten_index))
            if h.shape[1] != layer.fan_out:
                raise ShapeMismatch(f"flatten yields {h.shape[1]} features, layer expects {layer.fan_out}")
        elif layer.kind == "conv":
            bn = model.bn[c]
            h = conv2d(h, model.weights[p], stride=1, pad=0)
            h = relu(batchnorm2d(h, bn.gamma, bn.beta, BN_EPS, mode, bn.stats))
            p += 1
            c += 1
        elif layer.kind == "pool":
            h = maxpool2d(h, layer.kernel)
        elif layer.kind == "fc":
            h = matmul(h, model.weights[p])
            p += 1
            if i != last_fc:
                h = relu(h)
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
        if layer.scalable and factors is not None:
            h = scale_rows(h, factors[k])
            k += 1
    return h


def forward_fc_scaled(model: TNNModel, x, g) -> Tensor:
    """Scaled logits of an all-FC network."""
    if model.is_conv:
        raise ShapeMismatch("forward_fc_scaled expects an MLP; use forward_conv_scaled")
    return forward(model, x, g)


def forward_conv_scaled(model: TNNModel, x, g, mode: str = "train") -> Tensor:
    """Scaled logits of a conv network: pool(relu(bn(conv(x))) * g_n) per block."""
    if not model.is_conv:
        raise ShapeMismatch("forward_conv_scaled expects a network with conv layers")
    return forward(model, x, g, mode)


def count_params(arch: Sequence[int]) -> int:
    """Weight-only connection count of a fully connected stack.

    >>> count_params([784, 300, 100, 10])
    266200
    """
    arch = [int(a) for a in arch]
    return sum(a * b for a, b in zip(arch[:-1], arch[1:]))


def count_layer_params(layers: Sequence[LayerSpec], counts: Sequence[int] | None = None) -> int:
    """Weight-only parameter count of a layer list.

    ``counts`` optionally overrides the output width of every layer (used for
    surviving-neuron accounting); input widths follow from the previous layer.
    """
    total = 0
    prev = None
    for i, layer in enumerate(layers):
        out = layer.fan_out if counts is None else int(counts[i])
        fan_in = layer.fan_in if prev is None else prev
        total += layer.n_params(fan_in, out)
        prev = out
    return total
