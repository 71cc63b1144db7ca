"""Switcher network: maps task-network weights to per-neuron scaling factors.

The weights feeding each scalable layer are laid out as rows (one row per
neuron) of a multi-channel "weight stack".  A small U-Net style network
encodes the stack with conv/ReLU/maxpool blocks, collapses every encoder
level to width 1 with a full-width row convolution, decodes by transposed
convolution plus concatenation of the matching row features, and ends in a
per-channel 1x1 head followed by ReLU, giving one nonnegative factor per row.

Two branches exist:

* ``fc``: one stack channel per scalable fc-source layer, holding the
  (zero padded) weight matrix whose rows belong to that layer's neurons.
* ``conv``: conv kernels are flattened to rows, mapped to a fixed feature
  width by a learned per-layer extractor, and concatenated vertically into a
  single-channel stack.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .exceptions import GeometryMismatch, NoConvLayers, NoScalableLayers
from .nn import TNNModel
from .tensor import (
    Tensor,
    concat,
    conv2d,
    maxpool2d,
    pad,
    relu,
    reshape,
    take,
    transposed_conv2d,
)


@dataclass
class SNNConfig:
    levels: int = 3
    channels: tuple[int, ...] = (8, 16, 32)
    kernel: int = 3
    pool: int = 2
    feature_width: int = 32
    head_bias: float = 1.0
    head_scale: float = 1.0  # multiplies the initial head weights on decoder channels

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.levels < 1 or len(self.channels) != self.levels:
            raise ValueError(f"need levels >= 1 and one channel count per level, got {self}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be a positive odd size")
        if self.pool < 1:
            raise ValueError("pool must be >= 1")
        if self.head_scale < 0:
            raise ValueError("head_scale must be >= 0")


@dataclass
class RowSpan:
    """Rows ``offset:offset+count`` of stack ``channel`` belong to TNN layer ``layer``."""

    layer: int
    channel: int
    offset: int
    count: int


@dataclass
class WeightStack:
    data: Tensor  # (1, C, H, W)
    row_map: list[RowSpan]
    pad_mask: np.ndarray  # (C, H) 1 for valid rows

    @property
    def geometry(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])


class ScalingFactors:
    """One nonnegative factor vector per scalable TNN layer, in layer order."""

    def __init__(self, vectors: Sequence[Tensor], layers: Sequence[int]):
        self.vectors = list(vectors)
        self.layers = list(layers)

    @classmethod
    def ones(cls, model: TNNModel) -> "ScalingFactors":
        return cls([Tensor(np.ones(n)) for n in model.scalable_sizes()], model.scalable_layers())

    @classmethod
    def from_arrays(cls, arrays, layers) -> "ScalingFactors":
        return cls([Tensor(np.asarray(a, dtype=np.float64)) for a in arrays], layers)

    def numpy(self) -> list[np.ndarray]:
        return [v.data for v in self.vectors]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.vectors)

    def __len__(self) -> int:
        return len(self.vectors)

    def __getitem__(self, i) -> Tensor:
        return self.vectors[i]


@dataclass
class UNet:
    """Parameters of one switcher branch, bound to a stack geometry."""

    geometry: tuple[int, int, int]  # (C, H_pad, W_pad)
    enc: list[Tensor]
    row: list[Tensor]  # one per encoder level, plus the bottom
    up: list[Tensor]
    dec: list[Tensor]
    head: Tensor

    def parameters(self) -> list[Tensor]:
        return self.enc + self.row + self.up + self.dec + [self.head]


@dataclass
class Branch:
    kind: str  # "fc" | "conv"
    layers: list[int]
    net: UNet
    extractors: list[Tensor] = field(default_factory=list)

    def parameters(self) -> list[Tensor]:
        return self.extractors + self.net.parameters()


@dataclass
class SNNModel:
    config: SNNConfig
    branches: list[Branch]

    def parameters(self) -> list[Tensor]:
        return [p for b in self.branches for p in b.parameters()]

    def branch(self, kind: str) -> Branch | None:
        return next((b for b in self.branches if b.kind == kind), None)

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]


# ---------------------------------------------------------------------------
# stack assembly
# ---------------------------------------------------------------------------


def _round_up(n: int, m: int) -> int:
    return -(-n // m) * m


def _fc_sources(model: TNNModel) -> list[tuple[int, int]]:
    """(scalable layer, index of the fc layer consuming it) pairs."""
    pairs = []
    for i in model.scalable_layers():
        if model.layers[i].kind in ("fc", "flatten"):
            nxt = next((j for j in range(i + 1, len(model.layers)) if model.layers[j].kind == "fc"), None)
            if nxt is not None:
                pairs.append((i, nxt))
    return pairs


def fc_stack_shape(model: TNNModel, cfg: SNNConfig) -> tuple[int, int, int]:
    pairs = _fc_sources(model)
    if not pairs:
        raise NoScalableLayers("model has no scalable fully connected layers")
    mult = cfg.pool ** cfg.levels
    rows = max(model.layers[j].fan_in for _, j in pairs)
    cols = max(model.layers[j].fan_out for _, j in pairs)
    return len(pairs), _round_up(rows, mult), _round_up(cols, mult)


def assemble_fc_input(model: TNNModel, cfg: SNNConfig | None = None) -> WeightStack:
    """Stack the weight matrix consuming each scalable fc-source layer as a channel.

    Channels are zero padded on the right/bottom to a common size (rounded up
    so the encoder's pooling divides evenly).  The stack stays on the tape so
    gradients reach the TNN weights.
    """
    cfg = cfg or SNNConfig()
    c, h, w = fc_stack_shape(model, cfg)
    channels, spans = [], []
    mask = np.zeros((c, h))
    for ch, (i, j) in enumerate(_fc_sources(model)):
        weight = model.weight_of(j)
        r, k = weight.shape
        channels.append(pad(reshape(weight, (1, 1, r, k)), ((0, 0), (0, 0), (0, h - r), (0, w - k))))
        spans.append(RowSpan(i, ch, 0, r))
        mask[ch, :r] = 1.0
    return WeightStack(concat(channels, axis=1), spans, mask)


def _conv_layers(model: TNNModel) -> list[int]:
    return [i for i in model.scalable_layers() if model.layers[i].kind == "conv"]


def conv_stack_shape(model: TNNModel, cfg: SNNConfig) -> tuple[int, int, int]:
    layers = _conv_layers(model)
    if not layers:
        raise NoConvLayers("model has no scalable conv layers")
    mult = cfg.pool ** cfg.levels
    rows = sum(model.layers[i].fan_out for i in layers)
    return 1, _round_up(rows, mult), _round_up(cfg.feature_width, mult)


def assemble_conv_input(model: TNNModel, extractors: SNNModel | Sequence[Tensor], cfg: SNNConfig | None = None) -> WeightStack:
    """One row per conv kernel: flattened kernel -> learned linear feature map of width F.

    Each layer's extractor is a 1-D convolution spanning the flattened kernel
    (C_in*k*k) with F output channels.
    """
    if isinstance(extractors, SNNModel):
        cfg = extractors.config
        branch = extractors.branch("conv")
        if branch is None:
            raise NoConvLayers("switcher has no conv branch")
        extractors = branch.extractors
    cfg = cfg or SNNConfig()
    layers = _conv_layers(model)
    _, h, w = conv_stack_shape(model, cfg)
    if len(extractors) != len(layers):
        raise GeometryMismatch(f"{len(extractors)} extractors for {len(layers)} conv layers")
    rows, spans, offset = [], [], 0
    for i, ext in zip(layers, extractors):
        kernel = model.weight_of(i)
        c_out = kernel.shape[0]
        length = int(np.prod(kernel.shape[1:]))
        if ext.shape != (cfg.feature_width, 1, 1, length):
            raise GeometryMismatch(f"extractor {ext.shape} for kernels of length {length}")
        flat = reshape(kernel, (c_out, 1, 1, length))
        rows.append(reshape(conv2d(flat, ext), (c_out, cfg.feature_width)))
        spans.append(RowSpan(i, 0, offset, c_out))
        offset += c_out
    matrix = reshape(concat(rows, axis=0), (1, 1, offset, cfg.feature_width))
    matrix = pad(matrix, ((0, 0), (0, 0), (0, h - offset), (0, w - cfg.feature_width)))
    mask = np.zeros((1, h))
    mask[0, :offset] = 1.0
    return WeightStack(matrix, spans, mask)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def _kaiming(rng, shape, fan_in, name) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True, name=name)


def init_unet(geometry: tuple[int, int, int], cfg: SNNConfig, rng: np.random.Generator, prefix: str = "") -> UNet:
    c0, h, w = geometry
    k, p = cfg.kernel, cfg.pool
    enc, row, up, dec = [], [], [], []
    c_prev, width = c0, w
    for lvl, c in enumerate(cfg.channels):
        enc.append(_kaiming(rng, (c, c_prev, k, k), c_prev * k * k, f"{prefix}enc{lvl}"))
        row.append(_kaiming(rng, (c, c, 1, width), c * width, f"{prefix}row{lvl}"))
        c_prev, width = c, width // p
    bottom = cfg.channels[-1]
    row.append(_kaiming(rng, (bottom, bottom, 1, width), bottom * width, f"{prefix}row_bottom"))
    c_d = bottom
    for lvl in reversed(range(cfg.levels)):
        c = cfg.channels[lvl]
        # transposed conv kernel stored in conv layout: (in channels, out channels, p, 1)
        up.insert(0, _kaiming(rng, (c_d, c, p, 1), c_d, f"{prefix}up{lvl}"))
        dec.insert(0, _kaiming(rng, (c, 2 * c, k, 1), 2 * c * k, f"{prefix}dec{lvl}"))
        c_d = c
    c1 = cfg.channels[0]
    head = _kaiming(rng, (c0, c1 + 1, 1, 1), c1, f"{prefix}head")
    # small decoder weights start every factor near head_bias, so deep task
    # networks are not cut off by dead heads before training begins
    head.data[:, :c1] *= cfg.head_scale
    head.data[:, c1, 0, 0] = cfg.head_bias  # weight on the constant channel acts as a bias
    return UNet(tuple(geometry), enc, row, up, dec, head)


def unet_forward(net: UNet, x: Tensor, cfg: SNNConfig) -> Tensor:
    """(1, C, H, W) stack -> (1, C, H, 1) nonnegative row scores."""
    if tuple(x.shape[1:]) != net.geometry or x.shape[0] != 1:
        raise GeometryMismatch(f"stack {x.shape} does not match switcher geometry {net.geometry}")
    k, p = cfg.kernel, cfg.pool
    skips = []
    h = x
    for lvl in range(cfg.levels):
        e = relu(conv2d(h, net.enc[lvl], stride=1, pad=k // 2))
        skips.append(conv2d(e, net.row[lvl]))
        h = maxpool2d(e, p) if p > 1 else e
    d = conv2d(h, net.row[-1])
    for lvl in reversed(range(cfg.levels)):
        u = transposed_conv2d(d, net.up[lvl], stride=(p, 1))
        d = relu(conv2d(concat([u, skips[lvl]], axis=1), net.dec[lvl], pad=(k // 2, 0)))
    ones = Tensor(np.ones((1, 1) + d.shape[2:]))
    return relu(conv2d(concat([d, ones], axis=1), net.head))


def build_snn(model: TNNModel, cfg: SNNConfig | None = None, seed: int = 0) -> SNNModel:
    """Create a switcher bound to ``model``'s geometry (Kaiming-normal init)."""
    cfg = cfg or SNNConfig()
    rng = np.random.default_rng(seed)
    branches = []
    conv_layers = _conv_layers(model)
    if conv_layers:
        extractors = []
        for i in conv_layers:
            kernel = model.weight_of(i)
            length = int(np.prod(kernel.shape[1:]))
            extractors.append(_kaiming(rng, (cfg.feature_width, 1, 1, length), length, f"extract{i}"))
        geom = conv_stack_shape(model, cfg)
        branches.append(Branch("conv", conv_layers, init_unet(geom, cfg, rng, "conv."), extractors))
    fc_layers = [i for i, _ in _fc_sources(model)]
    if fc_layers:
        geom = fc_stack_shape(model, cfg)
        branches.append(Branch("fc", fc_layers, init_unet(geom, cfg, rng, "fc.")))
    if not branches:
        raise NoScalableLayers("model has nothing for the switcher to scale")
    return SNNModel(cfg, branches)


def snn_forward(snn: SNNModel, stack: WeightStack, branch: Branch | None = None) -> ScalingFactors:
    """Run one branch over its stack; pad rows are dropped, the rest split per layer."""
    if branch is None:
        match = [b for b in snn.branches if b.net.geometry == stack.geometry]
        if not match:
            raise GeometryMismatch(f"no switcher branch accepts stack geometry {stack.geometry}")
        branch = match[0]
    out = unet_forward(branch.net, stack.data, snn.config)
    vectors = [take(out, (0, s.channel, slice(s.offset, s.offset + s.count), 0)) for s in stack.row_map]
    return ScalingFactors(vectors, [s.layer for s in stack.row_map])


def compute_factors(snn: SNNModel, model: TNNModel) -> ScalingFactors:
    """Factors for every scalable layer of ``model``, in layer order."""
    by_layer: dict[int, Tensor] = {}
    for branch in snn.branches:
        if branch.kind == "fc":
            stack = assemble_fc_input(model, snn.config)
        else:
            stack = assemble_conv_input(model, branch.extractors, snn.config)
        g = snn_forward(snn, stack, branch)
        by_layer.update(zip(g.layers, g.vectors))
    order = model.scalable_layers()
    missing = [i for i in order if i not in by_layer]
    if missing:
        raise GeometryMismatch(f"switcher produces no factors for layers {missing}")
    return ScalingFactors([by_layer[i] for i in order], order)


def classify_factors(g) -> list[tuple[int, int, int]]:
    """Per layer (pruned, weakened, strengthened): ==0, (0, 1), >=1."""
    counts = []
    for v in g:
        a = np.asarray(v.data if isinstance(v, Tensor) else v)
        pruned = int(np.count_nonzero(a == 0))
        strong = int(np.count_nonzero(a >= 1))
        counts.append((pruned, a.size - pruned - strong, strong))
    return counts
