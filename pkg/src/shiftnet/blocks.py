"""Trainable layers and composite blocks.

Atomic layers (convolutions, batch norm, ReLU, pools, linear) hold their
parameters and cache the last forward inputs for the matching backward call.
Composite blocks assemble them into the shift-based conv-shift-conv module
(optionally with a leading extra shift for a wider receptive field) and the
plain two-conv residual block used as the baseline it replaces.

Downsampling (stride 2) is parameter-free on the shortcut. Two variants
exist, selected per block:

* "add": the main path emits the full output width (intermediate channels =
  round(expansion * out_channels)) and is summed with the channel-doubling
  pooled shortcut. Used by the CIFAR-style residual family.
* "concat": the main path emits out - in channels (intermediate channels =
  round(expansion * in_channels)) and is concatenated after the pooled
  shortcut. Used by the larger shift-network family.

When a stride-2 block keeps its channel count (out == in), neither shortcut
shape works and the block runs main-path only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .ops import BatchNormState, ConvKernel
from .shift import ShiftSpec, make_shift_spec, shift_backward, shift_forward
from .tensor import REAL, InitPolicy, create


def derive_seed(master: int, index: int) -> int:
    """Stable per-parameter seed from a master seed and a construction index."""
    return int(np.random.SeedSequence((master, index)).generate_state(1)[0])


class SeedStream:
    """Hands out derived seeds in construction order."""

    def __init__(self, master: int):
        self.master = int(master)
        self._i = 0

    def next(self) -> int:
        s = derive_seed(self.master, self._i)
        self._i += 1
        return s


class Param:
    """A learnable array and its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def size(self) -> int:
        return self.value.size


@dataclass
class LayerCost:
    """Architecture-only cost of one layer: parameter and multiply-accumulate counts."""

    name: str
    kind: str          # conv | depthwise | pointwise | shift | bn | fc
    params: int
    macs: int
    in_channels: int
    out_channels: int
    feature_size: int  # output spatial side
    kernel_size: int
    note: str = ""


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def downsample_combine(x: np.ndarray) -> np.ndarray:
    """Halve the spatial dims and double the channels, parameter-free.

    Concatenation of two 2x2/stride-2 average poolings of the input (both
    taken at offset (0, 0)), so every output channel pair carries the same
    pooled plane.
    """
    p = ops.avgpool2x2(x)
    return np.concatenate([p, p], axis=1)


def downsample_combine_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    c = x.shape[1]
    return ops.avgpool2x2_backward(dout[:, :c] + dout[:, c:], x)


class SpatialConv:
    """k x k convolution, zero-padded for same-size output at stride 1, no bias."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 seed=0, dtype=REAL):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2
        fan_in = kernel_size * kernel_size * in_channels
        w = create((kernel_size, kernel_size, in_channels, out_channels),
                   InitPolicy.he_normal(fan_in, seed), dtype)
        self.weight = Param(w)
        self._x = None

    def _kernel(self) -> ConvKernel:
        return ConvKernel(self.weight.value, self.stride, self.padding)

    def forward(self, x, mode="train"):
        self._x = x
        return ops.conv2d_spatial(x, self._kernel())

    def backward(self, dout):
        dx, dw = ops.conv2d_spatial_backward(dout, self._x, self._kernel())
        self.weight.grad += dw
        return dx

    def params(self):
        return [("weight", self.weight)]

    def state_arrays(self):
        return [("weight", self.weight.value)]

    def cost_entries(self, name, in_shape):
        c, h, w = in_shape
        ho = (h + 2 * self.padding - self.kernel_size) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_size) // self.stride + 1
        k2 = self.kernel_size ** 2
        n_params = k2 * self.in_channels * self.out_channels
        macs = n_params * ho * wo
        entry = LayerCost(name, "conv", n_params, macs, self.in_channels,
                          self.out_channels, ho, self.kernel_size)
        return [entry], (self.out_channels, ho, wo)


class PointwiseConv:
    """1x1 convolution mixing channels; the stride subsamples output positions."""

    kind = "pointwise"

    def __init__(self, in_channels, out_channels, stride=1, seed=0, dtype=REAL):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        w = create((in_channels, out_channels),
                   InitPolicy.he_normal(in_channels, seed), dtype)
        self.weight = Param(w)
        self._x = None

    def _kernel(self) -> ConvKernel:
        return ConvKernel(self.weight.value, self.stride, 0)

    def forward(self, x, mode="train"):
        self._x = x
        return ops.conv2d_pointwise(x, self._kernel())

    def backward(self, dout):
        dx, dw = ops.conv2d_pointwise_backward(dout, self._x, self._kernel())
        self.weight.grad += dw
        return dx

    def params(self):
        return [("weight", self.weight)]

    def state_arrays(self):
        return [("weight", self.weight.value)]

    def cost_entries(self, name, in_shape):
        c, h, w = in_shape
        ho = (h + self.stride - 1) // self.stride
        wo = (w + self.stride - 1) // self.stride
        n_params = self.in_channels * self.out_channels
        macs = n_params * ho * wo
        entry = LayerCost(name, "pointwise", n_params, macs, self.in_channels,
                          self.out_channels, ho, 1)
        return [entry], (self.out_channels, ho, wo)


class Shift:
    """Parameter-free channel-wise translation layer."""

    kind = "shift"

    def __init__(self, spec: ShiftSpec):
        self.spec = spec

    def forward(self, x, mode="train"):
        return shift_forward(x, self.spec)

    def backward(self, dout):
        return shift_backward(dout, self.spec)

    def params(self):
        return []

    def state_arrays(self):
        return []

    def cost_entries(self, name, in_shape):
        c, h, w = in_shape
        note = ""
        if c < self.spec.kernel_size ** 2:
            note = "fewer channels than window positions; some shift groups empty"
        entry = LayerCost(name, "shift", 0, 0, c, c, h,
                          self.spec.kernel_size, note=note)
        return [entry], in_shape


class BatchNorm:
    """Per-channel batch normalization with learnable affine terms."""

    kind = "bn"

    def __init__(self, channels, dtype=REAL):
        self.channels = channels
        self.state = BatchNormState.create(channels, dtype)
        self.gamma = Param(self.state.gamma)
        self.beta = Param(self.state.beta)
        self._cache = None

    def forward(self, x, mode="train"):
        y, self._cache = ops.batchnorm_forward(x, self.state, mode)
        return y

    def backward(self, dout):
        dx, dgamma, dbeta = ops.batchnorm_backward(dout, self._cache)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state_arrays(self):
        return [("gamma", self.state.gamma), ("beta", self.state.beta),
                ("running_mean", self.state.running_mean),
                ("running_var", self.state.running_var)]

    def cost_entries(self, name, in_shape):
        c, h, w = in_shape
        entry = LayerCost(name, "bn", 2 * self.channels, 0, c, c, h, 1)
        return [entry], in_shape


class ReLU:
    kind = "relu"

    def __init__(self):
        self._x = None

    def forward(self, x, mode="train"):
        self._x = x
        return ops.relu(x)

    def backward(self, dout):
        return ops.relu_backward(dout, self._x)

    def params(self):
        return []

    def state_arrays(self):
        return []

    def cost_entries(self, name, in_shape):
        return [], in_shape


class GlobalAvgPool:
    """Global spatial mean; flattens (b, c, h, w) to (b, c)."""

    kind = "pool"

    def __init__(self):
        self._x = None

    def forward(self, x, mode="train"):
        self._x = x
        return ops.global_avgpool(x)

    def backward(self, dout):
        return ops.global_avgpool_backward(dout, self._x)

    def params(self):
        return []

    def state_arrays(self):
        return []

    def cost_entries(self, name, in_shape):
        c, h, w = in_shape
        return [], (c,)


class Linear:
    """Fully-connected head with bias."""

    kind = "fc"

    def __init__(self, in_features, out_features, seed=0, dtype=REAL):
        self.in_features = in_features
        self.out_features = out_features
        w = create((in_features, out_features),
                   InitPolicy.he_normal(in_features, seed), dtype)
        self.weight = Param(w)
        self.bias = Param(np.zeros(out_features, dtype=dtype))
        self._x = None

    def forward(self, x, mode="train"):
        self._x = x
        return ops.fc_forward(x, self.weight.value, self.bias.value)

    def backward(self, dout):
        dx, dw, db = ops.fc_backward(dout, self._x, self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def state_arrays(self):
        return [("weight", self.weight.value), ("bias", self.bias.value)]

    def cost_entries(self, name, in_shape):
        n_params = self.in_features * self.out_features + self.out_features
        macs = self.in_features * self.out_features
        entry = LayerCost(name, "fc", n_params, macs, self.in_features,
                          self.out_features, 1, 1)
        return [entry], (self.out_features,)


class StemConv:
    """Network stem: spatial convolution followed by batch norm and ReLU."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 seed=0, dtype=REAL):
        self.conv = SpatialConv(in_channels, out_channels, kernel_size,
                                stride, seed, dtype)
        self.bn = BatchNorm(out_channels, dtype)
        self.relu = ReLU()

    def forward(self, x, mode="train"):
        return self.relu.forward(self.bn.forward(self.conv.forward(x, mode), mode), mode)

    def backward(self, dout):
        return self.conv.backward(self.bn.backward(self.relu.backward(dout)))

    def params(self):
        out = [(f"conv.{n}", p) for n, p in self.conv.params()]
        out += [(f"bn.{n}", p) for n, p in self.bn.params()]
        return out

    def state_arrays(self):
        out = [(f"conv.{n}", a) for n, a in self.conv.state_arrays()]
        out += [(f"bn.{n}", a) for n, a in self.bn.state_arrays()]
        return out

    def cost_entries(self, name, in_shape):
        entries, shape = self.conv.cost_entries(f"{name}.conv", in_shape)
        bn_entries, shape = self.bn.cost_entries(f"{name}.bn", shape)
        return entries + bn_entries, shape


@dataclass(frozen=True)
class CscConfig:
    """Shape of one conv-shift-conv block.

    expansion scales the intermediate channel count: round(expansion * C) at
    stride 1 (where in == out == C); at stride 2 the "add" downsample uses
    round(expansion * out_channels) and the "concat" downsample
    round(expansion * in_channels). variant "sc2" prepends one extra shift.
    """

    in_channels: int
    out_channels: int
    expansion: float
    kernel_size: int = 3
    dilation: int = 1
    stride: int = 1
    variant: str = "csc"         # csc | sc2
    downsample: str = "add"      # add | concat
    permutation_id: int = 0

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.stride == 1 and self.in_channels != self.out_channels:
            raise ValueError("stride-1 blocks need in_channels == out_channels "
                             "for the residual addition")
        if self.stride == 2 and self.out_channels not in (self.in_channels,
                                                          2 * self.in_channels):
            raise ValueError("stride-2 blocks support out == 2*in (with shortcut) "
                             f"or out == in (main path only); got "
                             f"{self.in_channels} -> {self.out_channels}")
        if self.variant not in ("csc", "sc2"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.downsample not in ("add", "concat"):
            raise ValueError(f"unknown downsample mode {self.downsample!r}")
        if self.expansion <= 0:
            raise ValueError("expansion must be positive")

    @property
    def mid_channels(self) -> int:
        if self.stride == 1 or self.downsample == "add":
            return round_half_up(self.expansion * self.out_channels)
        return round_half_up(self.expansion * self.in_channels)

    @property
    def main_out_channels(self) -> int:
        if self.stride == 2 and self.downsample == "concat" \
                and self.out_channels == 2 * self.in_channels:
            return self.out_channels - self.in_channels
        return self.out_channels

    @property
    def has_shortcut(self) -> bool:
        return self.stride == 1 or self.out_channels == 2 * self.in_channels


class CscBlock:
    """Conv-shift-conv module: BN-ReLU-1x1, shift, BN-ReLU-1x1(stride), + shortcut.

    Both 1x1 convolutions are preceded by batch norm and ReLU; the second one
    carries the block's stride so spatial information is mixed by the shift
    before downsampling. The residual taps the raw input. The "sc2" variant
    shifts once more at the very start, widening the receptive field.
    """

    def __init__(self, cfg: CscConfig, seeds: SeedStream, dtype=REAL):
        self.cfg = cfg
        mid = cfg.mid_channels
        self.spec = make_shift_spec(mid, cfg.kernel_size, cfg.dilation,
                                    cfg.permutation_id)
        self.spec0 = None
        if cfg.variant == "sc2":
            self.spec0 = make_shift_spec(cfg.in_channels, cfg.kernel_size,
                                         cfg.dilation, cfg.permutation_id)
        self.bn1 = BatchNorm(cfg.in_channels, dtype)
        self.relu1 = ReLU()
        self.pw1 = PointwiseConv(cfg.in_channels, mid, 1, seeds.next(), dtype)
        self.bn2 = BatchNorm(mid, dtype)
        self.relu2 = ReLU()
        self.shift = Shift(self.spec)
        self.pw2 = PointwiseConv(mid, cfg.main_out_channels, cfg.stride,
                                 seeds.next(), dtype)
        self._x = None
        self.collect_post_shift = False
        self.last_post_shift = None

    def forward(self, x, mode="train"):
        cfg = self.cfg
        self._x = x
        h = shift_forward(x, self.spec0) if self.spec0 is not None else x
        h = self.bn1.forward(h, mode)
        h = self.relu1.forward(h, mode)
        h = self.pw1.forward(h, mode)
        h = self.bn2.forward(h, mode)
        h = self.relu2.forward(h, mode)
        h = self.shift.forward(h, mode)
        if self.collect_post_shift:
            self.last_post_shift = h.copy()
        main = self.pw2.forward(h, mode)
        if cfg.stride == 1:
            return main + x
        if not cfg.has_shortcut:
            return main
        if cfg.downsample == "add":
            return main + downsample_combine(x)
        return np.concatenate([ops.avgpool2x2(x), main], axis=1)

    def backward(self, dout):
        cfg = self.cfg
        if cfg.stride == 1:
            dmain, dshort = dout, dout
        elif not cfg.has_shortcut:
            dmain, dshort = dout, None
        elif cfg.downsample == "add":
            dmain = dout
            dshort = downsample_combine_backward(dout, self._x)
        else:
            c = cfg.in_channels
            dmain = dout[:, c:]
            dshort = ops.avgpool2x2_backward(dout[:, :c], self._x)
        d = self.pw2.backward(dmain)
        d = self.shift.backward(d)
        d = self.relu2.backward(d)
        d = self.bn2.backward(d)
        d = self.pw1.backward(d)
        d = self.relu1.backward(d)
        d = self.bn1.backward(d)
        if self.spec0 is not None:
            d = shift_backward(d, self.spec0)
        return d if dshort is None else d + dshort

    def _sublayers(self):
        subs = []
        if self.spec0 is not None:
            subs.append(("shift0", Shift(self.spec0)))
        subs.extend([("bn1", self.bn1), ("pw1", self.pw1), ("bn2", self.bn2),
                     ("shift", self.shift), ("pw2", self.pw2)])
        return subs

    def params(self):
        out = []
        for sub, layer in [("bn1", self.bn1), ("pw1", self.pw1),
                           ("bn2", self.bn2), ("pw2", self.pw2)]:
            out.extend((f"{sub}.{n}", p) for n, p in layer.params())
        return out

    def state_arrays(self):
        out = []
        for sub, layer in [("bn1", self.bn1), ("pw1", self.pw1),
                           ("bn2", self.bn2), ("pw2", self.pw2)]:
            out.extend((f"{sub}.{n}", a) for n, a in layer.state_arrays())
        return out

    def cost_entries(self, name, in_shape):
        entries = []
        shape = in_shape
        for sub, layer in self._sublayers():
            es, shape = layer.cost_entries(f"{name}.{sub}", shape)
            entries.append((layer, es, shape))
        # pw2 already strided the feature map; shortcut costs nothing
        flat = [e for _, es, _ in entries for e in es]
        c, h, w = in_shape
        ho = (h + self.cfg.stride - 1) // self.cfg.stride
        wo = (w + self.cfg.stride - 1) // self.cfg.stride
        return flat, (self.cfg.out_channels, ho, wo)


class BasicBlock:
    """Two 3x3 convolutions with batch norm and ReLU, plus a residual connection.

    mid_channels narrows the first convolution for the module-wise reduction
    baseline. The stride-2 shortcut is parameter-free: pooled and channel
    doubled by duplicate concatenation when out == 2*in, otherwise pooled and
    zero-padded up to the output width (reduced nets round widths so exact
    doubling is not guaranteed).
    """

    def __init__(self, in_channels, out_channels, stride, seeds: SeedStream,
                 mid_channels=None, dtype=REAL):
        if stride == 1 and in_channels != out_channels:
            raise ValueError("stride-1 basic blocks need in == out channels")
        if stride == 2 and out_channels < in_channels:
            raise ValueError("stride-2 basic blocks cannot shrink channels")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        mid = out_channels if mid_channels is None else mid_channels
        self.mid_channels = mid
        self.conv1 = SpatialConv(in_channels, mid, 3, stride, seeds.next(), dtype)
        self.bn1 = BatchNorm(mid, dtype)
        self.relu1 = ReLU()
        self.conv2 = SpatialConv(mid, out_channels, 3, 1, seeds.next(), dtype)
        self.bn2 = BatchNorm(out_channels, dtype)
        self._x = None

    def _shortcut(self, x):
        if self.stride == 1:
            return x
        if self.out_channels == 2 * self.in_channels:
            return downsample_combine(x)
        p = ops.avgpool2x2(x)
        extra = self.out_channels - self.in_channels
        if extra == 0:
            return p
        pad = np.zeros((p.shape[0], extra, p.shape[2], p.shape[3]), dtype=p.dtype)
        return np.concatenate([p, pad], axis=1)

    def _shortcut_backward(self, dout, x):
        if self.stride == 1:
            return dout
        if self.out_channels == 2 * self.in_channels:
            return downsample_combine_backward(dout, x)
        return ops.avgpool2x2_backward(dout[:, :self.in_channels], x)

    def forward(self, x, mode="train"):
        self._x = x
        h = self.conv1.forward(x, mode)
        h = self.bn1.forward(h, mode)
        h = self.relu1.forward(h, mode)
        h = self.conv2.forward(h, mode)
        main = self.bn2.forward(h, mode)
        return main + self._shortcut(x)

    def backward(self, dout):
        d = self.bn2.backward(dout)
        d = self.conv2.backward(d)
        d = self.relu1.backward(d)
        d = self.bn1.backward(d)
        d = self.conv1.backward(d)
        return d + self._shortcut_backward(dout, self._x)

    def params(self):
        out = []
        for sub, layer in [("conv1", self.conv1), ("bn1", self.bn1),
                           ("conv2", self.conv2), ("bn2", self.bn2)]:
            out.extend((f"{sub}.{n}", p) for n, p in layer.params())
        return out

    def state_arrays(self):
        out = []
        for sub, layer in [("conv1", self.conv1), ("bn1", self.bn1),
                           ("conv2", self.conv2), ("bn2", self.bn2)]:
            out.extend((f"{sub}.{n}", a) for n, a in layer.state_arrays())
        return out

    def cost_entries(self, name, in_shape):
        entries = []
        shape = in_shape
        for sub, layer in [("conv1", self.conv1), ("bn1", self.bn1),
                           ("conv2", self.conv2), ("bn2", self.bn2)]:
            es, shape = layer.cost_entries(f"{name}.{sub}", shape)
            entries.extend(es)
        return entries, shape
