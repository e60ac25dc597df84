"""Declarative network builders.

A network is assembled from a list of rows (type / stride / kernel /
expansion / out_channels / repeat), the same schema the plain-text config
format and checkpoints carry, so every built architecture can be dumped,
reloaded and rebuilt exactly.

Families:

* resnet{20,56,110}: CIFAR-style residual nets. A 3x3/16 stem, three groups
  of two-conv basic blocks with widths 16/32/64 (the first block of groups
  2 and 3 downsamples), global average pooling, linear head. Group size is
  (depth - 2) / 6.
* shiftresnet{20,56,110}(expansion): the same skeleton with every basic
  block replaced by a conv-shift-conv block.
* shiftnet{a,b,c}: the larger shift-network family: 7x7/s2 stem of 32
  channels, four conv-shift-conv groups, global average pooling, 1000-way
  head. Variant B halves every group width; C is the shallow 3x3 variant.
* reduce_resnet: module-wise or net-wise parameter-reduction baselines that
  shrink a plain resnet toward a parameter target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import (BasicBlock, CscBlock, CscConfig, GlobalAvgPool, Linear,
                     SeedStream, StemConv, round_half_up)
from .tensor import REAL

VALID_DEPTHS = (20, 56, 110)


@dataclass(frozen=True)
class ArchRow:
    """One architecture table row; `repeat` expands to that many identical blocks."""

    label: str
    type: str                 # conv | csc | sc2 | basic | pool | fc
    out_channels: int = 0
    repeat: int = 1
    stride: int = 1
    kernel: int = 3
    expansion: float = 1.0
    dilation: int = 1
    downsample: str = "add"
    permutation_id: int = 0
    mid_channels: int | None = None


class Network:
    """An ordered stack of layers/blocks with a shared forward/backward protocol."""

    def __init__(self, name: str, rows: list[ArchRow], num_classes: int,
                 seed: int = 0, input_channels: int = 3, dtype=REAL):
        self.name = name
        self.rows = list(rows)
        self.num_classes = num_classes
        self.seed = seed
        self.input_channels = input_channels
        self.layers: list[tuple[str, object]] = []
        seeds = SeedStream(seed)
        width = input_channels
        counters: dict[str, int] = {}
        for row in rows:
            for _ in range(row.repeat):
                lname, layer, width = _make_layer(row, width, num_classes,
                                                  counters, seeds, dtype)
                self.layers.append((lname, layer))

    def forward(self, x: np.ndarray, mode: str = "train") -> np.ndarray:
        h = x
        for _, layer in self.layers:
            h = layer.forward(h, mode)
        return h

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for _, layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def zero_grads(self):
        for _, p in self.named_params():
            p.grad[...] = 0

    def named_params(self):
        return [(f"{lname}.{pname}", p)
                for lname, layer in self.layers
                for pname, p in layer.params()]

    def named_state(self):
        """All persisted arrays: parameters plus batch-norm running statistics."""
        return [(f"{lname}.{aname}", a)
                for lname, layer in self.layers
                for aname, a in layer.state_arrays()]

    def named_blocks(self):
        return [(lname, layer) for lname, layer in self.layers
                if isinstance(layer, (CscBlock, BasicBlock))]

    def cost_entries(self, input_size: int = 32):
        entries = []
        shape = (self.input_channels, input_size, input_size)
        for lname, layer in self.layers:
            es, shape = layer.cost_entries(lname, shape)
            entries.extend(es)
        return entries

    def config(self) -> dict:
        return {
            "name": self.name,
            "num_classes": self.num_classes,
            "seed": self.seed,
            "input_channels": self.input_channels,
            "rows": [_row_to_dict(r) for r in self.rows],
        }


def _make_layer(row: ArchRow, width: int, num_classes: int,
                counters: dict, seeds: SeedStream, dtype):
    if row.type == "conv":
        layer = StemConv(width, row.out_channels, row.kernel, row.stride,
                         seeds.next(), dtype)
        return row.label, layer, row.out_channels
    if row.type in ("csc", "sc2"):
        cfg = CscConfig(width, row.out_channels, row.expansion, row.kernel,
                        row.dilation, row.stride, variant=row.type,
                        downsample=row.downsample,
                        permutation_id=row.permutation_id)
        idx = counters.get(row.label, 0)
        counters[row.label] = idx + 1
        return f"{row.label}.block{idx}", CscBlock(cfg, seeds, dtype), row.out_channels
    if row.type == "basic":
        idx = counters.get(row.label, 0)
        counters[row.label] = idx + 1
        layer = BasicBlock(width, row.out_channels, row.stride, seeds,
                           mid_channels=row.mid_channels, dtype=dtype)
        return f"{row.label}.block{idx}", layer, row.out_channels
    if row.type == "shift":
        from .blocks import Shift
        from .shift import make_shift_spec
        spec = make_shift_spec(width, row.kernel, row.dilation)
        return row.label, Shift(spec), width
    if row.type == "pool":
        return row.label, GlobalAvgPool(), width
    if row.type == "fc":
        return row.label, Linear(width, num_classes, seeds.next(), dtype), num_classes
    raise ValueError(f"unknown row type {row.type!r}")


def _group_size(depth: int) -> int:
    if depth not in VALID_DEPTHS:
        raise ValueError(f"depth must be one of {VALID_DEPTHS}, got {depth}")
    return (depth - 2) // 6


def _cifar_skeleton(depth: int, block_rows) -> list[ArchRow]:
    """Stem + three groups (widths 16/32/64, groups 2 and 3 open with stride 2)."""
    n = _group_size(depth)
    rows = [ArchRow("stem", "conv", 16, kernel=3, stride=1)]
    widths = (16, 32, 64)
    for g, w in enumerate(widths, start=1):
        label = f"group{g}"
        if g == 1:
            rows.extend(block_rows(label, w, stride1_repeat=n, opens_with_stride2=False))
        else:
            rows.extend(block_rows(label, w, stride1_repeat=n - 1,
                                   opens_with_stride2=True))
    rows.append(ArchRow("pool", "pool"))
    rows.append(ArchRow("fc", "fc"))
    return rows


def build_resnet(depth: int, num_classes: int = 10, seed: int = 0,
                 dtype=REAL) -> Network:
    """Plain CIFAR residual network of the given depth."""

    def block_rows(label, w, stride1_repeat, opens_with_stride2):
        rows = []
        if opens_with_stride2:
            rows.append(ArchRow(label, "basic", w, stride=2))
        if stride1_repeat:
            rows.append(ArchRow(label, "basic", w, repeat=stride1_repeat))
        return rows

    return Network(f"resnet{depth}", _cifar_skeleton(depth, block_rows),
                   num_classes, seed, dtype=dtype)


def build_shiftresnet(depth: int, expansion: float, num_classes: int = 10,
                      seed: int = 0, kernel_size: int = 3, dilation: int = 1,
                      dtype=REAL) -> Network:
    """Residual network with every basic block replaced by a conv-shift-conv block."""
    if expansion <= 0:
        raise ValueError("expansion must be positive")

    def block_rows(label, w, stride1_repeat, opens_with_stride2):
        rows = []
        if opens_with_stride2:
            rows.append(ArchRow(label, "csc", w, stride=2, kernel=kernel_size,
                                expansion=expansion, dilation=dilation))
        if stride1_repeat:
            rows.append(ArchRow(label, "csc", w, repeat=stride1_repeat,
                                kernel=kernel_size, expansion=expansion,
                                dilation=dilation))
        return rows

    name = f"shiftresnet{depth}-{expansion:g}"
    return Network(name, _cifar_skeleton(depth, block_rows), num_classes, seed,
                   dtype=dtype)


# (kernel, ds expansion, s1 expansion, out_channels, s1 repeat) per group
_SHIFTNET_A_GROUPS = [
    (5, 4, 4, 64, 4),
    (5, 4, 3, 128, 5),
    (3, 3, 2, 256, 6),
    (3, 2, 1, 512, 2),
]


def _shiftnet_rows(groups, stem_out: int, downsample: str) -> list[ArchRow]:
    rows = [ArchRow("stem", "conv", stem_out, kernel=7, stride=2)]
    for g, (k, ds_exp, s1_exp, out, rep) in enumerate(groups, start=1):
        label = f"group{g}"
        rows.append(ArchRow(label, "csc", out, stride=2, kernel=k,
                            expansion=ds_exp, downsample=downsample))
        if rep:
            rows.append(ArchRow(label, "csc", out, repeat=rep, kernel=k,
                                expansion=s1_exp, downsample=downsample))
    rows.append(ArchRow("pool", "pool"))
    rows.append(ArchRow("fc", "fc"))
    return rows


def build_shiftnet(variant: str, num_classes: int = 1000, seed: int = 0,
                   dtype=REAL) -> Network:
    """Shift-network variants A (tabulated), B (half width) and C (shallow).

    A and B downsample concat-style (pooled shortcut prepended to a narrower
    main path); the shallow C keeps the additive pooled shortcut.
    """
    v = variant.lower()
    if v == "a":
        rows = _shiftnet_rows(_SHIFTNET_A_GROUPS, 32, "concat")
    elif v == "b":
        halved = [(k, de, se, out // 2, rep)
                  for k, de, se, out, rep in _SHIFTNET_A_GROUPS]
        rows = _shiftnet_rows(halved, 32, "concat")
    elif v == "c":
        groups = [(3, 1, 1, 32, 0), (3, 1, 1, 64, 3),
                  (3, 1, 1, 128, 3), (3, 1, 1, 256, 2)]
        rows = _shiftnet_rows(groups, 32, "add")
    else:
        raise ValueError(f"unknown shiftnet variant {variant!r}")
    return Network(f"shiftnet-{v}", rows, num_classes, seed, dtype=dtype)


def scaled_resnet(depth: int, scale: float, mode: str, num_classes: int = 10,
                  seed: int = 0, dtype=REAL) -> Network:
    """Plain resnet shrunk by `scale` in one of the two reduction styles.

    module_wise narrows each block's first convolution; net_wise scales every
    block's input/output width (stride-2 shortcuts zero-pad the channel gap
    when rounding breaks exact doubling).
    """
    if mode not in ("module_wise", "net_wise"):
        raise ValueError(f"unknown reduction mode {mode!r}")
    if not 0 < scale <= 1:
        raise ValueError("scale must be in (0, 1]")
    n = _group_size(depth)
    widths = (16, 32, 64)
    if mode == "net_wise":
        new_widths = tuple(max(1, round_half_up(scale * w)) for w in widths)
        rows = [ArchRow("stem", "conv", new_widths[0], kernel=3, stride=1)]
        for g, w in enumerate(new_widths, start=1):
            label = f"group{g}"
            if g == 1:
                rows.append(ArchRow(label, "basic", w, repeat=n))
            else:
                rows.append(ArchRow(label, "basic", w, stride=2))
                rows.append(ArchRow(label, "basic", w, repeat=n - 1))
    else:
        rows = [ArchRow("stem", "conv", 16, kernel=3, stride=1)]
        for g, w in enumerate(widths, start=1):
            label = f"group{g}"
            mid = max(1, round_half_up(scale * w))
            if g == 1:
                rows.append(ArchRow(label, "basic", w, repeat=n, mid_channels=mid))
            else:
                rows.append(ArchRow(label, "basic", w, stride=2, mid_channels=mid))
                rows.append(ArchRow(label, "basic", w, repeat=n - 1, mid_channels=mid))
    rows.append(ArchRow("pool", "pool"))
    rows.append(ArchRow("fc", "fc"))
    name = f"resnet{depth}-{mode}-{scale:.4f}"
    return Network(name, rows, num_classes, seed, dtype=dtype)


def reduce_resnet(depth: int, target_params: int, mode: str,
                  num_classes: int = 10, seed: int = 0, dtype=REAL) -> Network:
    """Largest scaled resnet whose parameter count is <= 1.02 * target_params."""
    from .accounting import count_params

    full = count_params(build_resnet(depth, num_classes, seed, dtype))
    if target_params >= full:
        raise ValueError(f"target {target_params} not below the full model's {full}")
    limit = 1.02 * target_params

    def params_at(s: float) -> int:
        return count_params(scaled_resnet(depth, s, mode, num_classes, seed, dtype))

    lo, hi = 1e-3, 1.0
    if params_at(lo) > limit:
        raise ValueError(f"target {target_params} unreachable even at minimum width")
    for _ in range(40):
        midpoint = 0.5 * (lo + hi)
        if params_at(midpoint) <= limit:
            lo = midpoint
        else:
            hi = midpoint
    return scaled_resnet(depth, lo, mode, num_classes, seed, dtype)


def build_by_name(name: str, expansion: float = 1.0, num_classes: int | None = None,
                  seed: int = 0, dtype=REAL) -> Network:
    """CLI-facing dispatch: resnet{depth}, shiftresnet{depth}, shiftnet{a,b,c}."""
    key = name.lower()
    if key.startswith("shiftresnet"):
        depth = int(key[len("shiftresnet"):])
        return build_shiftresnet(depth, expansion, num_classes or 10, seed, dtype=dtype)
    if key.startswith("resnet"):
        depth = int(key[len("resnet"):])
        return build_resnet(depth, num_classes or 10, seed, dtype=dtype)
    if key.startswith("shiftnet") and len(key) == len("shiftnet") + 1:
        return build_shiftnet(key[-1], num_classes or 1000, seed, dtype=dtype)
    raise ValueError(f"unknown architecture {name!r}")


# --- plain-text architecture configs -------------------------------------

_ROW_DEFAULTS = ArchRow("", "")


def _row_to_dict(row: ArchRow) -> dict:
    d = {"label": row.label, "type": row.type}
    core = ("stride", "kernel", "expansion", "out_channels", "repeat")
    for key in core + ("dilation", "downsample", "permutation_id", "mid_channels"):
        val = getattr(row, key)
        if val != getattr(_ROW_DEFAULTS, key) or \
                (key in core and row.type in ("conv", "csc", "sc2", "basic")):
            d[key] = val
    return d


def _row_from_dict(d: dict) -> ArchRow:
    kwargs = dict(d)
    if "expansion" in kwargs:
        kwargs["expansion"] = float(kwargs["expansion"])
    for key in ("out_channels", "repeat", "stride", "kernel", "dilation",
                "permutation_id", "mid_channels"):
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = int(kwargs[key])
    return ArchRow(**kwargs)


def dump_config(net: Network) -> str:
    """Architecture as key=value sections, one per table row."""
    lines = ["[net]", f"name = {net.name}", f"num_classes = {net.num_classes}",
             f"seed = {net.seed}", ""]
    for i, row in enumerate(net.rows):
        lines.append(f"[row{i}]")
        for key, val in _row_to_dict(row).items():
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> dict:
    """Parse dump_config output back into a config dict for rebuild()."""
    sections: list[tuple[str, dict]] = []
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = {}
            sections.append((line[1:-1], current))
            continue
        if current is None or "=" not in line:
            raise ValueError(f"config line outside a section: {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        current[key] = val
    meta = {"name": "custom", "num_classes": 10, "seed": 0, "input_channels": 3}
    rows = []
    for header, body in sections:
        if header == "net":
            meta["name"] = body.get("name", meta["name"])
            for key in ("num_classes", "seed", "input_channels"):
                if key in body:
                    meta[key] = int(body[key])
        else:
            rows.append(_row_from_dict(body))
    if not rows:
        raise ValueError("config defines no rows")
    meta["rows"] = [_row_to_dict(r) for r in rows]
    return meta


def rebuild(config: dict, dtype=REAL) -> Network:
    """Reconstruct a network from a config dict (as produced by Network.config)."""
    rows = [_row_from_dict(d) for d in config["rows"]]
    return Network(config["name"], rows, int(config["num_classes"]),
                   int(config.get("seed", 0)),
                   int(config.get("input_channels", 3)), dtype=dtype)
