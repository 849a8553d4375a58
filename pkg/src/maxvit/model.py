"""The hierarchical backbone: conv stem, stacked hybrid stages, classifier head.

Every stage block applies, in a configurable order, an inverted-bottleneck
convolution (which carries all downsampling), local window attention, and
dilated grid attention. Default order is conv -> block attention -> grid
attention; widths double stage to stage while resolution halves.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, is_dataclass, replace
from typing import Optional

import numpy as np

from . import ops
from .attention import (
    AttentionLayerParams,
    attention_layer,
    build_bias_index,
    init_attention_layer,
    interpolate_bias,
)
from .errors import ConfigError, DataError, DimensionError, PartitionError
from .nn import (
    BatchNormParams,
    ConvParams,
    DepthwiseParams,
    LinearParams,
    SeParams,
    batch_norm,
    conv,
    depthwise,
    global_avg_pool,
    init_batch_norm,
    init_conv,
    init_depthwise,
    init_linear,
    init_se,
    linear,
    se_module,
)
from .tensor import Tensor, default_dtype, load_tensor, save_tensor

__all__ = [
    "StageSpec", "VariantSpec", "VARIANTS", "TOY_VARIANT", "resolve_variant",
    "default_window", "MbConvParams", "mbconv_forward", "MaxVitBlockParams",
    "StemParams", "MaxVitModel", "build_model", "forward",
    "named_parameters", "parameter_slots", "named_buffers",
    "with_window", "save_model", "load_model",
]

CHECKPOINT_VERSION = 1


# -- variant registry ---------------------------------------------------------

@dataclass(frozen=True)
class StageSpec:
    depth: int
    channels: int


@dataclass(frozen=True)
class VariantSpec:
    """Complete architectural description; models are built from this alone."""

    name: str
    stem_channels: int
    stages: tuple[StageSpec, ...]
    window: int = 7           # block-attention window P
    grid_size: int = 7        # grid-attention lattice G
    head_dim: int = 32
    conv_expansion: int = 4
    se_ratio: float = 0.25
    mlp_expansion: int = 4
    block_order: tuple[str, ...] = ("conv", "block_attn", "grid_attn")

    def validate(self) -> None:
        if sorted(self.block_order) != ["block_attn", "conv", "grid_attn"]:
            raise ConfigError(
                f"block_order must arrange ('conv', 'block_attn', 'grid_attn'), got {self.block_order}"
            )
        if self.stem_channels < 1 or not self.stages:
            raise ConfigError(f"invalid variant {self.name}: empty stem or stages")
        for s in self.stages:
            if s.depth < 1 or s.channels < 1:
                raise ConfigError(f"invalid stage spec {s}")
            if s.channels % self.head_dim:
                raise ConfigError(
                    f"stage width {s.channels} not divisible by head_dim {self.head_dim}"
                )
        if self.window < 1 or self.grid_size < 1:
            raise ConfigError(f"window/grid must be positive, got {self.window}/{self.grid_size}")


def _mk(name, stem, chans, depths) -> VariantSpec:
    return VariantSpec(name, stem, tuple(StageSpec(d, c) for d, c in zip(depths, chans)))


VARIANTS: dict[str, VariantSpec] = {
    "T": _mk("T", 64, (64, 128, 256, 512), (2, 2, 5, 2)),
    "S": _mk("S", 64, (96, 192, 384, 768), (2, 2, 5, 2)),
    "B": _mk("B", 64, (96, 192, 384, 768), (2, 6, 14, 2)),
    "L": _mk("L", 128, (128, 256, 512, 1024), (2, 6, 14, 2)),
    "XL": _mk("XL", 192, (192, 384, 768, 1536), (2, 6, 14, 2)),
}

# Desk-scale layout for the training demo: same stage structure, 112x112 input
# (stem -> 56, stages -> 28, 14, 7; every attention site divisible by 7).
TOY_VARIANT = VariantSpec(
    name="toy",
    stem_channels=16,
    stages=(StageSpec(1, 16), StageSpec(1, 16), StageSpec(1, 32)),
    head_dim=16,
)


def resolve_variant(variant) -> VariantSpec:
    if isinstance(variant, VariantSpec):
        spec = variant
    elif isinstance(variant, str):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        spec = VARIANTS[variant]
    else:
        raise ConfigError(f"variant must be a name or VariantSpec, got {type(variant).__name__}")
    spec.validate()
    return spec


def default_window(resolution: int) -> int:
    """Window/grid size for a square input resolution.

    The deepest stage runs at resolution/32, so the size must divide it.
    Prefers 7; otherwise the smallest divisor of resolution/32 that is >= 7
    (so 224 -> 7, 384 -> 12, 448 -> 7, 512 -> 8), falling back to
    resolution/32 itself.
    """
    if resolution % 32:
        raise ConfigError(f"resolution {resolution} must be a multiple of 32")
    last = resolution // 32
    if last % 7 == 0:
        return 7
    for cand in range(7, last + 1):
        if last % cand == 0:
            return cand
    return last


# -- inverted-bottleneck conv block ---------------------------------------------

@dataclass
class MbConvParams:
    """Pre-norm inverted bottleneck with channel gating; owns any downsampling."""

    pre_norm: BatchNormParams
    expand: ConvParams            # 1x1 to expansion width, no bias
    norm1: BatchNormParams
    dw: DepthwiseParams           # 3x3, stride 1 or 2
    norm2: BatchNormParams
    se: SeParams
    proj: ConvParams              # 1x1 to output width, bias
    shortcut: Optional[ConvParams]  # 1x1 on the (pooled) identity path
    stride: int


def init_mbconv(rng, cin: int, cout: int, stride: int, expansion: int, se_ratio: float, dtype=None) -> MbConvParams:
    mid = expansion * cout
    shortcut = None
    if stride == 2 or cin != cout:
        shortcut = init_conv(rng, 1, cin, cout, stride=1, bias=True, dtype=dtype)
    return MbConvParams(
        pre_norm=init_batch_norm(cin, dtype),
        expand=init_conv(rng, 1, cin, mid, stride=1, bias=False, dtype=dtype),
        norm1=init_batch_norm(mid, dtype),
        dw=init_depthwise(rng, 3, mid, stride=stride, dtype=dtype),
        norm2=init_batch_norm(mid, dtype),
        se=init_se(rng, mid, bottleneck=max(1, int(round(se_ratio * cout))), dtype=dtype),
        proj=init_conv(rng, 1, mid, cout, stride=1, bias=True, dtype=dtype),
        shortcut=shortcut,
        stride=stride,
    )


def mbconv_forward(x: Tensor, p: MbConvParams, training: bool = False) -> Tensor:
    y = batch_norm(x, p.pre_norm, training)
    y = conv(y, p.expand)
    y = ops.gelu(batch_norm(y, p.norm1, training))
    y = depthwise(y, p.dw)
    y = ops.gelu(batch_norm(y, p.norm2, training))
    y = se_module(y, p.se)
    y = conv(y, p.proj)
    if p.stride == 2:
        sc = conv(ops.avg_pool2d(x, 2), p.shortcut)
    elif p.shortcut is not None:
        sc = conv(x, p.shortcut)
    else:
        sc = x
    return ops.add(sc, y)


# -- one hybrid stage block --------------------------------------------------------

@dataclass
class MaxVitBlockParams:
    order: tuple[str, ...]
    conv: MbConvParams
    block_attn: AttentionLayerParams
    grid_attn: AttentionLayerParams


def init_stage_block(rng, spec: VariantSpec, cin: int, cout: int, stride: int, dtype=None) -> MaxVitBlockParams:
    # Sub-layers created in execution order so parameter draws follow the data
    # path; attention width depends on whether the conv has run yet.
    width = cin
    parts: dict[str, object] = {}
    for piece in spec.block_order:
        if piece == "conv":
            parts["conv"] = init_mbconv(rng, cin, cout, stride, spec.conv_expansion, spec.se_ratio, dtype)
            width = cout
        elif piece == "block_attn":
            parts["block_attn"] = init_attention_layer(
                rng, "block", width, spec.window, spec.head_dim, spec.mlp_expansion, dtype
            )
        else:
            parts["grid_attn"] = init_attention_layer(
                rng, "grid", width, spec.grid_size, spec.head_dim, spec.mlp_expansion, dtype
            )
    return MaxVitBlockParams(order=spec.block_order, **parts)


def stage_block_forward(x: Tensor, p: MaxVitBlockParams, training: bool = False) -> Tensor:
    for piece in p.order:
        if piece == "conv":
            x = mbconv_forward(x, p.conv, training)
        elif piece == "block_attn":
            x = attention_layer(x, p.block_attn)
        else:
            x = attention_layer(x, p.grid_attn)
    return x


# -- the full model -----------------------------------------------------------------

@dataclass
class StemParams:
    conv1: ConvParams  # 3x3 stride 2, no bias (normalized right after)
    norm: BatchNormParams
    conv2: ConvParams  # 3x3 stride 1, bias


@dataclass
class MaxVitModel:
    variant: VariantSpec
    num_classes: int
    seed: int
    stem: StemParams
    stages: list[list[MaxVitBlockParams]]
    head: LinearParams


def build_model(variant="T", num_classes: int = 1000, seed: int = 0, dtype=None) -> MaxVitModel:
    """Deterministic construction: same variant/classes/seed => bitwise-equal weights."""
    spec = resolve_variant(variant)
    if num_classes < 1:
        raise ConfigError(f"num_classes must be positive, got {num_classes}")
    dt = dtype or default_dtype()
    rng = np.random.default_rng(seed)
    stem = StemParams(
        conv1=init_conv(rng, 3, 3, spec.stem_channels, stride=2, bias=False, dtype=dt),
        norm=init_batch_norm(spec.stem_channels, dt),
        conv2=init_conv(rng, 3, spec.stem_channels, spec.stem_channels, stride=1, bias=True, dtype=dt),
    )
    stages: list[list[MaxVitBlockParams]] = []
    cin = spec.stem_channels
    for stage in spec.stages:
        blocks = []
        for b in range(stage.depth):
            stride = 2 if b == 0 else 1
            blocks.append(init_stage_block(rng, spec, cin, stage.channels, stride, dt))
            cin = stage.channels
        stages.append(blocks)
    head = init_linear(rng, spec.stages[-1].channels, num_classes, bias=True, dtype=dt)
    return MaxVitModel(spec, num_classes, seed, stem, stages, head)


def validate_geometry(spec: VariantSpec, height: int, width: int) -> None:
    """Check the whole resolution schedule before any compute happens.

    Raises PartitionError naming every stride-2 site with an odd extent and
    every attention site whose extent the window/grid does not divide.
    """
    problems = []
    if height % 2 or width % 2:
        problems.append(f"stem downsample: extent ({height}, {width}) is odd")
    h, w = -(-height // 2), -(-width // 2)
    for si, stage in enumerate(spec.stages):
        for b in range(stage.depth):
            for piece in spec.block_order:
                if piece == "conv":
                    if b == 0:
                        if h % 2 or w % 2:
                            problems.append(f"stage {si} block {b} downsample: extent ({h}, {w}) is odd")
                        h, w = -(-h // 2), -(-w // 2)
                else:
                    size = spec.window if piece == "block_attn" else spec.grid_size
                    kind = "block" if piece == "block_attn" else "grid"
                    if h % size or w % size:
                        problems.append(
                            f"stage {si} block {b} {kind} attention: extent ({h}, {w}) not divisible by {size}"
                        )
    if problems:
        raise PartitionError("; ".join(problems))


def forward(model: MaxVitModel, images: Tensor, training: bool = False) -> Tensor:
    """Images (batch, H, W, 3) NHWC in [any real range] -> logits (batch, classes)."""
    if images.ndim != 4 or images.shape[-1] != 3:
        raise DimensionError(f"forward expects (batch, H, W, 3) images, got {images.shape}")
    validate_geometry(model.variant, images.shape[1], images.shape[2])
    x = conv(images, model.stem.conv1)
    x = ops.gelu(batch_norm(x, model.stem.norm, training))
    x = conv(x, model.stem.conv2)
    for blocks in model.stages:
        for blk in blocks:
            x = stage_block_forward(x, blk, training)
    pooled = global_avg_pool(x)
    return linear(pooled, model.head)


# -- parameter traversal --------------------------------------------------------------

def parameter_slots(model) -> list[tuple[str, object, object]]:
    """(dotted_name, holder, key) for every learnable tensor, in build order.

    `holder` is the owning dataclass or list and `key` the attribute name or
    index, so optimizers can write updated tensors back without re-walking.
    """
    slots: list[tuple[str, object, object]] = []

    def visit(obj, prefix):
        if isinstance(obj, Tensor):
            raise AssertionError("tensors are collected at their holder, not standalone")
        if isinstance(obj, (list, tuple)):
            for i, item in enumerate(obj):
                if isinstance(item, (list, tuple)) or is_dataclass(item):
                    visit(item, f"{prefix}.{i}")
            return
        if not is_dataclass(obj) or isinstance(obj, VariantSpec):
            return
        for f in fields(obj):
            val = getattr(obj, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            if isinstance(val, Tensor):
                slots.append((name, obj, f.name))
            elif isinstance(val, (list, tuple)) or is_dataclass(val):
                visit(val, name)

    visit(model, "")
    return slots


def named_parameters(model) -> list[tuple[str, Tensor]]:
    return [(name, getattr(holder, key)) for name, holder, key in parameter_slots(model)]


def named_buffers(model: MaxVitModel) -> list[tuple[str, np.ndarray]]:
    """Non-learnable state: batch-norm running statistics, in build order."""
    out: list[tuple[str, np.ndarray]] = []

    def visit(obj, prefix):
        if isinstance(obj, (list, tuple)):
            for i, item in enumerate(obj):
                visit(item, f"{prefix}.{i}")
            return
        if not is_dataclass(obj) or isinstance(obj, VariantSpec):
            return
        for f in fields(obj):
            val = getattr(obj, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            if isinstance(val, np.ndarray) and not isinstance(val, Tensor) and val.dtype.kind == "f":
                out.append((name, val))
            elif isinstance(val, (list, tuple)) or is_dataclass(val):
                visit(val, name)

    visit(model, "")
    return out


def _find_holder(model, name: str):
    parts = name.split(".")
    obj = model
    for part in parts[:-1]:
        obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
    return obj, parts[-1]


# -- window transfer --------------------------------------------------------------------

def with_window(model: MaxVitModel, window: int, grid_size: Optional[int] = None) -> MaxVitModel:
    """Model for a new window/grid size; bias tables resampled, all else shared.

    Used to run a trained model at a different input resolution: parameter
    counts change only by the bias-table extents.
    """
    grid_size = grid_size if grid_size is not None else window
    spec = replace(model.variant, window=window, grid_size=grid_size)
    spec.validate()

    def convert(layer: AttentionLayerParams) -> AttentionLayerParams:
        old = model.variant.window if layer.kind == "block" else model.variant.grid_size
        new = window if layer.kind == "block" else grid_size
        return AttentionLayerParams(
            kind=layer.kind,
            norm1=layer.norm1,
            attn=replace(
                layer.attn,
                bias_table=interpolate_bias(layer.attn.bias_table, old, new),
                window=new,
            ),
            norm2=layer.norm2,
            mlp=layer.mlp,
            index=build_bias_index(new),
        )

    stages = [
        [
            MaxVitBlockParams(
                order=blk.order,
                conv=blk.conv,
                block_attn=convert(blk.block_attn),
                grid_attn=convert(blk.grid_attn),
            )
            for blk in blocks
        ]
        for blocks in model.stages
    ]
    return MaxVitModel(spec, model.num_classes, model.seed, model.stem, stages, model.head)


# -- checkpoints --------------------------------------------------------------------------

def _spec_to_dict(spec: VariantSpec) -> dict:
    return {
        "name": spec.name,
        "stem_channels": spec.stem_channels,
        "stages": [[s.depth, s.channels] for s in spec.stages],
        "window": spec.window,
        "grid_size": spec.grid_size,
        "head_dim": spec.head_dim,
        "conv_expansion": spec.conv_expansion,
        "se_ratio": spec.se_ratio,
        "mlp_expansion": spec.mlp_expansion,
        "block_order": list(spec.block_order),
    }


def _spec_from_dict(d: dict) -> VariantSpec:
    try:
        return VariantSpec(
            name=d["name"],
            stem_channels=d["stem_channels"],
            stages=tuple(StageSpec(int(a), int(b)) for a, b in d["stages"]),
            window=d["window"],
            grid_size=d["grid_size"],
            head_dim=d["head_dim"],
            conv_expansion=d["conv_expansion"],
            se_ratio=d["se_ratio"],
            mlp_expansion=d["mlp_expansion"],
            block_order=tuple(d["block_order"]),
        )
    except (KeyError, TypeError) as e:
        raise DataError(f"malformed variant record in manifest: {e}") from e


def save_model(model: MaxVitModel, directory) -> None:
    """Write manifest.json plus one tensor file per parameter and buffer."""
    os.makedirs(directory, exist_ok=True)
    params = named_parameters(model)
    buffers = named_buffers(model)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "variant": _spec_to_dict(model.variant),
        "num_classes": model.num_classes,
        "seed": model.seed,
        "dtype": "f64" if params[0][1].dtype == np.float64 else "f32",
        "parameters": [name for name, _ in params],
        "buffers": [name for name, _ in buffers],
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    for name, t in params:
        save_tensor(t, os.path.join(directory, name + ".tensor"))
    for name, arr in buffers:
        save_tensor(Tensor(arr.copy()), os.path.join(directory, name + ".tensor"))


def load_model(directory) -> MaxVitModel:
    """Rebuild the architecture from the manifest and load every tensor back."""
    try:
        with open(os.path.join(directory, "manifest.json")) as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise DataError(f"no manifest.json in {directory}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt manifest.json in {directory}: {e}") from e
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {manifest.get('format_version')}")
    spec = _spec_from_dict(manifest["variant"])
    dt = np.float64 if manifest.get("dtype") == "f64" else np.float32
    model = build_model(spec, num_classes=manifest["num_classes"], seed=manifest["seed"], dtype=dt)

    expected = [name for name, _ in named_parameters(model)]
    if manifest["parameters"] != expected:
        raise DataError("checkpoint parameter order does not match the rebuilt architecture")
    for name in manifest["parameters"]:
        t = load_tensor(os.path.join(directory, name + ".tensor"))
        holder, key = _find_holder(model, name)
        current = getattr(holder, key)
        if t.shape != current.shape:
            raise DataError(f"checkpoint tensor {name} has shape {t.shape}, expected {current.shape}")
        setattr(holder, key, t.astype(dt))
    for name in manifest.get("buffers", []):
        t = load_tensor(os.path.join(directory, name + ".tensor"))
        holder, key = _find_holder(model, name)
        setattr(holder, key, t.data.astype(dt).copy())
    return model
