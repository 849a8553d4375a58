"""Analytic parameter and multiply-accumulate accounting.

Counting convention (frozen; the golden comparisons depend on it):
  * params: every learnable scalar, including norm affines and relative-bias
    tables; batch-norm running statistics are state, not parameters.
  * MACs: one per multiply-accumulate, for a single image. Convs cost
    kh*kw*cin*cout*hout*wout, dense layers tokens*cin*cout, attention its two
    batched matmuls plus the q/k/v/output projections. Normalization,
    activations, softmax, pooling, residual adds, and the bias-table gather
    count zero.

The walker mirrors build_model layer for layer (verified by tests comparing
against count_params of real models), so B/L/XL can be audited without
allocating hundreds of millions of floats.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .model import MaxVitModel, default_window, named_parameters, resolve_variant

__all__ = ["LayerCount", "ModelCount", "count_model", "count_params", "count_flops"]


@dataclass(frozen=True)
class LayerCount:
    name: str    # dotted path, mirrors parameter naming
    kind: str    # conv3x3 | conv1x1 | dwconv | norm | dense | bias_table | attn_matmul
    params: int
    macs: int


@dataclass(frozen=True)
class ModelCount:
    variant: str
    resolution: int
    window: int
    grid_size: int
    layers: tuple[LayerCount, ...]
    total_params: int
    total_macs: int

    def stage_totals(self) -> dict[str, tuple[int, int]]:
        """prefix -> (params, macs) aggregated over stem / stages / head."""
        out: dict[str, tuple[int, int]] = {}
        for lc in self.layers:
            key = lc.name.split(".")[0]
            if key == "stages":
                key = "stage" + lc.name.split(".")[1]
            p, m = out.get(key, (0, 0))
            out[key] = (p + lc.params, m + lc.macs)
        return out

    def layers_matching(self, needle: str) -> list[LayerCount]:
        return [lc for lc in self.layers if needle in lc.name]


def _attention_layer_counts(prefix: str, kind: str, channels: int, size: int, head_dim: int, mlp_expansion: int, tokens: int):
    """Per-layer records for one attention layer at a given token count."""
    heads = channels // head_dim
    window_tokens = size * size
    hidden = channels * mlp_expansion
    return [
        LayerCount(f"{prefix}.norm1", "norm", 2 * channels, 0),
        LayerCount(f"{prefix}.attn.wq", "dense", channels * channels, tokens * channels * channels),
        LayerCount(f"{prefix}.attn.wk", "dense", channels * channels, tokens * channels * channels),
        LayerCount(f"{prefix}.attn.wv", "dense", channels * channels, tokens * channels * channels),
        LayerCount(
            f"{prefix}.attn.bias_table", "bias_table", heads * (2 * size - 1) ** 2, 0
        ),
        LayerCount(f"{prefix}.attn.logits", "attn_matmul", 0, tokens * window_tokens * channels),
        LayerCount(f"{prefix}.attn.weighted_sum", "attn_matmul", 0, tokens * window_tokens * channels),
        LayerCount(
            f"{prefix}.attn.wo", "dense", channels * channels + channels, tokens * channels * channels
        ),
        LayerCount(f"{prefix}.norm2", "norm", 2 * channels, 0),
        LayerCount(f"{prefix}.mlp.fc1", "dense", channels * hidden + hidden, tokens * channels * hidden),
        LayerCount(f"{prefix}.mlp.fc2", "dense", hidden * channels + channels, tokens * hidden * channels),
    ]


def _mbconv_counts(prefix: str, cin: int, cout: int, stride: int, expansion: int, se_ratio: float, h_in: int, w_in: int):
    mid = expansion * cout
    bottleneck = max(1, int(round(se_ratio * cout)))
    h_out, w_out = h_in // stride, w_in // stride
    n_in, n_out = h_in * w_in, h_out * w_out
    layers = [
        LayerCount(f"{prefix}.pre_norm", "norm", 2 * cin, 0),
        LayerCount(f"{prefix}.expand", "conv1x1", cin * mid, cin * mid * n_in),
        LayerCount(f"{prefix}.norm1", "norm", 2 * mid, 0),
        LayerCount(f"{prefix}.dw", "dwconv", 9 * mid, 9 * mid * n_out),
        LayerCount(f"{prefix}.norm2", "norm", 2 * mid, 0),
        LayerCount(f"{prefix}.se.reduce", "dense", mid * bottleneck + bottleneck, mid * bottleneck),
        LayerCount(f"{prefix}.se.expand", "dense", bottleneck * mid + mid, bottleneck * mid),
        LayerCount(f"{prefix}.proj", "conv1x1", mid * cout + cout, mid * cout * n_out),
    ]
    if stride == 2 or cin != cout:
        layers.append(LayerCount(f"{prefix}.shortcut", "conv1x1", cin * cout + cout, cin * cout * n_out))
    return layers


def count_model(variant, resolution: int = 224, num_classes: int = 1000, window: int | None = None) -> ModelCount:
    """Full per-layer accounting for a variant at a square input resolution."""
    spec = resolve_variant(variant)
    if window is None and resolution % 32 == 0:
        window = default_window(resolution)
    if window is not None:
        from dataclasses import replace

        spec = replace(spec, window=window, grid_size=window)
    if resolution < 4 or resolution % 4:
        raise ConfigError(f"resolution {resolution} must be a positive multiple of 4")
    layers: list[LayerCount] = []
    h = w = resolution // 2
    cs = spec.stem_channels
    layers.append(LayerCount("stem.conv1", "conv3x3", 9 * 3 * cs, 9 * 3 * cs * h * w))
    layers.append(LayerCount("stem.norm", "norm", 2 * cs, 0))
    layers.append(LayerCount("stem.conv2", "conv3x3", 9 * cs * cs + cs, 9 * cs * cs * h * w))
    cin = cs
    for si, stage in enumerate(spec.stages):
        for b in range(stage.depth):
            stride = 2 if b == 0 else 1
            prefix = f"stages.{si}.{b}"
            width = cin
            for piece in spec.block_order:
                if piece == "conv":
                    layers.extend(
                        _mbconv_counts(f"{prefix}.conv", cin, stage.channels, stride, spec.conv_expansion, spec.se_ratio, h, w)
                    )
                    h, w = h // stride, w // stride
                    width = stage.channels
                else:
                    kind = "block_attn" if piece == "block_attn" else "grid_attn"
                    size = spec.window if piece == "block_attn" else spec.grid_size
                    layers.extend(
                        _attention_layer_counts(f"{prefix}.{kind}", kind, width, size, spec.head_dim, spec.mlp_expansion, h * w)
                    )
            cin = stage.channels
    last = spec.stages[-1].channels
    layers.append(LayerCount("head", "dense", last * num_classes + num_classes, last * num_classes))
    return ModelCount(
        variant=spec.name,
        resolution=resolution,
        window=spec.window,
        grid_size=spec.grid_size,
        layers=tuple(layers),
        total_params=sum(l.params for l in layers),
        total_macs=sum(l.macs for l in layers),
    )


def count_params(model: MaxVitModel) -> int:
    """Exact learnable-scalar count of a built model (sums real tensor sizes)."""
    return sum(t.size for _, t in named_parameters(model))


def count_flops(variant, resolution: int = 224, num_classes: int = 1000, window: int | None = None) -> int:
    """Total analytic MACs for one image; see module docstring for the convention."""
    if isinstance(variant, MaxVitModel):
        return count_model(variant.variant, resolution, variant.num_classes).total_macs
    return count_model(variant, resolution, num_classes, window).total_macs
