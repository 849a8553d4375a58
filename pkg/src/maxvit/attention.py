"""Relative self-attention over partitioned windows, and its position-bias tables.

A window of P x P tokens gets a learned additive logit bias b[i, j] that
depends only on the 2-D displacement between token i and token j. Displacements
live in [-(P-1), P-1]^2, so each head owns a (2P-1)^2-entry table shared by all
windows; build_bias_index precomputes the (P^2, P^2) table lookup. Grid
attention reuses the same machinery: a dilated group is indexed by its G x G
lattice coordinates, so displacements are in grid space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .axes import block, grid, unblock, ungrid
from .errors import ConfigError, DimensionError
from .nn import LayerNormParams, LinearParams, MlpParams, init_layer_norm, init_linear, init_mlp, layer_norm, linear, mlp_ffn
from .tensor import Tensor, default_dtype

__all__ = [
    "build_bias_index", "init_bias_table", "interpolate_bias",
    "rel_attention", "AttentionParams", "AttentionLayerParams",
    "init_attention", "init_attention_layer",
    "multi_head_attention", "attention_layer",
]


def build_bias_index(window: int) -> np.ndarray:
    """(P^2, P^2) lookup: entry (i, j) indexes the bias of displacement i - j.

    Token coordinates are row-major; displacement (dr, dc) maps to the flat
    table slot (dr + P - 1) * (2P - 1) + (dc + P - 1).
    """
    if window < 1:
        raise ConfigError(f"window must be positive, got {window}")
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij"), axis=-1).reshape(-1, 2)
    delta = coords[:, None, :] - coords[None, :, :]  # (L, L, 2) in [-(P-1), P-1]
    return ((delta[..., 0] + window - 1) * (2 * window - 1) + (delta[..., 1] + window - 1)).astype(np.int64)


def init_bias_table(heads: int, window: int, dtype=None) -> Tensor:
    """Zero-initialised per-head table of all (2P-1)^2 displacement biases."""
    return Tensor(np.zeros((heads, (2 * window - 1) ** 2), dtype=dtype or default_dtype()))


def interpolate_bias(table: Tensor, window: int, new_window: int) -> Tensor:
    """Resample a bias table to a new window size, per head.

    Each head's flat table is viewed as its (2P-1) x (2P-1) displacement
    image and resized bilinearly with corner alignment, so the extreme
    displacements map onto each other and P' == P is the identity.
    """
    heads = table.shape[0]
    side = 2 * window - 1
    if table.shape != (heads, side * side):
        raise DimensionError(f"bias table {table.shape} does not match window {window}")
    if new_window < 1:
        raise ConfigError(f"window must be positive, got {new_window}")
    if new_window == window:
        return Tensor(table.data.copy())
    new_side = 2 * new_window - 1
    src = table.data.reshape(heads, side, side)

    # axis positions under corner alignment; a single-point axis samples the center
    if new_side == 1:
        pos = np.array([(side - 1) / 2.0])
    else:
        pos = np.arange(new_side) * (side - 1) / (new_side - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, side - 1)
    frac = pos - lo

    rows = src[:, lo, :] * (1.0 - frac)[None, :, None] + src[:, hi, :] * frac[None, :, None]
    out = rows[:, :, lo] * (1.0 - frac)[None, None, :] + rows[:, :, hi] * frac[None, None, :]
    return Tensor(out.reshape(heads, new_side * new_side).astype(table.dtype))


def rel_attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d) + bias) v over the last two axes.

    q, k, v: (*batch, L, d) with identical shapes; bias broadcasts against the
    (*batch, L, L) logits (typically (heads, L, L) vs (b, windows, heads, L, L)).
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"rel_attention: q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    logits = ops.matmul(ops.scale(q, 1.0 / float(np.sqrt(d))), ops.swapaxes(k, -1, -2))
    logits = ops.add(logits, bias)
    return ops.matmul(ops.softmax_lastdim(logits), v)


@dataclass
class AttentionParams:
    """One multi-head relative-attention core for a fixed window size."""

    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams
    bias_table: Tensor       # (heads, (2P-1)^2)
    window: int
    head_dim: int

    @property
    def heads(self) -> int:
        return self.bias_table.shape[0]


def init_attention(rng, channels: int, window: int, head_dim: int = 32, dtype=None) -> AttentionParams:
    if channels % head_dim:
        raise ConfigError(f"channels {channels} not divisible by head_dim {head_dim}")
    heads = channels // head_dim
    return AttentionParams(
        wq=init_linear(rng, channels, channels, bias=False, dtype=dtype),
        wk=init_linear(rng, channels, channels, bias=False, dtype=dtype),
        wv=init_linear(rng, channels, channels, bias=False, dtype=dtype),
        wo=init_linear(rng, channels, channels, bias=True, dtype=dtype),
        bias_table=init_bias_table(heads, window, dtype),
        window=window,
        head_dim=head_dim,
    )


def multi_head_attention(tokens: Tensor, p: AttentionParams, index: np.ndarray) -> Tensor:
    """Relative attention on (b, groups, L, c) tokens, heads = contiguous channel slices."""
    b, groups, length, c = tokens.shape
    heads, d = p.heads, p.head_dim
    if length != p.window * p.window:
        raise DimensionError(f"attention window {p.window} expects {p.window ** 2} tokens, got {length}")

    def split(t: Tensor) -> Tensor:
        t = ops.reshape(t, (b, groups, length, heads, d))
        return ops.swapaxes(t, 2, 3)  # (b, groups, heads, L, d)

    q = split(linear(tokens, p.wq))
    k = split(linear(tokens, p.wk))
    v = split(linear(tokens, p.wv))
    bias = ops.gather_rows(p.bias_table, index)  # (heads, L, L), broadcast over (b, groups)
    out = rel_attention(q, k, v, bias)
    out = ops.swapaxes(out, 2, 3)
    out = ops.reshape(out, (b, groups, length, c))
    return linear(out, p.wo)


@dataclass
class AttentionLayerParams:
    """Pre-norm transformer layer on one partition axis: attention then MLP."""

    kind: str                    # "block" (local windows) or "grid" (dilated)
    norm1: LayerNormParams
    attn: AttentionParams
    norm2: LayerNormParams
    mlp: MlpParams
    index: np.ndarray            # precomputed (L, L) bias lookup


def init_attention_layer(rng, kind: str, channels: int, window: int, head_dim: int = 32, mlp_expansion: int = 4, dtype=None) -> AttentionLayerParams:
    if kind not in ("block", "grid"):
        raise ConfigError(f"attention kind must be 'block' or 'grid', got {kind!r}")
    return AttentionLayerParams(
        kind=kind,
        norm1=init_layer_norm(channels, dtype),
        attn=init_attention(rng, channels, window, head_dim, dtype),
        norm2=init_layer_norm(channels, dtype),
        mlp=init_mlp(rng, channels, mlp_expansion, dtype),
        index=build_bias_index(window),
    )


def attention_layer(x: Tensor, p: AttentionLayerParams) -> Tensor:
    """x += attn(partition(norm(x))); x += mlp(norm(x)); NHWC in and out."""
    _, h, w, _ = x.shape
    size = p.attn.window
    y = layer_norm(x, p.norm1)
    if p.kind == "block":
        y = block(y, size)
        y = multi_head_attention(y, p.attn, p.index)
        y = unblock(y, h, w, size)
    else:
        y = grid(y, size)
        y = multi_head_attention(y, p.attn, p.index)
        y = ungrid(y, h, w, size)
    x = ops.add(x, y)
    z = mlp_ffn(layer_norm(x, p.norm2), p.mlp)
    return ops.add(x, z)
