"""Window and grid partition transforms for NHWC feature maps.

block() cuts an image into non-overlapping P x P windows (local neighborhoods);
grid() groups pixels that share the same offset inside a G x G lattice of cells,
so each group is a dilated sampling of the whole image with stride (H/G, W/G).
Both are pure index permutations, invertible bitwise, and differentiable
(composed from reshape/swapaxes primitives).

For square inputs, grid(x, G) equals swapaxes(block(x, H/G), -2, -3): cutting
into H/G-sized windows and exchanging the "which window" axis with the
"position inside window" axis yields exactly the dilated grouping.
"""

from __future__ import annotations

import json

import numpy as np

from . import ops
from .errors import DimensionError, PartitionError
from .tensor import Tensor

__all__ = ["block", "unblock", "grid", "ungrid", "partition_indices", "dump_indices"]


def _check_nhwc(x: Tensor, op: str) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise DimensionError(f"{op} expects NHWC rank-4 input, got shape {x.shape}")
    return x.shape


def block(x: Tensor, window: int) -> Tensor:
    """(B, H, W, C) -> (B, H*W/window^2, window^2, C), windows and pixels row-major."""
    b, h, w, c = _check_nhwc(x, "block")
    if window < 1 or h % window or w % window:
        raise PartitionError(f"block: extent ({h}, {w}) not divisible by window {window}")
    nh, nw = h // window, w // window
    y = ops.reshape(x, (b, nh, window, nw, window, c))
    y = ops.swapaxes(y, 2, 3)  # (b, nh, nw, window, window, c)
    return ops.reshape(y, (b, nh * nw, window * window, c))


def unblock(x: Tensor, height: int, width: int, window: int) -> Tensor:
    """Inverse of block(); needs the original spatial extent back."""
    if x.ndim != 4:
        raise DimensionError(f"unblock expects rank-4 input, got shape {x.shape}")
    b, nwin, tokens, c = x.shape
    nh, nw = height // window, width // window
    if window < 1 or height % window or width % window or nwin != nh * nw or tokens != window * window:
        raise PartitionError(
            f"unblock: shape {x.shape} is not a block partition of ({height}, {width}) with window {window}"
        )
    y = ops.reshape(x, (b, nh, nw, window, window, c))
    y = ops.swapaxes(y, 2, 3)
    return ops.reshape(y, (b, height, width, c))


def grid(x: Tensor, grid_size: int) -> Tensor:
    """(B, H, W, C) -> (B, H*W/grid^2, grid^2, C) dilated groups.

    Group g holds the pixels at within-cell offset g, one from each of the
    grid^2 lattice cells (cells are (H/grid) x (W/grid), row-major); tokens
    inside a group are ordered by cell, row-major.
    """
    b, h, w, c = _check_nhwc(x, "grid")
    if grid_size < 1 or h % grid_size or w % grid_size:
        raise PartitionError(f"grid: extent ({h}, {w}) not divisible by grid {grid_size}")
    ch, cw = h // grid_size, w // grid_size  # lattice cell extent
    y = ops.reshape(x, (b, grid_size, ch, grid_size, cw, c))
    y = ops.swapaxes(y, 1, 2)  # (b, ch, grid, grid, cw, c)
    y = ops.swapaxes(y, 3, 4)  # (b, ch, grid, cw, grid, c)
    y = ops.swapaxes(y, 2, 3)  # (b, ch, cw, grid, grid, c)
    return ops.reshape(y, (b, ch * cw, grid_size * grid_size, c))


def ungrid(x: Tensor, height: int, width: int, grid_size: int) -> Tensor:
    """Inverse of grid(); needs the original spatial extent back."""
    if x.ndim != 4:
        raise DimensionError(f"ungrid expects rank-4 input, got shape {x.shape}")
    b, ngroups, tokens, c = x.shape
    ch, cw = height // grid_size, width // grid_size
    if (
        grid_size < 1
        or height % grid_size
        or width % grid_size
        or ngroups != ch * cw
        or tokens != grid_size * grid_size
    ):
        raise PartitionError(
            f"ungrid: shape {x.shape} is not a grid partition of ({height}, {width}) with grid {grid_size}"
        )
    y = ops.reshape(x, (b, ch, cw, grid_size, grid_size, c))
    y = ops.swapaxes(y, 2, 3)
    y = ops.swapaxes(y, 3, 4)
    y = ops.swapaxes(y, 1, 2)
    return ops.reshape(y, (b, height, width, c))


def partition_indices(kind: str, height: int, width: int, size: int) -> np.ndarray:
    """Flat source index of every output element, as (num_windows, tokens).

    Feeding an arange image through the real transform keeps this honest:
    the permutation *is* whatever block()/grid() does.
    """
    if kind not in ("block", "grid"):
        raise PartitionError(f"partition_indices: kind must be 'block' or 'grid', got {kind!r}")
    img = Tensor(np.arange(height * width, dtype=np.float64).reshape(1, height, width, 1))
    out = block(img, size) if kind == "block" else grid(img, size)
    return out.data.reshape(out.shape[1], out.shape[2]).astype(np.int64)


def dump_indices(kind: str, height: int, width: int, size: int) -> str:
    """JSON array-of-arrays form of partition_indices, for golden comparisons."""
    return json.dumps(partition_indices(kind, height, width, size).tolist())
