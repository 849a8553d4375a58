"""Differentiable primitive operations.

Every function here computes a forward result with numpy and registers a
backward rule on the active GradTape. Backward rules are hand-derived and
covered by central-difference checks in 64-bit mode (see gradcheck.py).

Conventions:
  * dtype propagates from the inputs; mixing f32 and f64 operands is an error.
  * `add`/`sub`/`mul` broadcast under numpy rules; the backward sums the
    cotangent over broadcast axes so gradient shapes always match inputs.
  * `matmul` does NOT broadcast batch dims: both operands must have the same
    rank and identical leading extents. Dense layers flatten explicitly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import DataError, DimensionError, NumericError, PartitionError
from .tape import record
from .tensor import Tensor, debug_checks_enabled

__all__ = [
    "add", "sub", "mul", "scale", "shift", "matmul", "reshape", "swapaxes",
    "reduce_sum", "reduce_mean", "gelu", "silu", "sigmoid", "relu",
    "softmax_lastdim", "layer_norm", "batch_norm_train", "batch_norm_inference",
    "conv2d", "depthwise_conv2d", "avg_pool2d", "gather_rows",
    "softmax_cross_entropy", "emd_loss",
]

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def _out(arr: np.ndarray, context: str) -> Tensor:
    # 0-d arithmetic in numpy yields scalars; normalize back to 0-d arrays
    if not isinstance(arr, np.ndarray):
        arr = np.asarray(arr)
    if debug_checks_enabled() and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {context}")
    return Tensor(arr)


def _same_dtype(context: str, *ts: Tensor) -> None:
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise DataError(f"{context}: mixed dtypes {dt} and {t.dtype}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` over the axes that numpy broadcasting expanded to reach g.shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("add", a, b)
    try:
        out = _out(a.data + b.data, "add")
    except ValueError as e:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from e

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    record(out, (a, b), backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("sub", a, b)
    try:
        out = _out(a.data - b.data, "sub")
    except ValueError as e:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from e

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    record(out, (a, b), backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("mul", a, b)
    try:
        out = _out(a.data * b.data, "mul")
    except ValueError as e:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from e

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    record(out, (a, b), backward)
    return out


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _out(x.data * x.dtype.type(s), "scale")
    record(out, (x,), lambda g: (g * s,))
    return out


def shift(x: Tensor, s: float) -> Tensor:
    out = _out(x.data + x.dtype.type(float(s)), "shift")
    record(out, (x,), lambda g: (g,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with strict batch-extent equality.

    a: (*batch, M, K), b: (*batch, K, N) -> (*batch, M, N). Ranks must match
    and batch extents must be identical; there is no implicit broadcasting.
    """
    _same_dtype("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least rank 2, got {a.shape} x {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = _out(np.matmul(a.data, b.data), "matmul")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    record(out, (a, b), backward)
    return out


# -- shape ops ----------------------------------------------------------------

def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    # The flat buffer is preserved bitwise; only the shape header changes.
    out = Tensor(x.data.reshape(shape))
    record(out, (x,), lambda g: (g.reshape(x.shape),))
    return out


def swapaxes(x: Tensor, axis_a: int, axis_b: int) -> Tensor:
    n = x.ndim
    ia, ib = axis_a % n if -n <= axis_a < n else axis_a, axis_b % n if -n <= axis_b < n else axis_b
    if not (0 <= ia < n and 0 <= ib < n):
        raise DimensionError(f"swapaxes: axes ({axis_a}, {axis_b}) out of range for rank {n}")
    out = Tensor(np.ascontiguousarray(np.swapaxes(x.data, ia, ib)))
    record(out, (x,), lambda g: (np.ascontiguousarray(np.swapaxes(g, ia, ib)),))
    return out


def _norm_axes(axes, ndim) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = tuple(sorted(a % ndim for a in axes))
    if len(set(out)) != len(out):
        raise DimensionError(f"duplicate reduction axes {axes}")
    return out


def reduce_sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axes(axes, x.ndim)
    out = _out(np.asarray(x.data.sum(axis=ax, keepdims=keepdims)), "reduce_sum")

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.shape).copy(),)

    record(out, (x,), backward)
    return out


def reduce_mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in ax], dtype=np.int64))
    out = _out(np.asarray(x.data.mean(axis=ax, keepdims=keepdims)), "reduce_mean")

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.shape).copy() / count,)

    record(out, (x,), backward)
    return out


# -- activations ----------------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    """Exact-erf form: x * Phi(x), with Phi the standard normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = _out(x.data * cdf, "gelu")

    def backward(g):
        pdf = np.exp(-0.5 * np.square(x.data)) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    record(out, (x,), backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    y[~pos] = e / (1.0 + e)
    out = _out(y, "sigmoid")
    record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def silu(x: Tensor) -> Tensor:
    s = sigmoid_raw(x.data)
    out = _out(x.data * s, "silu")
    record(out, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))
    return out


def sigmoid_raw(a: np.ndarray) -> np.ndarray:
    y = np.empty_like(a)
    pos = a >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    y[~pos] = e / (1.0 + e)
    return y


def relu(x: Tensor) -> Tensor:
    out = _out(np.maximum(x.data, 0), "relu")
    record(out, (x,), lambda g: (g * (x.data > 0),))
    return out


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _out(y, "softmax_lastdim")

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    record(out, (x,), backward)
    return out


# -- normalization ---------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then per-feature affine."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: affines {gamma.shape}/{beta.shape} do not match feature dim {c}")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = _out(xhat * gamma.data + beta.data, "layer_norm")

    def backward(g):
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        dx = (gx - m1 - xhat * m2) * inv
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    record(out, (x, gamma, beta), backward)
    return out


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Per-channel batch norm over (batch, height, width) of an NHWC tensor.

    Returns (out, batch_mean, batch_var) where the stats are plain arrays
    (biased 1/n variance) for the caller's running-average update.
    """
    if x.ndim != 4:
        raise DimensionError(f"batch_norm expects NHWC rank-4 input, got {x.shape}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: affines {gamma.shape}/{beta.shape} do not match channels {c}")
    red = (0, 1, 2)
    n = x.shape[0] * x.shape[1] * x.shape[2]
    mean = x.data.mean(axis=red)
    var = x.data.var(axis=red)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = _out(xhat * gamma.data + beta.data, "batch_norm_train")

    def backward(g):
        gx = g * gamma.data
        m1 = gx.mean(axis=red)
        m2 = (gx * xhat).mean(axis=red)
        dx = (gx - m1 - xhat * m2) * inv
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    record(out, (x, gamma, beta), backward)
    return out, mean, var


def batch_norm_inference(
    x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray, eps: float = 1e-5
) -> Tensor:
    """Affine-only normalization with frozen stats; batch-independent by construction."""
    if x.ndim != 4:
        raise DimensionError(f"batch_norm expects NHWC rank-4 input, got {x.shape}")
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean) * inv
    out = _out(xhat * gamma.data + beta.data, "batch_norm_inference")

    def backward(g):
        red = (0, 1, 2)
        return g * (gamma.data * inv), (g * xhat).sum(axis=red), g.sum(axis=red)

    record(out, (x, gamma, beta), backward)
    return out


# -- convolution -------------------------------------------------------------------

def _same_pad(extent: int, k: int, stride: int) -> tuple[int, int]:
    # TF-style SAME: output ceil(extent/stride); odd total padding goes after.
    out = -(-extent // stride)
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """NHWC 'same' convolution. w: (kh, kw, cin, cout); odd pad goes bottom/right.

    Lowered to one matmul via im2col; 1x1 kernels skip the patch gather.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected NHWC input and (kh,kw,cin,cout) kernel, got {x.shape}, {w.shape}")
    bsz, h, wid, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: kernel expects {wcin} input channels, tensor has {cin}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {b.shape} does not match {cout} output channels")
    _same_dtype("conv2d", *( (x, w) if b is None else (x, w, b) ))
    ph = _same_pad(h, kh, stride)
    pw = _same_pad(wid, kw, stride)
    hout = -(-h // stride)
    wout = -(-wid // stride)

    if kh == 1 and kw == 1 and stride == 1:
        flat = x.data.reshape(bsz * h * wid, cin)
        y = flat @ w.data.reshape(cin, cout)
        if b is not None:
            y = y + b.data
        out = _out(y.reshape(bsz, h, wid, cout), "conv2d")

        def backward1x1(g):
            gf = g.reshape(bsz * h * wid, cout)
            gx = (gf @ w.data.reshape(cin, cout).T).reshape(x.shape)
            gw = (flat.T @ gf).reshape(w.shape)
            if b is None:
                return gx, gw
            return gx, gw, gf.sum(axis=0)

        record(out, (x, w) if b is None else (x, w, b), backward1x1)
        return out

    xp = np.pad(x.data, ((0, 0), ph, pw, (0, 0)))
    # Gather kh*kw strided views into an explicit patch tensor: (B, Ho, Wo, kh, kw, Cin)
    cols = np.empty((bsz, hout, wout, kh, kw, cin), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * hout : stride, j : j + stride * wout : stride, :]
    flat = cols.reshape(bsz * hout * wout, kh * kw * cin)
    y = flat @ w.data.reshape(kh * kw * cin, cout)
    if b is not None:
        y = y + b.data
    out = _out(y.reshape(bsz, hout, wout, cout), "conv2d")

    def backward(g):
        gf = g.reshape(bsz * hout * wout, cout)
        gw = (flat.T @ gf).reshape(w.shape)
        gcols = (gf @ w.data.reshape(kh * kw * cin, cout).T).reshape(bsz, hout, wout, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * hout : stride, j : j + stride * wout : stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, ph[0] : ph[0] + h, pw[0] : pw[0] + wid, :]
        if b is None:
            return np.ascontiguousarray(gx), gw
        return np.ascontiguousarray(gx), gw, gf.sum(axis=0)

    record(out, (x, w) if b is None else (x, w, b), backward)
    return out


def depthwise_conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Per-channel NHWC 'same' convolution. w: (kh, kw, c); no channel mixing."""
    if x.ndim != 4 or w.ndim != 3:
        raise DimensionError(f"depthwise_conv2d: expected NHWC input and (kh,kw,c) kernel, got {x.shape}, {w.shape}")
    bsz, h, wid, c = x.shape
    kh, kw, wc = w.shape
    if wc != c:
        raise DimensionError(f"depthwise_conv2d: kernel has {wc} channels, tensor has {c}")
    _same_dtype("depthwise_conv2d", x, w)
    ph = _same_pad(h, kh, stride)
    pw = _same_pad(wid, kw, stride)
    hout = -(-h // stride)
    wout = -(-wid // stride)
    xp = np.pad(x.data, ((0, 0), ph, pw, (0, 0)))
    y = np.zeros((bsz, hout, wout, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            y += xp[:, i : i + stride * hout : stride, j : j + stride * wout : stride, :] * w.data[i, j]
    out = _out(y, "depthwise_conv2d")

    def backward(g):
        gw = np.zeros_like(w.data)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                piece = xp[:, i : i + stride * hout : stride, j : j + stride * wout : stride, :]
                gw[i, j] = (g * piece).sum(axis=(0, 1, 2))
                gxp[:, i : i + stride * hout : stride, j : j + stride * wout : stride, :] += g * w.data[i, j]
        gx = gxp[:, ph[0] : ph[0] + h, pw[0] : pw[0] + wid, :]
        return np.ascontiguousarray(gx), gw

    record(out, (x, w), backward)
    return out


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k mean pooling; spatial extents must divide by k."""
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d expects NHWC rank-4 input, got {x.shape}")
    bsz, h, w, c = x.shape
    if h % k or w % k:
        raise PartitionError(f"avg_pool2d: extent ({h}, {w}) not divisible by pool size {k}")
    y = x.data.reshape(bsz, h // k, k, w // k, k, c).mean(axis=(2, 4))
    out = _out(y, "avg_pool2d")

    def backward(g):
        g = g[:, :, None, :, None, :] / (k * k)
        g = np.broadcast_to(g, (bsz, h // k, k, w // k, k, c))
        return (g.reshape(x.shape).copy(),)

    record(out, (x,), backward)
    return out


# -- indexed gather -------------------------------------------------------------

def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """out[..., i, j] = table[..., index[i, j]]; backward scatter-adds into the table.

    `table` is (heads, entries) and `index` an integer array, typically the
    (L, L) relative-displacement index of an attention window.
    """
    if table.ndim != 2:
        raise DimensionError(f"gather_rows: table must be rank 2, got {table.shape}")
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DataError("gather_rows: index must be integral")
    if idx.min() < 0 or idx.max() >= table.shape[1]:
        raise DataError(
            f"gather_rows: index range [{idx.min()}, {idx.max()}] exceeds table entries {table.shape[1]}"
        )
    out = _out(table.data[:, idx], "gather_rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        flat_idx = idx.ravel()
        gflat = g.reshape(table.shape[0], flat_idx.size)
        for head in range(table.shape[0]):
            np.add.at(gt[head], flat_idx, gflat[head])
        return (gt,)

    record(out, (table,), backward)
    return out


# -- losses ----------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels.

    logits: (batch, classes), labels: (batch,) ints in [0, classes).
    """
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be (batch, classes), got {logits.shape}")
    y = np.asarray(labels)
    bsz, k = logits.shape
    if y.shape != (bsz,) or not np.issubdtype(y.dtype, np.integer):
        raise DataError(f"softmax_cross_entropy: labels must be {bsz} ints, got {y.shape} {y.dtype}")
    if y.min() < 0 or y.max() >= k:
        raise DataError(f"softmax_cross_entropy: label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(bsz), y]
    out = _out(np.asarray(nll.mean(), dtype=logits.dtype), "softmax_cross_entropy")

    def backward(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(bsz), y] -= 1.0
        return (p * (g / bsz),)

    record(out, (logits,), backward)
    return out


def emd_loss(p: Tensor, q: Tensor, r: float = 2.0) -> Tensor:
    """Mallows distance between two discrete distributions over ordered bins.

    ((1/N) * sum_k |CDF_p(k) - CDF_q(k)|^r) ** (1/r) along the last axis,
    averaged over any leading batch axes. Exact metric for normalized inputs.
    """
    if p.shape != q.shape:
        raise DimensionError(f"emd_loss: shapes {p.shape} and {q.shape} differ")
    _same_dtype("emd_loss", p, q)
    if r < 1.0:
        raise DataError(f"emd_loss: order r must be >= 1, got {r}")
    n = p.shape[-1]
    diff = np.cumsum(p.data - q.data, axis=-1)
    powed = np.abs(diff) ** r
    inner = powed.mean(axis=-1)
    per = inner ** (1.0 / r)
    out = _out(np.asarray(per.mean(), dtype=p.dtype), "emd_loss")
    batch = max(per.size, 1)

    def backward(g):
        # d per / d diff_k = per**(1-r)/N * |d_k|^(r-1) * sign(d_k); reverse-cumsum maps to p.
        safe = np.where(per > 0, per, 1.0)
        coeff = (safe ** (1.0 - r))[..., None] / n
        dd = coeff * np.abs(diff) ** (r - 1.0) * np.sign(diff)
        dd = np.where(per[..., None] > 0, dd, 0.0)
        dp = np.flip(np.cumsum(np.flip(dd, axis=-1), axis=-1), axis=-1) * (g / batch)
        return dp, -dp

    record(out, (p, q), backward)
    return out
