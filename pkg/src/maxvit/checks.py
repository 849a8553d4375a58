"""Runnable self-verification suites backing the `check` command.

Each suite is a named list of properties; a property either returns (pass) or
raises (fail, with the exception text as the detail). Partition properties
deliberately call through the `axes` module object so that a fault injected
there (e.g. monkeypatching an off-by-one `grid`) is caught by the roundtrip
checks rather than bypassed through stale local bindings.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import axes, ops
from .attention import build_bias_index, init_attention, interpolate_bias, multi_head_attention
from .errors import MaxVitError, PartitionError
from .gradcheck import GRAD_TOL, grad_check, primitive_cases
from .golden import GOLDEN_MACS, GOLDEN_PARAMS, MACS_TOLERANCE, PARAM_TOLERANCE, within
from .model import (
    StageSpec,
    TOY_VARIANT,
    VariantSpec,
    build_model,
    default_window,
    forward,
    load_model,
    named_buffers,
    named_parameters,
    parameter_slots,
    save_model,
    validate_geometry,
)
from .counting import count_model
from .tensor import Tensor
from .train import train_toy

__all__ = ["CheckReport", "PropertyResult", "SuiteResult", "suite_names", "run_checks"]


# -- result model -------------------------------------------------------------------

@dataclass
class PropertyResult:
    name: str
    status: str  # pass | fail | error
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    properties: list[PropertyResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(p.status == "pass" for p in self.properties)


@dataclass
class CheckReport:
    filter: Optional[str]
    suites: list[SuiteResult]

    @property
    def ok(self) -> bool:
        return bool(self.suites) and all(s.ok for s in self.suites)

    def counts(self) -> dict[str, int]:
        out = {"pass": 0, "fail": 0, "error": 0}
        for s in self.suites:
            for p in s.properties:
                out[p.status] += 1
        return out

    def failures(self) -> list[tuple[str, PropertyResult]]:
        return [(s.name, p) for s in self.suites for p in s.properties if p.status != "pass"]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "filter": self.filter,
            "counts": self.counts(),
            "suites": [
                {
                    "name": s.name,
                    "ok": s.ok,
                    "properties": [
                        {"name": p.name, "status": p.status, "detail": p.detail}
                        for p in s.properties
                    ],
                }
                for s in self.suites
            ],
        }


# -- partition suite ----------------------------------------------------------------

def _random_partition_shapes(rng, size_pool):
    b = int(rng.integers(1, 3))
    size = int(rng.choice(size_pool))
    h = size * int(rng.integers(1, 5))
    w = size * int(rng.integers(1, 5))
    c = int(rng.integers(1, 5))
    return b, h, w, c, size


def _check_block_roundtrip():
    rng = np.random.default_rng(101)
    for _ in range(60):
        b, h, w, c, p = _random_partition_shapes(rng, (2, 3, 7))
        x = Tensor(rng.standard_normal((b, h, w, c)))
        back = axes.unblock(axes.block(x, p), h, w, p)
        assert np.array_equal(back.data, x.data), f"block roundtrip broke at {(b, h, w, c, p)}"


def _check_grid_roundtrip():
    rng = np.random.default_rng(102)
    for _ in range(60):
        b, h, w, c, g = _random_partition_shapes(rng, (2, 3, 7))
        x = Tensor(rng.standard_normal((b, h, w, c)))
        back = axes.ungrid(axes.grid(x, g), h, w, g)
        assert np.array_equal(back.data, x.data), f"grid roundtrip broke at {(b, h, w, c, g)}"


def _check_grid_is_transposed_block_on_squares():
    rng = np.random.default_rng(103)
    for n, g in ((8, 2), (12, 3), (14, 7), (28, 7)):
        x = Tensor(rng.standard_normal((2, n, n, 3)))
        via_block = ops.swapaxes(axes.block(x, n // g), 1, 2)
        assert np.array_equal(axes.grid(x, g).data, via_block.data), f"equivalence broke at n={n}, g={g}"


def _check_partition_index_tables():
    # 4x4 image, size-2 windows: block gathers contiguous patches, grid strides
    block_expect = [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]]
    grid_expect = [[0, 2, 8, 10], [1, 3, 9, 11], [4, 6, 12, 14], [5, 7, 13, 15]]
    got_block = axes.partition_indices("block", 4, 4, 2).tolist()
    got_grid = axes.partition_indices("grid", 4, 4, 2).tolist()
    assert got_block == block_expect, f"block index table {got_block}"
    assert got_grid == grid_expect, f"grid index table {got_grid}"


def _check_partition_rejects_indivisible():
    x = Tensor(np.zeros((1, 6, 4, 2)))
    for fn, size in ((axes.block, 4), (axes.grid, 4)):
        try:
            fn(x, size)
        except PartitionError:
            continue
        raise AssertionError(f"{fn.__name__} accepted a non-divisible extent")


# -- attention suite ----------------------------------------------------------------

def _dense_attention_oracle(tokens, p, index):
    """Plain-numpy scalar-loop-free reference of multi_head_attention."""
    b, groups, length, c = tokens.shape
    heads, d = p.heads, p.head_dim
    bias = p.bias_table.data[:, index]  # (heads, L, L)

    def proj(w):
        out = tokens.reshape(-1, c) @ w.weight.data
        if w.bias is not None:
            out = out + w.bias.data
        return out.reshape(b, groups, length, heads, d).transpose(0, 1, 3, 2, 4)

    q, k, v = proj(p.wq), proj(p.wk), proj(p.wv)
    logits = (q / np.sqrt(d)) @ k.transpose(0, 1, 2, 4, 3) + bias
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    attn = e / e.sum(axis=-1, keepdims=True)
    out = (attn @ v).transpose(0, 1, 3, 2, 4).reshape(b, groups, length, c)
    return out @ p.wo.weight.data + p.wo.bias.data


def _check_attention_matches_dense_oracle():
    rng = np.random.default_rng(104)
    p = init_attention(rng, channels=8, window=2, head_dim=4, dtype=np.float64)
    p.bias_table = Tensor(rng.standard_normal(p.bias_table.shape))
    index = build_bias_index(2)
    tokens = Tensor(rng.standard_normal((2, 3, 4, 8)))
    got = multi_head_attention(tokens, p, index).data
    want = _dense_attention_oracle(tokens.data, p, index)
    err = np.abs(got - want).max()
    assert err < 1e-10, f"attention deviates from dense oracle by {err:.3e}"


def _check_bias_index_involution():
    # swapping query and key mirrors the displacement: idx[i,j] + idx[j,i] is constant
    for window in (2, 3, 7):
        idx = build_bias_index(window)
        n = (2 * window - 1) ** 2 - 1
        assert ((idx + idx.T) == n).all(), f"index table not displacement-symmetric at P={window}"
        assert (np.diag(idx) == n // 2).all(), "zero displacement must map to the table center"


def _check_bias_interpolation_identity_and_shape():
    rng = np.random.default_rng(105)
    table = Tensor(rng.standard_normal((3, (2 * 7 - 1) ** 2)))
    same = interpolate_bias(table, 7, 7)
    assert np.array_equal(same.data, table.data), "identity resize must be exact"
    grown = interpolate_bias(table, 7, 12)
    assert grown.shape == (3, (2 * 12 - 1) ** 2), f"resized table has shape {grown.shape}"


# -- gradcheck suite ----------------------------------------------------------------

MINIATURE = VariantSpec(
    name="mini",
    stem_channels=8,
    stages=(StageSpec(1, 8),),
    head_dim=8,
)


def _check_miniature_end_to_end_gradients():
    model = build_model(MINIATURE, num_classes=2, seed=0, dtype=np.float64)
    rng = np.random.default_rng(106)
    images = Tensor(rng.standard_normal((1, 28, 28, 3)))
    labels = np.array([1])
    slots = parameter_slots(model)
    params = [getattr(h, k) for _, h, k in slots]
    # A deep model always has some parameter entries with near-zero gradient,
    # and central differences cannot resolve those against the rounding of a
    # O(1) loss value, so the per-entry relative comparison would drown in fd
    # noise. Adding a fixed linear term anchors every coordinate's gradient at
    # O(1); the term is differentiated exactly by both sides, so any defect in
    # the model's backward rules still surfaces as an absolute mismatch.
    anchors = [
        Tensor(np.where(rng.random(p.shape) < 0.5, -1.0, 1.0) * rng.uniform(2.0, 3.0, p.shape))
        for p in params
    ]

    def f(*ps):
        for (name, holder, key), p in zip(slots, ps):
            setattr(holder, key, p)
        loss = ops.softmax_cross_entropy(forward(model, images, training=False), labels)
        for p, r in zip(ps, anchors):
            loss = ops.add(loss, ops.reduce_sum(ops.mul(p, r)))
        return loss

    err = grad_check(f, params)
    assert err < GRAD_TOL, f"miniature model max relative gradient error {err:.3e}"


def _gradcheck_suite():
    props = []
    for name, fn, params in primitive_cases(seed=0):
        def prop(fn=fn, params=params, name=name):
            err = grad_check(fn, params)
            assert err < GRAD_TOL, f"{name}: max relative gradient error {err:.3e}"

        props.append((f"grad:{name}", prop))
    props.append(("grad:miniature_model_end_to_end", _check_miniature_end_to_end_gradients))
    return props


# -- golden suite -------------------------------------------------------------------

def _check_golden_params():
    bad = []
    for name, want in GOLDEN_PARAMS.items():
        got = count_model(name, resolution=224).total_params
        if not within(got, want, PARAM_TOLERANCE):
            bad.append(f"{name}: {got} vs {want:.0f}")
    assert not bad, "param counts outside 2%: " + "; ".join(bad)


def _check_golden_macs():
    bad = []
    for (name, res), want in GOLDEN_MACS.items():
        got = count_model(name, resolution=res).total_macs
        if not within(got, want, MACS_TOLERANCE):
            bad.append(f"{name}@{res}: {got} vs {want:.0f}")
    assert not bad, "MAC counts outside 5%: " + "; ".join(bad)


def _check_window_policy():
    table = {224: 7, 384: 12, 448: 7, 512: 8, 672: 7, 896: 7}
    got = {res: default_window(res) for res in table}
    assert got == table, f"window policy {got}"
    for res in table:
        spec = VariantSpec("t", 64, (StageSpec(1, 64),) * 4, window=default_window(res), grid_size=default_window(res))
        validate_geometry(spec, res, res)


def _check_attention_macs_scale_by_four():
    base = count_model("T", resolution=224, window=7)
    double = count_model("T", resolution=448, window=7)
    seen = 0
    for a, b in zip(base.layers, double.layers):
        assert a.name == b.name
        if "block_attn" in a.name or "grid_attn" in a.name:
            assert b.macs == 4 * a.macs, f"{a.name}: {b.macs} != 4*{a.macs}"
            seen += 1
    assert seen > 0, "no attention layers compared"


# -- loss suite ----------------------------------------------------------------------

def _check_emd_hand_case():
    got = ops.emd_loss(Tensor(np.array([1.0, 0.0])), Tensor(np.array([0.0, 1.0])), r=2.0).item()
    assert abs(got - np.sqrt(0.5)) < 1e-9, f"hand case gave {got!r}"


def _check_emd_metric_axioms():
    rng = np.random.default_rng(107)

    def simplex():
        v = rng.random(10) + 1e-9
        return Tensor(v / v.sum())

    for _ in range(200):
        p, q, s = simplex(), simplex(), simplex()
        dpq = ops.emd_loss(p, q).item()
        assert abs(dpq - ops.emd_loss(q, p).item()) < 1e-12, "symmetry violated"
        assert dpq >= 0.0
        tri = ops.emd_loss(p, s).item() + ops.emd_loss(s, q).item()
        assert dpq <= tri + 1e-12, f"triangle inequality violated: {dpq} > {tri}"
    p = simplex()
    assert ops.emd_loss(p, Tensor(p.data.copy())).item() == 0.0, "self-distance must be zero"


def _check_cross_entropy_oracle():
    rng = np.random.default_rng(108)
    logits = rng.standard_normal((6, 4)) * 2
    labels = rng.integers(0, 4, size=6)
    got = ops.softmax_cross_entropy(Tensor(logits), labels).item()
    want = 0.0
    for row, y in zip(logits, labels):
        e = np.exp(row - row.max())
        want -= np.log(e[y] / e.sum())
    want /= len(labels)
    assert abs(got - want) < 1e-12, f"cross-entropy {got} vs oracle {want}"


# -- serialization suite ---------------------------------------------------------------

def _check_checkpoint_roundtrip():
    model = build_model(TOY_VARIANT, num_classes=2, seed=3)
    rng = np.random.default_rng(109)
    x = Tensor(rng.standard_normal((1, 112, 112, 3)).astype(np.float32))
    before = forward(model, x).data
    with tempfile.TemporaryDirectory() as tmp:
        save_model(model, tmp)
        loaded = load_model(tmp)
    for (name_a, pa), (name_b, pb) in zip(named_parameters(model), named_parameters(loaded)):
        assert name_a == name_b, f"parameter order changed: {name_a} vs {name_b}"
        assert np.array_equal(pa.data, pb.data), f"parameter {name_a} not preserved"
    for (name_a, ba), (name_b, bb) in zip(named_buffers(model), named_buffers(loaded)):
        assert name_a == name_b and np.array_equal(ba, bb), f"buffer {name_a} not preserved"
    after = forward(loaded, x).data
    assert np.array_equal(before, after), "reloaded model computes different logits"


# -- training suite --------------------------------------------------------------------

def _check_train_smoke():
    r = train_toy(seed=0, steps=5)
    losses = np.asarray(r.losses)
    assert np.isfinite(losses).all(), f"non-finite loss in {r.losses}"
    assert losses[-1] < losses[0], f"no descent over 5 steps: {r.losses}"


# -- registry -----------------------------------------------------------------------

def _static_suites() -> dict[str, list[tuple[str, Callable[[], None]]]]:
    return {
        "partition": [
            ("block_roundtrip_random", _check_block_roundtrip),
            ("grid_roundtrip_random", _check_grid_roundtrip),
            ("grid_is_transposed_block_on_squares", _check_grid_is_transposed_block_on_squares),
            ("index_tables_4x4", _check_partition_index_tables),
            ("rejects_indivisible_extents", _check_partition_rejects_indivisible),
        ],
        "attention": [
            ("matches_dense_oracle", _check_attention_matches_dense_oracle),
            ("bias_index_displacement_symmetry", _check_bias_index_involution),
            ("bias_interpolation_identity_and_shape", _check_bias_interpolation_identity_and_shape),
        ],
        "gradcheck": _gradcheck_suite(),
        "golden": [
            ("parameter_parity", _check_golden_params),
            ("mac_parity", _check_golden_macs),
            ("window_policy", _check_window_policy),
            ("attention_macs_quadruple_at_double_resolution", _check_attention_macs_scale_by_four),
        ],
        "losses": [
            ("emd_hand_case", _check_emd_hand_case),
            ("emd_metric_axioms", _check_emd_metric_axioms),
            ("cross_entropy_oracle", _check_cross_entropy_oracle),
        ],
        "serialization": [
            ("checkpoint_roundtrip", _check_checkpoint_roundtrip),
        ],
        "train": [
            ("toy_smoke_descends", _check_train_smoke),
        ],
    }


def suite_names() -> list[str]:
    return list(_static_suites())


def run_checks(filter: Optional[str] = None) -> CheckReport:
    """Run every suite whose name contains `filter` (all when None)."""
    report = CheckReport(filter=filter, suites=[])
    for suite_name, props in _static_suites().items():
        if filter and filter not in suite_name:
            continue
        suite = SuiteResult(name=suite_name)
        for prop_name, fn in props:
            try:
                fn()
            except AssertionError as exc:
                suite.properties.append(PropertyResult(prop_name, "fail", str(exc)))
            except MaxVitError as exc:
                suite.properties.append(PropertyResult(prop_name, "fail", f"{type(exc).__name__}: {exc}"))
            except Exception as exc:  # noqa: BLE001 - a crash is a failing property, not a crash of check
                suite.properties.append(PropertyResult(prop_name, "error", f"{type(exc).__name__}: {exc}"))
            else:
                suite.properties.append(PropertyResult(prop_name, "pass"))
        report.suites.append(suite)
    return report
