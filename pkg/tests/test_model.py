"""Backbone construction, forward geometry, determinism, checkpoints, variants."""

import numpy as np
import pytest

from maxvit.counting import count_model, count_params
from maxvit.errors import ConfigError, DataError, DimensionError, PartitionError
from maxvit.model import (
    TOY_VARIANT,
    VARIANTS,
    StageSpec,
    VariantSpec,
    build_model,
    default_window,
    forward,
    load_model,
    named_buffers,
    named_parameters,
    resolve_variant,
    save_model,
    validate_geometry,
    with_window,
)
from maxvit.tensor import Tensor

MINI = VariantSpec(
    name="mini",
    stem_channels=8,
    stages=(StageSpec(1, 8), StageSpec(1, 16)),
    window=2,
    grid_size=2,
    head_dim=4,
)


def _images(b, r, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((b, r, r, 3)).astype(dtype))


def test_variant_table():
    # stem width, per-stage (depth, channels)
    want = {
        "T": (64, [(2, 64), (2, 128), (5, 256), (2, 512)]),
        "S": (64, [(2, 96), (2, 192), (5, 384), (2, 768)]),
        "B": (64, [(2, 96), (6, 192), (14, 384), (2, 768)]),
        "L": (128, [(2, 128), (6, 256), (14, 512), (2, 1024)]),
        "XL": (192, [(2, 192), (6, 384), (14, 768), (2, 1536)]),
    }
    for name, (stem, stages) in want.items():
        spec = VARIANTS[name]
        assert spec.stem_channels == stem
        assert [(s.depth, s.channels) for s in spec.stages] == stages
        assert spec.window == spec.grid_size == 7
        assert spec.head_dim == 32


def test_resolve_variant_rejects_unknown():
    with pytest.raises(ConfigError) as e:
        resolve_variant("Q")
    msg = str(e.value)
    assert "'Q'" in msg and all(v in msg for v in ["T", "S", "B", "L", "XL"])


def test_default_window_policy():
    assert default_window(224) == 7
    assert default_window(384) == 12
    assert default_window(448) == 7
    assert default_window(512) == 8
    assert default_window(896) == 7
    with pytest.raises(ConfigError):
        default_window(200)


def test_build_is_deterministic_and_seed_sensitive():
    a = build_model(MINI, num_classes=4, seed=11)
    b = build_model(MINI, num_classes=4, seed=11)
    c = build_model(MINI, num_classes=4, seed=12)
    for (na, ta), (nb, tb), (nc, tc) in zip(named_parameters(a), named_parameters(b), named_parameters(c)):
        assert na == nb == nc
        assert np.array_equal(ta.data, tb.data), na
    diffs = sum(
        not np.array_equal(ta.data, tc.data)
        for (_, ta), (_, tc) in zip(named_parameters(a), named_parameters(c))
    )
    assert diffs > 10  # different seed actually changes the draws


def test_parameter_names_and_order_are_stable():
    model = build_model(MINI, num_classes=2, seed=0)
    names = [n for n, _ in named_parameters(model)]
    assert names[0] == "stem.conv1.weight"
    assert names[-1] == "head.bias"
    assert "stages.0.0.conv.expand.weight" in names
    assert "stages.1.0.block_attn.attn.bias_table" in names
    assert len(names) == len(set(names))


def test_head_dim_divisibility_enforced():
    bad = VariantSpec("bad", 8, (StageSpec(1, 10),), window=2, grid_size=2, head_dim=4)
    with pytest.raises(ConfigError):
        build_model(bad)


def test_forward_shapes_and_dtype():
    model = build_model(MINI, num_classes=5, seed=1)
    logits = forward(model, _images(2, 16))
    assert logits.shape == (2, 5)
    assert logits.dtype == np.float32


def test_forward_f64_propagates():
    model = build_model(MINI, num_classes=3, seed=1, dtype=np.float64)
    logits = forward(model, _images(1, 16, dtype=np.float64))
    assert logits.dtype == np.float64


def test_forward_rejects_bad_rank_and_channels():
    model = build_model(MINI, num_classes=2)
    with pytest.raises(DimensionError):
        forward(model, Tensor(np.zeros((2, 16, 16), dtype=np.float32)))
    with pytest.raises(DimensionError):
        forward(model, Tensor(np.zeros((2, 16, 16, 4), dtype=np.float32)))


def test_geometry_validation_names_offender():
    with pytest.raises(PartitionError) as e:
        validate_geometry(VARIANTS["T"], 220, 220)
    assert "not divisible by 7" in str(e.value)
    # 384 with fixed window 7: deepest stage is 12, not divisible
    with pytest.raises(PartitionError):
        validate_geometry(VARIANTS["T"], 384, 384)
    validate_geometry(VARIANTS["T"], 224, 224)
    validate_geometry(VARIANTS["T"], 448, 448)


def test_forward_checks_geometry_before_compute():
    model = build_model(MINI, num_classes=2)
    with pytest.raises(PartitionError):
        forward(model, _images(1, 20))  # 20 -> 10 -> 5: window 2 cannot tile 5


def test_training_mode_updates_running_stats():
    model = build_model(MINI, num_classes=2, seed=3)
    before = [arr.copy() for _, arr in named_buffers(model)]
    forward(model, _images(2, 16), training=True)
    after = [arr for _, arr in named_buffers(model)]
    assert any(not np.array_equal(b, a) for b, a in zip(before, after))
    # inference mode must leave them alone
    frozen = [arr.copy() for _, arr in named_buffers(model)]
    forward(model, _images(2, 16, seed=9))
    assert all(np.array_equal(f, a) for f, a in zip(frozen, [arr for _, arr in named_buffers(model)]))


def test_inference_is_batch_independent():
    model = build_model(MINI, num_classes=2, seed=4, dtype=np.float64)
    x1 = _images(2, 16, seed=5, dtype=np.float64)
    x3 = Tensor(np.concatenate([x1.data, _images(1, 16, seed=6, dtype=np.float64).data]))
    solo = forward(model, x1).data
    joint = forward(model, x3).data[:2]
    np.testing.assert_allclose(joint, solo, atol=1e-10)


@pytest.mark.parametrize(
    "order",
    [
        ("conv", "block_attn", "grid_attn"),
        ("conv", "grid_attn", "block_attn"),
        ("block_attn", "conv", "grid_attn"),
        ("grid_attn", "block_attn", "conv"),
    ],
)
def test_block_orders_build_and_run(order):
    spec = VariantSpec("mini_o", 8, (StageSpec(1, 8), StageSpec(1, 16)), window=2, grid_size=2, head_dim=4, block_order=order)
    model = build_model(spec, num_classes=2, seed=0)
    assert forward(model, _images(1, 16)).shape == (1, 2)
    # analytic count mirrors the real build for every order
    assert count_model(spec, 16, num_classes=2).total_params == count_params(model)


def test_bad_block_order_rejected():
    spec = VariantSpec("dup", 8, (StageSpec(1, 8),), window=2, grid_size=2, head_dim=4, block_order=("conv", "conv", "grid_attn"))
    with pytest.raises(ConfigError):
        build_model(spec)


def test_checkpoint_roundtrip(tmp_path):
    model = build_model(MINI, num_classes=3, seed=7)
    forward(model, _images(2, 16), training=True)  # make running stats non-trivial
    logits_before = forward(model, _images(1, 16, seed=8)).data
    save_model(model, tmp_path / "ckpt")
    back = load_model(tmp_path / "ckpt")
    assert back.variant == model.variant
    assert back.num_classes == 3 and back.seed == 7
    for (na, ta), (nb, tb) in zip(named_parameters(model), named_parameters(back)):
        assert na == nb
        assert np.array_equal(ta.data, tb.data), na
    for (na, ba), (nb, bb) in zip(named_buffers(model), named_buffers(back)):
        assert np.array_equal(ba, bb), na
    np.testing.assert_allclose(forward(back, _images(1, 16, seed=8)).data, logits_before, atol=0)


def test_checkpoint_rejects_corruption(tmp_path):
    model = build_model(MINI, num_classes=2, seed=0)
    save_model(model, tmp_path / "ckpt")
    victim = tmp_path / "ckpt" / "head.bias.tensor"
    victim.write_bytes(victim.read_bytes()[:-2])
    with pytest.raises(DataError):
        load_model(tmp_path / "ckpt")
    with pytest.raises(DataError):
        load_model(tmp_path)  # no manifest


def test_with_window_resamples_bias_tables_only():
    model = build_model(MINI, num_classes=2, seed=1)
    moved = with_window(model, 4)
    assert moved.variant.window == moved.variant.grid_size == 4
    base = dict(named_parameters(model))
    new = dict(named_parameters(moved))
    for name, t in new.items():
        if "bias_table" in name:
            assert t.shape[1] == 49  # (2*4-1)^2
        else:
            assert t.data is base[name].data, name  # shared, not copied
    # runs at the resolution the new window tiles
    assert forward(moved, _images(1, 32)).shape == (1, 2)


def test_toy_variant_geometry():
    validate_geometry(TOY_VARIANT, 112, 112)
    model = build_model(TOY_VARIANT, num_classes=2, seed=0)
    assert forward(model, _images(1, 112)).shape == (1, 2)
