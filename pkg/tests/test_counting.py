"""Parameter/MAC accounting against the published references and closed forms."""

import pytest

from maxvit.counting import count_flops, count_model, count_params
from maxvit.golden import GOLDEN_MACS, GOLDEN_PARAMS, MACS_TOLERANCE, PARAM_TOLERANCE, within
from maxvit.model import VARIANTS, StageSpec, VariantSpec, build_model, default_window


@pytest.mark.parametrize("name", ["T", "S", "B", "L", "XL"])
def test_params_within_published_tolerance(name):
    got = count_model(name, 224, num_classes=1000).total_params
    ref = GOLDEN_PARAMS[name]
    assert within(got, ref, PARAM_TOLERANCE), f"{name}: {got} vs {ref}"


@pytest.mark.parametrize("name,res", sorted(GOLDEN_MACS))
def test_macs_within_published_tolerance(name, res):
    got = count_flops(name, res, window=default_window(res))
    ref = GOLDEN_MACS[(name, res)]
    assert within(got, ref, MACS_TOLERANCE), f"{name}@{res}: {got} vs {ref}"


@pytest.mark.parametrize("name", ["T", "S"])
def test_analytic_count_matches_built_model(name):
    # the walker and the builder must agree scalar-for-scalar
    model = build_model(name, num_classes=1000, seed=0)
    assert count_params(model) == count_model(name, 224).total_params


def test_analytic_count_matches_small_custom_variants():
    for order in [("conv", "block_attn", "grid_attn"), ("block_attn", "grid_attn", "conv")]:
        spec = VariantSpec(
            "x", 8, (StageSpec(2, 8), StageSpec(1, 16)), window=2, grid_size=2, head_dim=4, block_order=order
        )
        model = build_model(spec, num_classes=3, seed=0)
        assert count_params(model) == count_model(spec, 16, num_classes=3).total_params


def test_params_are_resolution_independent():
    a = count_model("T", 224).total_params
    b = count_model("T", 448).total_params
    assert a == b


def test_conv_macs_closed_form():
    # lone conv record: kh*kw*cin*cout*hout*wout
    mc = count_model("T", 224)
    stem1 = next(l for l in mc.layers if l.name == "stem.conv1")
    assert stem1.macs == 9 * 3 * 64 * 112 * 112
    assert stem1.params == 9 * 3 * 64


def test_attention_layer_macs_closed_form():
    # 4NC^2 (projections) + 2NLC (two attention matmuls) + 8NC^2 (mlp)
    mc = count_model("T", 224)
    layers = mc.layers_matching("stages.0.0.block_attn")
    n, c, window_tokens = 56 * 56, 64, 49
    total = sum(l.macs for l in layers)
    assert total == 12 * n * c * c + 2 * n * window_tokens * c


def test_block_grid_parity_params_and_macs():
    # per-layer records of the two attention paths must match exactly
    for name in VARIANTS:
        mc = count_model(name, 224)
        blocks = {l.name.replace(".block_attn.", "."): (l.params, l.macs) for l in mc.layers if ".block_attn." in l.name}
        grids = {l.name.replace(".grid_attn.", "."): (l.params, l.macs) for l in mc.layers if ".grid_attn." in l.name}
        assert blocks == grids, name


def test_attention_macs_quadruple_when_resolution_doubles():
    # fixed window 7: 224 and 448 are both valid; every attention record x4
    a = count_model("T", 224, window=7)
    b = count_model("T", 448, window=7)
    att_a = [l for l in a.layers if l.kind in ("attn_matmul",) or ".attn." in l.name or ".mlp." in l.name]
    att_b = [l for l in b.layers if l.kind in ("attn_matmul",) or ".attn." in l.name or ".mlp." in l.name]
    assert len(att_a) == len(att_b)
    for la, lb in zip(att_a, att_b):
        assert la.name == lb.name
        assert la.params == lb.params
        if la.macs:
            assert lb.macs == 4 * la.macs, la.name


def test_total_macs_scale_subquadratically():
    # global attention would be x16 in the attention matmuls; linear layers x4
    a = count_flops("T", 224, window=7)
    b = count_flops("T", 448, window=7)
    assert 3.9 < b / a < 4.1


def test_stage_totals_partition_the_model():
    mc = count_model("S", 224)
    totals = mc.stage_totals()
    assert set(totals) == {"stem", "stage0", "stage1", "stage2", "stage3", "head"}
    assert sum(p for p, _ in totals.values()) == mc.total_params
    assert sum(m for _, m in totals.values()) == mc.total_macs


def test_macs_are_integers():
    mc = count_model("B", 384, window=12)
    assert all(isinstance(l.macs, int) and isinstance(l.params, int) for l in mc.layers)
    assert isinstance(mc.total_macs, int)


def test_bias_table_grows_with_window_but_little():
    p7 = count_model("T", 224, window=7).total_params
    p12 = count_model("T", 384, window=12).total_params
    assert p12 > p7
    assert (p12 - p7) / p7 < 0.005  # bias tables are a rounding error vs the model
