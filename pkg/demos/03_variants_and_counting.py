"""The variant family and its analytic size accounting.

The counter walks the architecture layer by layer without allocating weights,
so even the 475M-parameter XL is audited in milliseconds. Published reference
sizes are embedded with tolerances; `maxvit describe` exposes the same table.
"""

from maxvit import GOLDEN_MACS, GOLDEN_PARAMS, VARIANTS, count_model

print(f"{'variant':<8} {'params':>13} {'reference':>10} {'delta':>7}   {'MACs@224':>14} {'reference':>10} {'delta':>7}")
for name in ("T", "S", "B", "L", "XL"):
    c = count_model(name, resolution=224)
    gp = GOLDEN_PARAMS[name]
    gm = GOLDEN_MACS.get((name, 224))
    pd = 100 * (c.total_params - gp) / gp
    row = f"{name:<8} {c.total_params:>13,} {gp / 1e6:>9.0f}M {pd:>+6.2f}%"
    if gm:
        md = 100 * (c.total_macs - gm) / gm
        row += f"   {c.total_macs:>14,} {gm / 1e9:>9.1f}G {md:>+6.2f}%"
    else:
        row += f"   {c.total_macs:>14,} {'-':>10} {'-':>7}"
    print(row)

print("\nMaxViT-T per-stage breakdown at 224:")
c = count_model("T", resolution=224)
for key, (params, macs) in c.stage_totals().items():
    print(f"  {key:<8} params {params:>12,}   MACs {macs:>14,}")

print(f"\nstage schedule: {[(s.depth, s.channels) for s in VARIANTS['T'].stages]}")
print("every attention layer at 384 uses window 12 instead of 7:",
      count_model('T', resolution=384).window)
