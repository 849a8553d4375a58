"""Published reference sizes the implementation is held to.

Parameter counts carry a +-2% tolerance, MACs +-5%: the references are rounded
to 0.1M/0.1G and small conventions (which convs carry biases, where norms sit)
legitimately wobble the exact totals. 512-input MAC references are excluded:
window geometry at that resolution is a documented special case.

Accuracy-style metrics are deliberately absent: nothing desk-scale can attest
to them, so nothing here pretends to.
"""

from __future__ import annotations

PARAM_TOLERANCE = 0.02
MACS_TOLERANCE = 0.05

# variant -> published parameter count
GOLDEN_PARAMS: dict[str, float] = {
    "T": 31.0e6,
    "S": 69.0e6,
    "B": 120.0e6,
    "L": 212.0e6,
    "XL": 475.0e6,
}

# (variant, resolution) -> published MACs for one image
GOLDEN_MACS: dict[tuple[str, int], float] = {
    ("T", 224): 5.6e9,
    ("T", 384): 17.7e9,
    ("S", 224): 11.7e9,
    ("S", 384): 36.1e9,
    ("B", 224): 23.4e9,
    ("B", 384): 74.2e9,
    ("L", 224): 43.9e9,
    ("L", 384): 133.1e9,
}


def within(value: float, reference: float, tolerance: float) -> bool:
    return abs(value - reference) <= tolerance * reference
