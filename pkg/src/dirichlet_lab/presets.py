"""Named irrational case studies as exact rational truncations.

Each preset is the floor of the constant scaled by 10^40, i.e. a rational
within 10^-40 of the true value.  All downstream computations treat the
truncation itself as the exact point under study, so results are
reproducible bit for bit; the truncation error only matters when quoting
asymptotic statements about the true irrational.
"""

from __future__ import annotations

import math
from fractions import Fraction

PRESET_DIGITS = 40
_SCALE = 10**PRESET_DIGITS


def _sqrt_truncation(n: int) -> Fraction:
    return Fraction(math.isqrt(n * _SCALE * _SCALE), _SCALE)


def _e_truncation() -> Fraction:
    total = Fraction(0)
    term = Fraction(1)
    for k in range(1, 60):
        total += term
        term /= k
    total += term
    return Fraction((total.numerator * _SCALE) // total.denominator, _SCALE)


SQRT2 = _sqrt_truncation(2)
SQRT3 = _sqrt_truncation(3)
SQRT5 = _sqrt_truncation(5)
GOLDEN = (1 + SQRT5) / 2
EULER_E = _e_truncation()

PRESETS = {
    "golden": GOLDEN,
    "sqrt2": SQRT2,
    "sqrt3": SQRT3,
    "sqrt5": SQRT5,
    "e": EULER_E,
}


def preset(name: str) -> Fraction:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None
