import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dirichlet_lab.norms import (
    NormSpec,
    ProductNormSpec,
    equivalence_constants,
    eval_norm,
    eval_product_norm,
    euclidean_norm,
    min_nonzero_integer_norm,
    norm_from_json,
    p_norm,
    sup_norm,
    weighted_sup_norm,
)

ALL_SPECS = [
    sup_norm(3),
    euclidean_norm(3),
    p_norm(3, 1),
    p_norm(3, Fraction(3, 2)),
    weighted_sup_norm([Fraction(1, 2), 2, 1]),
]


def test_eval_examples():
    assert eval_norm([3, -4], sup_norm(2)) == 4
    assert eval_norm([3, 4], euclidean_norm(2)) == pytest.approx(5.0, abs=1e-12)
    for spec in (sup_norm(3), euclidean_norm(3), p_norm(3, 2)):
        assert eval_norm([0, 0, 0], spec) == 0


def test_product_examples():
    spec = ProductNormSpec(sup_norm(2), sup_norm(1))
    assert eval_product_norm([1, 0], [2], spec) == 2
    spec2 = ProductNormSpec(euclidean_norm(2), sup_norm(1))
    assert eval_product_norm([3, 4], [1], spec2) == pytest.approx(5.0)
    assert eval_product_norm([0, 0], [0], spec) == 0


def test_sup_exact_on_rationals():
    v = eval_norm([Fraction(1, 3), Fraction(-2, 7)], sup_norm(2))
    assert v == Fraction(1, 3)
    w = eval_norm([Fraction(1, 3), Fraction(-2, 7)], weighted_sup_norm([1, 7]))
    assert w == Fraction(2, 1)


def test_equivalence_constants_builtin():
    assert equivalence_constants(sup_norm(5)) == (1.0, 1.0)
    lo, hi = equivalence_constants(euclidean_norm(4))
    assert (lo, hi) == (1.0, 2.0)
    lo, hi = equivalence_constants(p_norm(3, 1))
    assert (lo, hi) == (1.0, 3.0)
    lo, hi = equivalence_constants(weighted_sup_norm([Fraction(1, 2), 2]))
    assert (lo, hi) == (0.5, 2.0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_norm([1, 2, 3], sup_norm(2))


def test_invalid_specs():
    with pytest.raises(ValueError):
        NormSpec("p", 2, p=Fraction(1, 2))
    with pytest.raises(ValueError):
        weighted_sup_norm([1, 0])
    with pytest.raises(ValueError):
        NormSpec("frobnorm", 2)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_sampled_invariants(spec):
    """Homogeneity, triangle inequality, sup-norm sandwich, monotonicity."""
    rng = np.random.default_rng(1234)
    c_low, c_high = equivalence_constants(spec)
    for _ in range(1000):
        x = rng.uniform(-10, 10, spec.dim)
        y = rng.uniform(-10, 10, spec.dim)
        lam = rng.uniform(-5, 5)
        ex, ey = float(eval_norm(x, spec)), float(eval_norm(y, spec))
        exy = float(eval_norm(x + y, spec))
        elx = float(eval_norm(lam * x, spec))
        assert abs(elx - abs(lam) * ex) <= 1e-10 * max(elx, 1)
        assert exy <= ex + ey + 1e-10
        xinf = np.max(np.abs(x))
        assert c_low * xinf <= ex * (1 + 1e-12) + 1e-12
        assert ex <= c_high * xinf * (1 + 1e-12) + 1e-12
        # absolute-norm monotonicity: shrink one coordinate
        j = rng.integers(spec.dim)
        x2 = x.copy()
        x2[j] *= rng.uniform(0, 1)
        assert float(eval_norm(x2, spec)) <= ex + 1e-10


@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3),
    st.floats(-10, 10, allow_nan=False),
)
def test_homogeneity_property(xs, lam):
    for spec in (sup_norm(3), euclidean_norm(3)):
        ex = float(eval_norm(xs, spec))
        el = float(eval_norm([lam * v for v in xs], spec))
        assert abs(el - abs(lam) * ex) <= 1e-9 * max(1.0, el)


def test_min_nonzero_integer_norm():
    assert min_nonzero_integer_norm(sup_norm(3)) == 1.0
    assert min_nonzero_integer_norm(weighted_sup_norm([Fraction(1, 2), 2])) == 0.5


def test_json_roundtrip():
    for spec in ALL_SPECS:
        assert norm_from_json(spec.to_json_dict()) == spec
    prod = ProductNormSpec(euclidean_norm(2), sup_norm(1))
    assert norm_from_json(prod.to_json_dict()) == prod
