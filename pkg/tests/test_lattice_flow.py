import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from dirichlet_lab.lattice_flow import (
    BudgetExceeded,
    FlowSpec,
    LatticeBasis,
    MatrixPoint,
    Weights,
    cylinder_critical_basis,
    equal_weights,
    first_minimum,
    first_minimum_flowed,
    flowed_vector,
    hexagonal_basis,
    lattice_of,
    r_estimate,
    random_unimodular_basis,
)
from dirichlet_lab.norms import ProductNormSpec, euclidean_norm, eval_any, sup_norm
from dirichlet_lab.presets import GOLDEN
from dirichlet_lab.psi import PsiSpec

SUP11 = ProductNormSpec(sup_norm(1), sup_norm(1))


def brute_force_flowed(theta, ax, by, norm, box=50):
    """Independent oracle: full double box scan over (q, p), no rounding trick."""
    from dirichlet_lab.lattice_flow import eval_norm_array

    m, n = theta.m, theta.n
    ThetaF = theta.as_float_array()
    P = np.array(list(itertools.product(range(-box, box + 1), repeat=m)), dtype=float)
    ax_arr, by_arr = np.array(ax), np.array(by)
    best = math.inf
    for q in itertools.product(range(-box, box + 1), repeat=n):
        tq = ThetaF @ np.array(q, dtype=float)
        X = (tq[None, :] - P) * ax_arr
        if isinstance(norm, ProductNormSpec):
            xvals = eval_norm_array(X, norm.left)
            yval = float(eval_norm_array((np.array(q, dtype=float) * by_arr)[None, :], norm.right)[0])
            vals = np.maximum(xvals, yval)
        else:
            Y = np.tile(np.array(q, dtype=float) * by_arr, (len(P), 1))
            vals = eval_norm_array(np.column_stack([X, Y]), norm)
        if all(v == 0 for v in q):
            center = (len(P) - 1) // 2  # exclude p = 0
            vals[center] = math.inf
        best = min(best, float(np.min(vals)))
    return best


def test_lattice_of_examples():
    th = MatrixPoint.from_rows([[0]])
    basis = lattice_of(th)
    assert basis.det == 1
    assert basis.columns == ((Fraction(1), Fraction(0)), (Fraction(0), Fraction(1)))
    th2 = MatrixPoint.from_rows([[Fraction(1, 2)]])
    b2 = lattice_of(th2)
    assert b2.columns[1] == (Fraction(1, 2), Fraction(1))
    assert b2.det == 1


def test_lattice_unimodular_random():
    rng = np.random.default_rng(7)
    for _ in range(10):
        m, n = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        rows = [[Fraction(int(rng.integers(-50, 50)), int(rng.integers(1, 50))) for _ in range(n)] for _ in range(m)]
        assert lattice_of(MatrixPoint.from_rows(rows)).det == 1


def test_weights_validation():
    with pytest.raises(ValueError):
        Weights((Fraction(1, 2),), (Fraction(1),))
    w = equal_weights(2, 1)
    assert w.is_equal and w.m == 2 and w.n == 1


def test_flow_covolume_preserved():
    # exact exponent bookkeeping: weights sum to one on each block
    w = Weights((Fraction(1, 3), Fraction(2, 3)), (Fraction(1),))
    assert sum(w.alpha) == 1 and sum(w.beta) == 1
    flow = FlowSpec.g_flow(w)
    for t in (0.5, 1.0, 7.3, 100.0):
        sc = flow.x_scales(t, 2) + flow.y_scales(t, 1)
        assert math.prod(sc) == pytest.approx(1.0, rel=1e-12)


def test_flowed_vector_examples():
    th = MatrixPoint.from_rows([[0]])
    flow = FlowSpec.g_flow(equal_weights(1, 1))
    assert flowed_vector(th, flow, 1.0, [1], [0]) == pytest.approx([0.0, 1.0])

    golden = MatrixPoint.from_rows([[GOLDEN]])
    v = flowed_vector(golden, flow, 10.0, [8], [13])
    assert v[0] == pytest.approx(-0.55728, abs=1e-3)
    assert v[1] == pytest.approx(0.8)

    with pytest.raises(ValueError):
        flowed_vector(th, flow, 0.0, [1], [0])


def test_flowed_vector_plane_member_is_annihilated():
    # theta with theta @ i = z exactly: flowed vector keeps only the q block
    th = MatrixPoint.from_rows([[Fraction(1, 3), Fraction(2, 3)]])  # m=1, n=2
    i_vec, z_vec = [1, 1], [1]
    assert th.apply(i_vec) == (Fraction(1),)
    psi = PsiSpec(gamma=Fraction(2))
    flow = FlowSpec.a_psi_flow(psi)
    t = 16.0
    v = flowed_vector(th, flow, t, i_vec, z_vec)
    assert v[0] == pytest.approx(0.0, abs=1e-15)
    assert v[1] == pytest.approx(t ** -0.5)
    assert v[2] == pytest.approx(t ** -0.5)


def test_first_minimum_integer_lattice():
    eye = LatticeBasis.from_columns([[1, 0], [0, 1]])
    val, coeffs = first_minimum(eye, sup_norm(2))
    assert val == 1.0
    val2, _ = first_minimum(eye, euclidean_norm(2))
    assert val2 == pytest.approx(1.0, abs=1e-12)


def test_first_minimum_hexagonal():
    basis = hexagonal_basis()
    val, _ = first_minimum(basis, euclidean_norm(2))
    assert val == pytest.approx(math.sqrt(2 / math.sqrt(3)), abs=1e-9)


def test_first_minimum_budget_error():
    # nearly parallel long columns: huge certified box, tiny budget
    basis = LatticeBasis.from_columns(
        [[1000, Fraction(1, 1000)], [1001, Fraction(2, 1000)]]
    )
    with pytest.raises(BudgetExceeded):
        first_minimum(basis, sup_norm(2), budget=100)


def test_first_minimum_flowed_examples():
    golden = MatrixPoint.from_rows([[GOLDEN]])
    flow = FlowSpec.g_flow(equal_weights(1, 1))
    val, wit = first_minimum_flowed(golden, flow, 10.0, SUP11)
    assert val == pytest.approx(0.8, abs=1e-12)
    assert (wit.q, wit.p) == ((8,), (13,))

    th0 = MatrixPoint.from_rows([[0]])
    val0, wit0 = first_minimum_flowed(th0, flow, 1.0, SUP11)
    assert val0 == 1.0

    # rational point: the exact relation witness drives the value to 0
    th = MatrixPoint.from_rows([[Fraction(3, 7)]])
    for t in (100.0, 1000.0):
        val, wit = first_minimum_flowed(th, flow, t, SUP11)
        assert val == pytest.approx(7 / t, rel=1e-12)
        assert (wit.q, wit.p) == ((7,), (3,))


def test_first_minimum_flowed_witness_validity():
    rng = np.random.default_rng(42)
    flow = FlowSpec.g_flow(equal_weights(1, 1))
    for _ in range(25):
        th = MatrixPoint.from_rows([[Fraction(float(rng.uniform(0, 1))).limit_denominator(10**9)]])
        t = float(rng.uniform(0.5, 20))
        val, wit = first_minimum_flowed(th, flow, t, SUP11)
        vec = flowed_vector(th, flow, t, wit.q, wit.p)
        assert float(eval_any(vec, SUP11)) == pytest.approx(val, abs=1e-10)
        assert any(c != 0 for c in wit.q + wit.p)


@pytest.mark.parametrize("mn", [(1, 1), (2, 1), (1, 2), (2, 2)])
def test_flowed_oracle_equivalence(mn):
    """Diagonal-structure enumeration agrees with the naive double box scan."""
    m, n = mn
    rng = np.random.default_rng(100 + 10 * m + n)
    norm = ProductNormSpec(sup_norm(m), sup_norm(n))
    w = equal_weights(m, n)
    flow = FlowSpec.g_flow(w)
    rounds = 4 if (m, n) == (2, 2) else 6
    for _ in range(rounds):
        rows = [[Fraction(float(rng.uniform(0, 1))).limit_denominator(10**6) for _ in range(n)] for _ in range(m)]
        th = MatrixPoint.from_rows(rows)
        t = float(rng.uniform(1, 20))
        ax = flow.x_scales(t, m)
        by = flow.y_scales(t, n)
        expected = brute_force_flowed(th, ax, by, norm, box=25)
        got, _ = first_minimum_flowed(th, flow, t, norm)
        assert got == pytest.approx(expected, abs=1e-9)


def test_dirichlet_bound_sup_norm():
    """No unimodular lattice beats the exact sup-norm constant 1."""
    rng = np.random.default_rng(5)
    for d in (2, 3):
        for _ in range(10):
            basis = random_unimodular_basis(d, rng)
            val, _ = first_minimum(basis, sup_norm(d))
            val /= abs(float(basis.det)) ** (1.0 / d)
            assert val <= 1.0 + 1e-9


def test_r_estimate_sup():
    assert r_estimate(sup_norm(2), 2, 20, seed=3) == pytest.approx(1.0, abs=1e-9)


def test_r_estimate_euclidean_d2():
    val = r_estimate(euclidean_norm(2), 2, 30, seed=3)
    assert val == pytest.approx(math.sqrt(2 / math.sqrt(3)), abs=1e-6)


def test_cylinder_critical_value():
    basis = cylinder_critical_basis()
    norm = ProductNormSpec(euclidean_norm(2), sup_norm(1))
    val, _ = first_minimum(basis, norm)
    val /= abs(float(basis.det)) ** (1.0 / 3)
    assert val == pytest.approx((2 / math.sqrt(3)) ** (1 / 3), rel=1e-6)
