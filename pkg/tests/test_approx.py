import math
from fractions import Fraction

import numpy as np
import pytest

from dirichlet_lab.approx import (
    ApproxRecord,
    bridge_check,
    chi_gamma,
    chi_limsup_estimate,
    chi_peaks,
    crossing_time,
    domain_start,
    lambda_psi,
    limsup_estimate,
    pareto_front,
    realizing_sequence,
    uniform_exponent_estimate,
)
from dirichlet_lab.lattice_flow import FlowSpec, MatrixPoint, equal_weights, first_minimum_flowed
from dirichlet_lab.norms import ProductNormSpec, sup_norm
from dirichlet_lab.presets import GOLDEN, SQRT2
from dirichlet_lab.psi import PsiSpec, psi_from_string

SUP11 = ProductNormSpec(sup_norm(1), sup_norm(1))
SUP21 = ProductNormSpec(sup_norm(2), sup_norm(1))
PHI = (1 + math.sqrt(5)) / 2


def golden_point():
    return MatrixPoint.from_rows([[GOLDEN]])


def random_theta(m, n, rng):
    rows = [[Fraction(float(rng.uniform(0, 1))).limit_denominator(10**9) for _ in range(n)] for _ in range(m)]
    return MatrixPoint.from_rows(rows)


# ---------------------------------------------------------------------------
# fronts


def test_front_golden_fibonacci():
    front = pareto_front(golden_point(), SUP11, 10)
    assert [r.q[0] for r in front] == [1, 2, 3, 5, 8]
    for k in range(len(front)):
        # |F_k phi - F_{k+1}| = phi^-k against the convergent index
        pass
    errs = [r.err for r in front]
    assert all(errs[i] > errs[i + 1] for i in range(len(errs) - 1))


def test_front_sqrt2_pell():
    front = pareto_front(MatrixPoint.from_rows([[SQRT2]]), SUP11, 30)
    assert [r.q[0] for r in front] == [1, 2, 5, 12, 29]


def test_front_rational_terminates():
    front = pareto_front(MatrixPoint.from_rows([[Fraction(1, 2)]]), SUP11, 3)
    assert front[-1].q == (2,) and front[-1].err == 0.0


def test_front_exact_matches_float():
    rng = np.random.default_rng(11)
    for _ in range(5):
        th = random_theta(1, 1, rng)
        fa = pareto_front(th, SUP11, 200)
        fb = pareto_front(th, SUP11, 200, exact=True)
        assert [r.q for r in fa] == [r.q for r in fb]
    th2 = random_theta(1, 2, rng)
    fa = pareto_front(th2, ProductNormSpec(sup_norm(1), sup_norm(2)), 12)
    fb = pareto_front(th2, ProductNormSpec(sup_norm(1), sup_norm(2)), 12, exact=True)
    assert [r.q for r in fa] == [r.q for r in fb]


def test_front_monotone_lemma():
    """Strictly increasing qnorm, strictly decreasing err, on random points."""
    rng = np.random.default_rng(2024)
    for _ in range(10):
        m, n = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        norms = ProductNormSpec(sup_norm(m), sup_norm(n))
        th = random_theta(m, n, rng)
        front = pareto_front(th, norms, 50 if n == 1 else 12)
        for a, b in zip(front, front[1:]):
            assert a.qnorm < b.qnorm
            assert a.err > b.err


# ---------------------------------------------------------------------------
# chi


def test_chi_rational_zero():
    th = MatrixPoint.from_rows([[Fraction(1, 2)]])
    assert chi_gamma(th, 2.0, 1, SUP11) == 0.0


def test_chi_golden_t5():
    val = chi_gamma(golden_point(), 5.0, 1, SUP11)
    assert val == pytest.approx(5 * abs(5 * PHI - 8), abs=1e-9)
    assert val == pytest.approx(0.45085, abs=1e-4)


def test_chi_domain_error():
    with pytest.raises(ValueError):
        chi_gamma(golden_point(), 0.5, 1, SUP11)


def test_chi_golden_limsup():
    val, peaks = chi_limsup_estimate(golden_point(), 1, SUP11, 10**6)
    assert val == pytest.approx(PHI / math.sqrt(5), rel=5e-3)


def test_chi_dirichlet_bound_sup():
    """Rescaled peaks never beat the sup-norm constant 1 (m=1 or n=1)."""
    rng = np.random.default_rng(77)
    for m, n in ((1, 1), (2, 1), (1, 2)):
        norms = ProductNormSpec(sup_norm(m), sup_norm(n))
        for _ in range(5):
            th = random_theta(m, n, rng)
            front = pareto_front(th, norms, 300 if n == 1 else 40)
            for peak in chi_peaks(front, n / m):
                assert peak <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# lambda_psi


def test_lambda_golden_t10():
    psi = PsiSpec()  # t^-1
    assert lambda_psi(golden_point(), 10.0, psi, SUP11) == pytest.approx(0.8, abs=1e-12)


def test_lambda_matches_flowed_small():
    rng = np.random.default_rng(9)
    psi = PsiSpec()
    for mn in ((1, 1), (2, 1), (1, 2), (2, 2)):
        m, n = mn
        norms = ProductNormSpec(sup_norm(m), sup_norm(n))
        flow = FlowSpec.g_flow(equal_weights(m, n))
        for _ in range(5):
            th = random_theta(m, n, rng)
            t = float(rng.uniform(1, 20))
            a = lambda_psi(th, t, psi, norms)
            b, _ = first_minimum_flowed(th, flow, t, norms)
            assert a == pytest.approx(b, abs=1e-9)


def test_lambda_rational_tail():
    th = MatrixPoint.from_rows([[Fraction(3, 7)]])
    psi = PsiSpec()
    for t in (200.0, 5000.0):
        assert lambda_psi(th, t, psi, SUP11) == pytest.approx(7 / t, rel=1e-12)


def test_lambda_small_t_q0_branch():
    # very small t: the pure-p vector (q=0) wins
    psi = PsiSpec(C=Fraction(100))
    th = golden_point()
    val = lambda_psi(th, 1.0, psi, SUP11)
    assert val == pytest.approx(psi.inv_root(1.0, 1) * 1.0, rel=1e-12)


# ---------------------------------------------------------------------------
# realizing sequences


def test_realizing_golden_crossings():
    rs = realizing_sequence(golden_point(), PsiSpec(), SUP11, 50.0)
    qs = [r.q[0] for r in rs.records]
    assert qs[:5] == [1, 2, 3, 5, 8]
    # record k=3 is q=5; its reign ends at sqrt(8/|5 phi - 8|)
    k = qs.index(5)
    t_next = rs.tTimes[k]  # entry of record k+1
    assert t_next == pytest.approx(math.sqrt(8 / abs(5 * PHI - 8)), abs=1e-4)
    assert t_next == pytest.approx(9.41920, abs=1e-3)
    z_k = rs.zTimes[k]
    assert z_k == pytest.approx(math.sqrt(5 / abs(5 * PHI - 8)), abs=1e-4)
    assert rs.value(z_k) == pytest.approx(5 / z_k, rel=1e-12)
    assert rs.value(z_k) == pytest.approx(0.67145, abs=1e-4)


def test_realizing_rational_finite():
    rs = realizing_sequence(MatrixPoint.from_rows([[Fraction(2, 5)]]), PsiSpec(), SUP11, 100.0)
    assert rs.terminated
    assert rs.records[-1].err == 0.0


def test_realizing_segments_match_direct():
    """Unimodal segments: the piecewise formulas equal the direct minimization."""
    rng = np.random.default_rng(31)
    psi = PsiSpec()
    for mn in ((1, 1), (2, 1)):
        m, n = mn
        norms = ProductNormSpec(sup_norm(m), sup_norm(n))
        for _ in range(4):
            th = random_theta(m, n, rng)
            rs = realizing_sequence(th, psi, norms, 200.0)
            K = len(rs.records)
            for k in range(1, K - 1):
                t_k = rs.tTimes[k - 1]
                t_next = rs.tTimes[k] if k < K - 1 else rs.horizon
                z_k = rs.zTimes[k]
                assert t_k < z_k < t_next
                rec = rs.records[k]
                for t in np.linspace(t_k, z_k, 10):
                    direct = lambda_psi(th, float(t), psi, norms)
                    assert direct == pytest.approx(t ** (-1.0 / n) * rec.qnorm, abs=1e-9)
                    assert rs.value(float(t)) == pytest.approx(direct, abs=1e-9)
                for t in np.linspace(z_k, t_next, 10):
                    direct = lambda_psi(th, float(t), psi, norms)
                    assert direct == pytest.approx(psi.inv_root(float(t), m) * rec.err, abs=1e-9)
                # decreasing then increasing across the segment
                mid1 = rs.value(0.5 * (t_k + z_k))
                mid2 = rs.value(0.5 * (z_k + t_next))
                assert rs.value(t_k) > mid1 > rs.value(z_k)
                assert rs.value(z_k) < mid2 < rs.value(t_next)


def test_crossing_time_general_psi_bisection():
    psi = PsiSpec(C=Fraction(2), gamma=Fraction(3, 2), s=Fraction(1, 2))
    Q, E, m, n = 7.0, 0.01, 2, 1
    t = crossing_time(Q, E, psi, m, n)
    lhs = psi.inv_root(t, m) * E
    rhs = t ** (-1.0 / n) * Q
    assert lhs == pytest.approx(rhs, rel=1e-10)


# ---------------------------------------------------------------------------
# limsup estimates


def test_limsup_golden():
    est = limsup_estimate(golden_point(), PsiSpec(), SUP11, (None, 1e5))
    assert est.divergenceFlag == "finite"
    assert est.value == pytest.approx(math.sqrt(PHI / math.sqrt(5)), rel=1e-3)


def test_limsup_rational():
    est = limsup_estimate(MatrixPoint.from_rows([[Fraction(1, 3)]]), PsiSpec(), SUP11, (None, 1e4))
    assert est.divergenceFlag == "terminatedRational"
    assert est.value == 0.0


def test_limsup_fast_psi_diverges():
    est = limsup_estimate(golden_point(), PsiSpec(gamma=Fraction(3, 2)), SUP11, (None, 1e5))
    assert est.divergenceFlag == "growingUnbounded"
    assert est.value == math.inf


def test_monotone_collapse_around_gamma_one():
    """Bounded at gamma, vanishing below, growing above (golden point)."""
    th = golden_point()
    val_mid, _ = chi_limsup_estimate(th, 1, SUP11, 10**5)
    assert 0.1 < val_mid < 10

    lo_small, _ = chi_limsup_estimate(th, Fraction(9, 10), SUP11, 10**2)
    lo_large, _ = chi_limsup_estimate(th, Fraction(9, 10), SUP11, 10**6)
    assert lo_large < 0.7 * lo_small  # tail of chi_0.9 decays

    hi_small, _ = chi_limsup_estimate(th, Fraction(11, 10), SUP11, 10**2)
    hi_large, _ = chi_limsup_estimate(th, Fraction(11, 10), SUP11, 10**6)
    assert hi_large > 2.0 * hi_small  # tail of chi_1.1 grows


# ---------------------------------------------------------------------------
# bridge and uniform exponent


def test_bridge_golden():
    lhs, rhs, gap = bridge_check(golden_point(), 1, SUP11, (None, 10**5))
    assert lhs == pytest.approx(PHI / math.sqrt(5), rel=2e-2)
    assert rhs == pytest.approx(PHI / math.sqrt(5), rel=2e-2)
    assert gap < 0.01


def test_bridge_rational():
    assert bridge_check(MatrixPoint.from_rows([[Fraction(1, 4)]]), 1, SUP11, (None, 10**4)) == (0.0, 0.0, 0.0)


def test_bridge_random():
    rng = np.random.default_rng(6)
    for _ in range(3):
        th = random_theta(1, 1, rng)
        _, _, gap = bridge_check(th, 1, SUP11, (None, 10**4))
        assert gap < 0.05


def test_uniform_exponent_golden():
    # the index-ratio estimator approaches 1 like 1 + log(sqrt5)/log(phi)/k,
    # so the bias at q <= 1e6 (k ~ 29) is about 0.024 and shrinks with the horizon
    v6 = uniform_exponent_estimate(golden_point(), SUP11, 10**6)
    assert v6 == pytest.approx(1.0237269414897896, abs=1e-6)
    v4 = uniform_exponent_estimate(golden_point(), SUP11, 10**4)
    assert 1.0 < v6 < v4


def test_uniform_exponent_rational():
    assert uniform_exponent_estimate(MatrixPoint.from_rows([[Fraction(1, 3)]]), SUP11, 100) == math.inf


def test_uniform_exponent_simultaneous():
    rng = np.random.default_rng(15)
    vals = []
    for _ in range(5):
        th = random_theta(2, 1, rng)
        vals.append(uniform_exponent_estimate(th, SUP21, 10**5))
    assert 0.35 < float(np.median(vals)) < 0.7  # n/m = 1/2 almost surely


def test_psi_from_string():
    p = psi_from_string("t^-1")
    assert p == PsiSpec()
    p2 = psi_from_string("0.5*t^-2*log^-1")
    assert p2.C == Fraction(1, 2) and p2.gamma == 2 and p2.s == 1
