import math
from fractions import Fraction

import numpy as np
import pytest

from dirichlet_lab.exhaustion import (
    DirEstimate,
    ExhaustionSpec,
    WindowTooSmall,
    dir_estimate,
    dir_of_lattice,
    gap_scan_d2,
    height,
    sup_product_exhaustion,
)
from dirichlet_lab.lattice_flow import (
    FlowSpec,
    MatrixPoint,
    equal_weights,
    lattice_of,
)
from dirichlet_lab.norms import ProductNormSpec, sup_norm
from dirichlet_lab.presets import GOLDEN

PHI = (1 + math.sqrt(5)) / 2
EX11 = sup_product_exhaustion(1, 1)
EX21 = sup_product_exhaustion(2, 1)


def test_height_examples():
    th0 = MatrixPoint.from_rows([[0]])
    flow = FlowSpec.g_flow(equal_weights(1, 1))
    assert height(th0, flow, 1.0, EX11) == 1.0
    golden = MatrixPoint.from_rows([[GOLDEN]])
    assert height(golden, flow, 10.0, EX11) == pytest.approx(0.8, abs=1e-12)


def test_height_below_top_for_sup():
    rng = np.random.default_rng(3)
    flow = FlowSpec.g_flow(equal_weights(2, 1))
    for _ in range(10):
        rows = [[Fraction(float(rng.uniform(0, 1))).limit_denominator(10**9)] for _ in range(2)]
        th = MatrixPoint.from_rows(rows)
        t = float(rng.uniform(1, 15))
        assert height(th, flow, t, EX21) <= EX21.b + 1e-9


def test_dir_golden_exact_path():
    golden = MatrixPoint.from_rows([[GOLDEN]])
    est = dir_estimate(golden, equal_weights(1, 1), EX11, (10.0, 1e5))
    assert est.method == "exact-peaks"
    assert est.value == pytest.approx(math.sqrt(PHI / math.sqrt(5)), rel=1e-3)


def test_dir_rational_decays():
    th = MatrixPoint.from_rows([[Fraction(3, 11)], [Fraction(2, 7)]])
    est = dir_estimate(th, equal_weights(2, 1), EX21, (100.0, 1e4))
    assert est.value < 0.01


def test_dir_window_too_small():
    golden = MatrixPoint.from_rows([[GOLDEN]])
    with pytest.raises(WindowTooSmall):
        dir_estimate(golden, equal_weights(1, 1), EX11, (10.0, 11.0))


def test_envelope_path_matches_exact_path():
    """Two code paths, same peaks: candidate envelope vs realizing peaks."""
    golden = MatrixPoint.from_rows([[GOLDEN]])
    w = equal_weights(1, 1)
    exact = dir_estimate(golden, w, EX11, (10.0, 500.0))
    env = dir_of_lattice(lattice_of(golden), 1, 1, w, EX11, (10.0, 500.0))
    assert env.value == pytest.approx(exact.value, abs=1e-9)


def test_envelope_path_general_weights_close_to_flowed():
    """The envelope never misses the true minimum at its own peak times."""
    from dirichlet_lab.lattice_flow import first_minimum_flowed

    rng = np.random.default_rng(8)
    w = equal_weights(2, 1)
    flow = FlowSpec.g_flow(w)
    rows = [[Fraction(float(rng.uniform(0, 1))).limit_denominator(10**9)] for _ in range(2)]
    th = MatrixPoint.from_rows(rows)
    est = dir_of_lattice(lattice_of(th), 2, 1, w, EX21, (2.0, 60.0))
    for t in est.peakTimes[:3]:
        direct, _ = first_minimum_flowed(th, flow, t, EX21.norm)
        assert direct == pytest.approx(est.value, abs=1e-9)


def test_height_log_lipschitz_along_flow():
    """Empirical log-time continuity of the height along an orbit."""
    golden = MatrixPoint.from_rows([[GOLDEN]])
    flow = FlowSpec.g_flow(equal_weights(1, 1))
    ts = np.exp(np.linspace(math.log(2), math.log(50), 60))
    hs = [height(golden, flow, float(t), EX11) for t in ts]
    ratios = [
        abs(math.log(hs[i + 1]) - math.log(hs[i])) / abs(math.log(ts[i + 1]) - math.log(ts[i]))
        for i in range(len(ts) - 1)
    ]
    L = max(ratios)
    # each flow curve moves coordinates at unit log-speed at most
    assert L <= 1.0 + 1e-6


def test_exhaustion_nesting_via_height():
    """Membership at a level is monotone: the height function separates levels."""
    golden = MatrixPoint.from_rows([[GOLDEN]])
    flow = FlowSpec.g_flow(equal_weights(1, 1))
    for t in (1.0, 3.0, 9.0):
        h = height(golden, flow, t, EX11)
        for eps1, eps2 in ((0.1, 0.5), (0.3, 0.9)):
            in1, in2 = eps1 <= h, eps2 <= h
            if eps1 < eps2 and in2:
                assert in1


def test_exhaustion_spec_validation():
    with pytest.raises(ValueError):
        ExhaustionSpec(sup_norm(2), b=0.0)
    with pytest.raises(ValueError):
        ExhaustionSpec(sup_norm(2), b=1.0, kind="metricBall")


def test_gap_scan_d2_smoke():
    ex = ExhaustionSpec(sup_norm(2), b=1.0)
    out = gap_scan_d2(20, ex, (2.0, 500.0), seed=11)
    assert sum(out["counts"]) == 20
    # no mass in the forbidden band, all samples in the upper cluster
    band = [v for v in out["values"] if 0.05 < v < 0.4]
    assert band == []
    assert min(out["values"]) > 0.4


def test_gap_scan_d2_golden_in_upper_cluster():
    golden = MatrixPoint.from_rows([[GOLDEN]])
    ex = ExhaustionSpec(ProductNormSpec(sup_norm(1), sup_norm(1)), b=1.0)
    est = dir_estimate(golden, equal_weights(1, 1), ex, (10.0, 1e4))
    assert est.value == pytest.approx(0.8507, abs=2e-3)
