"""Sublevel-set exhaustions of the space of lattices and escape thresholds.

The only implemented exhaustion is the norm kind: the compact set at level
eps collects the lattices whose first minimum is at least eps, so the
height of a lattice (the infimum of levels it has escaped) is just its
first minimum.  The escape threshold of a flow orbit (finite-horizon
limsup of the height) is estimated in two ways: an exact-peak path for
equal weights with a product norm, and a general path that harvests a
certified candidate set per dyadic time block and takes the lower envelope
of the candidates' flow curves, refining peaks at curve crossings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .approx import realizing_sequence
from .lattice_flow import (
    FlowSpec,
    LatticeBasis,
    MatrixPoint,
    Weights,
    equal_weights,
    first_minimum_flowed,
    lattice_points_in_box,
    lattice_of,
    random_sl2_basis,
)
from .norms import (
    AnyNorm,
    NormSpec,
    ProductNormSpec,
    equivalence_constants,
    eval_norm_array,
    sup_norm,
)
from .psi import PsiSpec


@dataclass(frozen=True)
class ExhaustionSpec:
    """Norm-sublevel exhaustion; height equals the first minimum."""

    norm: AnyNorm
    b: float  # top of the level range: the norm's critical constant (or a bound)
    kind: str = "kNorm"

    def __post_init__(self):
        if self.kind != "kNorm":
            raise ValueError("only the norm-sublevel exhaustion is implemented")
        if not (self.b > 0):
            raise ValueError("b must be positive")


def sup_product_exhaustion(m: int, n: int) -> ExhaustionSpec:
    """Sup norms on both blocks: the critical constant is exactly 1."""
    return ExhaustionSpec(ProductNormSpec(sup_norm(m), sup_norm(n)), b=1.0)


@dataclass(frozen=True)
class DirEstimate:
    value: float
    window: tuple[float, float]
    peakTimes: tuple[float, ...]
    method: str


class WindowTooSmall(ValueError):
    pass


def height(theta: MatrixPoint, flow: FlowSpec, t: float, ex: ExhaustionSpec) -> float:
    """Level at which the flowed lattice escapes the exhaustion."""
    value, _ = first_minimum_flowed(theta, flow, t, ex.norm)
    return value


def dir_estimate(
    theta: MatrixPoint,
    weights: Weights,
    ex: ExhaustionSpec,
    window: tuple[float, float],
    grid_per_block: int = 12,
) -> DirEstimate:
    """Finite-horizon escape threshold of the weighted orbit of a matrix point.

    Equal weights with a product norm use the exact peak times of the
    realizing sequence; anything else falls back to the certified
    candidate-envelope path on the sheared lattice.
    """
    tmin, tmax = window
    if tmin < 1:
        raise ValueError("window must start at Tmin >= 1")
    m, n = theta.m, theta.n
    if weights.is_equal and isinstance(ex.norm, ProductNormSpec):
        rs = realizing_sequence(theta, PsiSpec(), ex.norm, tmax)
        peaks = [(t, v) for t, v in rs.peaks() if tmin <= t <= tmax]
        if rs.terminated and not peaks:
            return DirEstimate(rs.value(tmax), window, (), "exact-peaks/terminated")
        if not rs.terminated and len(peaks) < 3:
            raise WindowTooSmall(f"only {len(peaks)} peaks in window {window}")
        value = max(v for _, v in peaks)
        times = tuple(t for t, v in peaks if v == value)
        return DirEstimate(value, window, times, "exact-peaks")
    return dir_of_lattice(lattice_of(theta), m, n, weights, ex, window, grid_per_block)


def _flow_exponents(m: int, n: int, weights: Weights) -> np.ndarray:
    return np.array([float(a) for a in weights.alpha] + [-float(b) for b in weights.beta])


def dir_of_lattice(
    basis: LatticeBasis,
    m: int,
    n: int,
    weights: Weights,
    ex: ExhaustionSpec,
    window: tuple[float, float],
    grid_per_block: int = 12,
    budget: int = 10**7,
) -> DirEstimate:
    """Envelope path: per dyadic block, harvest every lattice vector that can
    stay below the level cap somewhere in the block (complete by the block's
    enumeration radius), then locate envelope maxima at curve crossings."""
    tmin, tmax = window
    if tmin < 1:
        raise ValueError("window must start at Tmin >= 1")
    d = basis.d
    expo = _flow_exponents(m, n, weights)
    c_low, _ = equivalence_constants(ex.norm)
    cap = 1.2 * ex.b

    def curve_values(V: np.ndarray, t: float) -> np.ndarray:
        scales = t ** expo
        return eval_norm_array(V * scales, ex.norm)

    # harvest once per dyadic block, complete below the level cap
    harvested: list[tuple[float, float, np.ndarray]] = []
    block_lo = tmin
    while block_lo < tmax:
        block_hi = min(2 * block_lo, tmax)
        bounds = []
        for i in range(d):
            e = expo[i]
            worst_scale = block_lo**e if e >= 0 else block_hi**e
            bounds.append(cap / c_low / worst_scale)
        _, V = lattice_points_in_box(basis, bounds, budget=budget)
        harvested.append((block_lo, block_hi, V))
        block_lo = block_hi

    peak_cands: list[float] = []
    for lo_b, hi_b, V in harvested:
        if len(V) == 0:
            continue
        ts = np.exp(np.linspace(math.log(lo_b), math.log(hi_b), grid_per_block))
        argmins = [int(np.argmin(curve_values(V, float(t)))) for t in ts]
        peak_cands.extend([float(ts[0]), float(ts[-1])])
        for j in range(len(ts) - 1):
            a, b_ = argmins[j], argmins[j + 1]
            if a == b_:
                continue

            def diff(t: float) -> float:
                return float(curve_values(V[a : a + 1], t)[0]) - float(
                    curve_values(V[b_ : b_ + 1], t)[0]
                )

            lo, hi = float(ts[j]), float(ts[j + 1])
            if diff(lo) > 0 or diff(hi) < 0:
                peak_cands.extend([lo, hi])
                continue
            for _ in range(50):
                mid = math.sqrt(lo * hi)
                if diff(mid) <= 0:
                    lo = mid
                else:
                    hi = mid
            peak_cands.append(math.sqrt(lo * hi))

    # evaluate the true envelope (min over the harvested set) at each candidate
    best_val, best_times = -math.inf, []
    for t in sorted(set(peak_cands)):
        if not (tmin <= t <= tmax):
            continue
        for lo_b, hi_b, V in harvested:
            if lo_b <= t <= hi_b and len(V):
                val = float(np.min(curve_values(V, t)))
                if val > best_val:
                    best_val, best_times = val, [t]
                elif val == best_val:
                    best_times.append(t)
                break
    if not math.isfinite(best_val):
        raise WindowTooSmall(f"no envelope candidates in window {window}")
    return DirEstimate(best_val, window, tuple(best_times), "envelope")


def gap_scan_d2(
    sample_count: int,
    ex: ExhaustionSpec,
    window: tuple[float, float],
    seed: int,
    bins: tuple[float, ...] = (0.0, 0.05, 0.4, 0.7, 0.85, 1.0, 1.5),
) -> dict:
    """Escape thresholds of random 2-lattices under diag(t, 1/t), binned.

    Random (hence nondivergent) orbits cluster near the top of the range;
    the low band stays empty, the qualitative gap of the two-dimensional
    spectrum.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    w = equal_weights(1, 1)
    values = []
    for _ in range(sample_count):
        basis = random_sl2_basis(rng)
        est = dir_of_lattice(basis, 1, 1, w, ex, window)
        values.append(est.value / abs(float(basis.det)) ** 0.5)
    counts = [0] * (len(bins) - 1)
    for v in values:
        for i in range(len(bins) - 1):
            if bins[i] <= v < bins[i + 1]:
                counts[i] += 1
                break
    return {
        "bins": list(bins),
        "counts": counts,
        "seed": seed,
        "window": list(window),
        "values": sorted(values),
    }
