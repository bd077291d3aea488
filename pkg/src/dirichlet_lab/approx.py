"""Irrationality measure functions and realizing sequences.

Everything here reduces to the best-approximation records of a rational
matrix point: the pairs (q, p) whose error strictly improves on every
smaller q.  The records determine the two measure functions pointwise,
their exact local maxima (no time grids anywhere), the finite-horizon
limsup estimators, and the bridge identity between the continuous and the
jump function.  Records are found by a complete scan over q with the
optimal p recovered by coordinate rounding, which is exact for absolute
norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .lattice_flow import BudgetExceeded, MatrixPoint
from .norms import (
    ProductNormSpec,
    equivalence_constants,
    eval_norm,
    eval_norm_array,
    min_nonzero_integer_norm,
)
from .psi import PsiSpec

FRONT_BUDGET = 10**8


@dataclass(frozen=True)
class ApproxRecord:
    """A best-approximation pair: err strictly improves on all smaller qnorm."""

    q: tuple[int, ...]
    p: tuple[int, ...]
    qnorm: float
    err: float


@dataclass(frozen=True)
class RealizingSequence:
    """Records with their reign windows: record k realizes the minimum on
    [entry_k, entry_{k+1}] with an interior minimum at z_k."""

    records: tuple[ApproxRecord, ...]
    tTimes: tuple[float, ...]  # entry times of records 1, 2, ...
    zTimes: tuple[float, ...]  # interior minimum of each record's segment (inf if none)
    psi: PsiSpec
    t0: float
    m: int
    n: int
    p_min_norm: float
    terminated: bool
    horizon: float

    def entry_time(self, k: int) -> float:
        return -math.inf if k == 0 else self.tTimes[k - 1]

    def segment_index(self, t: float) -> int:
        lo, hi = 0, len(self.records) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.entry_time(mid) <= t:
                lo = mid
            else:
                hi = mid - 1
        return lo

    def value(self, t: float) -> float:
        """The flow minimum at time t (exact piecewise formula, no scan)."""
        if t <= 0:
            raise ValueError("t must be positive")
        if not self.terminated and t > self.horizon * (1 + 1e-9):
            raise ValueError(f"t={t} beyond computed horizon {self.horizon}")
        k = self.segment_index(t)
        rec = self.records[k]
        val = max(t ** (-1.0 / self.n) * rec.qnorm, self.psi.inv_root(t, self.m) * rec.err)
        # vectors with q = 0 can undercut only at small t
        return min(val, self.psi.inv_root(t, self.m) * self.p_min_norm)

    def peaks(self) -> list[tuple[float, float]]:
        """Local maxima: exactly the record entry times."""
        return [
            (tk, tk ** (-1.0 / self.n) * self.records[k + 1].qnorm)
            for k, tk in enumerate(self.tTimes)
        ]

    def window_max(self, ta: float, tb: float) -> tuple[float, float]:
        """(max value, arg time) of the minimum function over [ta, tb]."""
        if not ta < tb:
            raise ValueError("window must satisfy ta < tb")
        cands = [(self.value(ta), ta), (self.value(tb), tb)]
        for tk, val in self.peaks():
            if ta < tk < tb:
                cands.append((val, tk))
        best = max(cands, key=lambda c: (c[0], -c[1]))
        return best

    def tail_sup(self, t_from: float) -> tuple[float, float]:
        """(sup value, arg time) over [t_from, inf); exact for terminated points."""
        if not self.terminated:
            raise ValueError("tail sup requires a terminated (rational-hit) sequence")
        cands = [(self.value(t_from), t_from)]
        for tk, val in self.peaks():
            if tk > t_from:
                cands.append((val, tk))
        return max(cands, key=lambda c: (c[0], -c[1]))

    def to_csv_rows(self) -> list[tuple]:
        rows = []
        for k, rec in enumerate(self.records):
            tk = "" if k == 0 else self.tTimes[k - 1]
            zk = self.zTimes[k] if math.isfinite(self.zTimes[k]) else ""
            peak = "" if k == 0 else self.tTimes[k - 1] ** (-1.0 / self.n) * rec.qnorm
            rows.append((k, rec.qnorm, rec.err, tk, zk, peak))
        return rows


@dataclass(frozen=True)
class LimsupEstimate:
    value: float
    tailPeaks: tuple[tuple[float, float], ...]
    horizon: tuple[int, float]
    divergenceFlag: str  # finite | growingUnbounded | terminatedRational


def domain_start(norms: ProductNormSpec) -> float:
    """Smallest nonzero |q|_n, where the measure functions become defined."""
    return min_nonzero_integer_norm(norms.right)


def best_translate(theta: MatrixPoint, q: Sequence[int]) -> tuple[tuple[int, ...], tuple[Fraction, ...]]:
    """Optimal integer p for Theta q by coordinate rounding (ties to even), exact."""
    tq = theta.apply(q)
    p = []
    for v in tq:
        fl = v.numerator // v.denominator
        frac = v - fl
        if frac < Fraction(1, 2):
            p.append(fl)
        elif frac > Fraction(1, 2):
            p.append(fl + 1)
        else:
            p.append(fl if fl % 2 == 0 else fl + 1)
    res = tuple(tq[i] - p[i] for i in range(theta.m))
    return tuple(p), res


# ---------------------------------------------------------------------------
# best-approximation records


def pareto_front(
    theta: MatrixPoint,
    norms: ProductNormSpec,
    Qmax: float,
    exact: bool = False,
    budget: int = FRONT_BUDGET,
) -> list[ApproxRecord]:
    """Records with |q|_n <= Qmax, qnorm strictly increasing, err strictly
    decreasing; stops at an exact rational hit (err == 0)."""
    t0 = domain_start(norms)
    if Qmax < t0:
        raise ValueError(f"Qmax must be at least the domain start {t0}")
    if exact:
        return _front_exact(theta, norms, Qmax)
    if theta.n == 1:
        return _front_line(theta, norms, Qmax, budget)
    return _front_box(theta, norms, Qmax, budget)


def _front_line(theta: MatrixPoint, norms: ProductNormSpec, Qmax, budget) -> list[ApproxRecord]:
    w1 = float(eval_norm([1], norms.right))
    qmax_int = int(math.floor(float(Qmax) / w1 * (1 + 1e-12)))
    if qmax_int < 1:
        return []
    if qmax_int > budget:
        raise BudgetExceeded(f"front scan of {qmax_int} exceeds budget {budget}")
    x = theta.as_float_array()[:, 0]
    records: list[ApproxRecord] = []
    best = math.inf
    block = 1 << 20
    for start in range(1, qmax_int + 1, block):
        q = np.arange(start, min(start + block, qmax_int + 1), dtype=np.int64)
        XQ = np.outer(q.astype(float), x)
        E = XQ - np.rint(XQ)
        errs = eval_norm_array(E, norms.left)
        run = np.minimum.accumulate(np.minimum(errs, best))
        idx = np.where(errs < np.concatenate(([best], run[:-1])))[0]
        for i in idx:
            qi = int(q[i])
            err = float(errs[i])
            p, res = best_translate(theta, (qi,))
            if all(r == 0 for r in res):
                err = 0.0
            elif err < 1e-9:
                err = float(eval_norm([float(r) for r in res], norms.left))
            if err >= best:
                continue
            records.append(ApproxRecord((qi,), p, qi * w1, err))
            best = err
            if err == 0.0:
                return records
    return records


def _front_box(theta: MatrixPoint, norms: ProductNormSpec, Qmax, budget) -> list[ApproxRecord]:
    n = theta.n
    c_low, _ = equivalence_constants(norms.right)
    K = int(math.floor(float(Qmax) / c_low * (1 + 1e-12)))
    if (2 * K + 1) ** n > budget:
        raise BudgetExceeded(f"q box of {(2*K+1)**n} exceeds budget {budget}")
    axes = [np.arange(-K, K + 1, dtype=np.int64) for _ in range(n)]
    grids = np.meshgrid(*axes, indexing="ij")
    Q = np.stack([g.ravel() for g in grids], axis=1)
    Q = Q[np.any(Q != 0, axis=1)]
    first_idx = np.argmax(Q != 0, axis=1)
    lead = Q[np.arange(len(Q)), first_idx]
    Q = Q[lead > 0]
    qnorms = eval_norm_array(Q.astype(float), norms.right)
    keep = qnorms <= float(Qmax) * (1 + 1e-12)
    Q, qnorms = Q[keep], qnorms[keep]
    ThetaF = theta.as_float_array()
    XQ = Q.astype(float) @ ThetaF.T
    E = XQ - np.rint(XQ)
    errs = eval_norm_array(E, norms.left)
    order = np.lexsort(tuple(Q[:, j] for j in range(n - 1, -1, -1)) + (errs, qnorms))
    records: list[ApproxRecord] = []
    best = math.inf
    last_qnorm = -math.inf
    for i in order:
        qn, err = float(qnorms[i]), float(errs[i])
        if err >= best or qn <= last_qnorm:
            continue
        q = tuple(int(v) for v in Q[i])
        qc = q  # representatives already have positive leading coordinate
        p, res = best_translate(theta, qc)
        if all(r == 0 for r in res):
            err = 0.0
        elif err < 1e-9:
            err = float(eval_norm([float(r) for r in res], norms.left))
        if err >= best:
            continue
        records.append(ApproxRecord(qc, p, qn, err))
        best, last_qnorm = err, qn
        if err == 0.0:
            break
    return records


def _front_exact(theta: MatrixPoint, norms: ProductNormSpec, Qmax) -> list[ApproxRecord]:
    """Plain-Python exact path for small horizons (ties resolved rationally)."""
    n = theta.n
    c_low, _ = equivalence_constants(norms.right)
    K = int(math.floor(float(Qmax) / c_low)) + 1
    cands = []
    for q in _int_box(n, K):
        if all(v == 0 for v in q):
            continue
        lead = next(v for v in q if v != 0)
        if lead < 0:  # one representative per +/- pair
            continue
        qn = eval_norm(list(q), norms.right)
        if float(qn) > float(Qmax) * (1 + 1e-15):
            continue
        p, res = best_translate(theta, q)
        err = eval_norm([float(r) for r in res], norms.left)
        exact_zero = all(r == 0 for r in res)
        cands.append((float(qn), float(err), q, p, exact_zero))
    cands.sort(key=lambda c: (c[0], c[1], c[2], c[3]))
    records = []
    best = math.inf
    last_qn = -math.inf
    for qn, err, q, p, exact_zero in cands:
        if exact_zero:
            err = 0.0
        if err >= best or qn <= last_qn:
            continue
        records.append(ApproxRecord(q, p, qn, err))
        best, last_qn = err, qn
        if err == 0.0:
            break
    return records


def _int_box(n: int, K: int):
    if n == 1:
        for q in range(-K, K + 1):
            yield (q,)
        return
    for head in range(-K, K + 1):
        for tail in _int_box(n - 1, K):
            yield (head,) + tail


def chi_peaks(front: Sequence[ApproxRecord], gamma: float) -> list[float]:
    """Record-wise suprema of the jump function: qnorm_{k+1}^gamma * err_k."""
    return [
        front[k + 1].qnorm ** float(gamma) * front[k].err for k in range(len(front) - 1)
    ]


# ---------------------------------------------------------------------------
# the two measure functions


def chi_gamma(
    theta: MatrixPoint, t: float, gamma, norms: ProductNormSpec, budget: int = FRONT_BUDGET
) -> float:
    """t^gamma times the best error with |q|_n <= t."""
    t0 = domain_start(norms)
    if t < t0:
        raise ValueError(f"t must be at least the domain start {t0}")
    front = pareto_front(theta, norms, t, budget=budget)
    err = front[-1].err
    return t ** float(gamma) * err


def lambda_psi(
    theta: MatrixPoint,
    t: float,
    psi: PsiSpec,
    norms: ProductNormSpec,
    budget: int = FRONT_BUDGET,
    with_witness: bool = False,
):
    """Direct minimization of max(t^(-1/n)|q|, psi(t)^(-1/m)|Theta q - p|).

    Scans the certified q region outright; independent of the realizing
    sequence and of the lattice enumeration engine.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    m, n = theta.m, theta.n
    sx = psi.inv_root(t, m)
    sy = t ** (-1.0 / n)
    best = sx * min_nonzero_integer_norm(norms.left)
    q_best: tuple[int, ...] = tuple([0] * n)
    p_best = tuple(1 if i == 0 else 0 for i in range(m))
    best_key = (0.0, q_best, p_best)
    c_low, _ = equivalence_constants(norms.right)
    x = theta.as_float_array()

    def consider(Q: np.ndarray):
        nonlocal best, best_key, q_best, p_best
        if len(Q) == 0:
            return
        qnorms = eval_norm_array(Q.astype(float), norms.right)
        XQ = Q.astype(float) @ x.T
        P = np.rint(XQ)
        errs = eval_norm_array(XQ - P, norms.left)
        vals = np.maximum(sy * qnorms, sx * errs)
        vmin = float(np.min(vals))
        if vmin > best * (1 + 1e-12):
            return
        for i in np.where(vals <= max(vmin, best) * (1 + 1e-12))[0]:
            v = float(vals[i])
            if v > best * (1 + 1e-12):
                continue
            q_t = tuple(int(u) for u in Q[i])
            p_t = tuple(int(u) for u in P[i])
            key = (float(qnorms[i]), q_t, p_t)
            if v < best * (1 - 1e-12) or (v <= best * (1 + 1e-12) and key < best_key):
                best, best_key, q_best, p_best = v, key, q_t, p_t

    def q_cap() -> int:
        return int(math.floor(best / (sy * c_low) * (1 + 1e-12)))

    scanned = 0
    if n == 1:
        block = 1 << 17
        start = 1
        while start <= q_cap():
            stop = min(start + block, q_cap() + 1)
            scanned += stop - start
            if scanned > budget:
                raise BudgetExceeded(f"scan of {scanned} q values exceeds budget {budget}")
            consider(np.arange(start, stop, dtype=np.int64)[:, None])
            start = stop
    else:
        done = 0  # box |q|_inf <= done already scanned
        while done < q_cap():
            r = min(max(2 * done, 8), q_cap())
            axes = [np.arange(-r, r + 1, dtype=np.int64) for _ in range(n)]
            grids = np.meshgrid(*axes, indexing="ij")
            Q = np.stack([g.ravel() for g in grids], axis=1)
            Q = Q[np.max(np.abs(Q), axis=1) > done]
            first_idx = np.argmax(Q != 0, axis=1)
            lead = Q[np.arange(len(Q)), first_idx]
            Q = Q[lead > 0]
            scanned += len(Q)
            if scanned > budget:
                raise BudgetExceeded(f"q box of {scanned} exceeds budget {budget}")
            consider(Q)
            done = r
    if with_witness:
        return best, (q_best, p_best)
    return best


# ---------------------------------------------------------------------------
# crossings and realizing sequences


def crossing_time(qnorm: float, err: float, psi: PsiSpec, m: int, n: int) -> float:
    """Solve psi(t)^(-1/m)*err == t^(-1/n)*qnorm; closed form for pure powers."""
    if err <= 0:
        return math.inf
    if psi.is_pure_power:
        expo = float(psi.gamma) / m + 1.0 / n
        return (float(psi.C) ** (1.0 / m) * qnorm / err) ** (1.0 / expo)
    guess = (float(psi.C) ** (1.0 / m) * qnorm / err) ** (1.0 / (float(psi.gamma) / m + 1.0 / n))

    def g(t: float) -> float:
        return math.log(psi.inv_root(t, m) * err) - math.log(t ** (-1.0 / n) * qnorm)

    lo = hi = max(guess, 1e-30)
    while g(lo) > 0:
        lo /= 4.0
    while g(hi) < 0:
        hi *= 4.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-14:
            break
    return math.sqrt(lo * hi)


def realizing_sequence(
    theta: MatrixPoint,
    psi: PsiSpec,
    norms: ProductNormSpec,
    Tmax: float,
    budget: int = FRONT_BUDGET,
    until_terminated: bool = False,
) -> RealizingSequence:
    """Records plus their reign windows up to Tmax.

    The horizon on q is grown geometrically until the first record entering
    after Tmax is seen (or the front terminates), so the reported windows
    are the true ones.
    """
    m, n = theta.m, theta.n
    t0 = domain_start(norms)
    lam_cap = max(1.0, (Tmax * psi.value(Tmax)) ** (-1.0 / (m + n)))
    Qmax = max(4.0 * t0, 4.0 * lam_cap * Tmax ** (1.0 / n))
    front = None
    while True:
        front = pareto_front(theta, norms, Qmax, budget=budget)
        if front and front[-1].err == 0.0:
            break
        if front and not until_terminated:
            if len(front) > 1:
                last_entry = crossing_time(front[-1].qnorm, front[-2].err, psi, m, n)
                if last_entry > Tmax:
                    break
            # any record beyond the scanned horizon enters after
            # crossing(Qmax, err_last), so the window is already covered
            if crossing_time(Qmax, front[-1].err, psi, m, n) > Tmax:
                break
        Qmax *= 4
        if Qmax > budget:
            raise BudgetExceeded(
                f"realizing horizon needs q beyond budget {budget}"
                + (" (non-terminating point?)" if until_terminated else "")
            )
    terminated = front[-1].err == 0.0
    entries = [
        crossing_time(front[k + 1].qnorm, front[k].err, psi, m, n)
        for k in range(len(front) - 1)
    ]
    # keep records whose reign starts by Tmax (always keep record 0)
    K = 1 + sum(1 for e in entries if e <= Tmax) if not terminated else len(front)
    if not terminated:
        front = front[:K]
        entries = entries[: K - 1]
    zs = [crossing_time(rec.qnorm, rec.err, psi, m, n) for rec in front]
    return RealizingSequence(
        records=tuple(front),
        tTimes=tuple(entries),
        zTimes=tuple(zs),
        psi=psi,
        t0=t0,
        m=m,
        n=n,
        p_min_norm=min_nonzero_integer_norm(norms.left),
        terminated=terminated,
        horizon=float(Tmax) if not terminated else math.inf,
    )


GROWTH_RATIO = 1.6
OVERFLOW_PEAK = 1e6


def limsup_estimate(
    theta: MatrixPoint,
    psi: PsiSpec,
    norms: ProductNormSpec,
    horizon: tuple[int | None, float],
    budget: int = FRONT_BUDGET,
) -> LimsupEstimate:
    """Finite-horizon stand-in for the limsup of the continuous minimum.

    Evaluates only at the exact local maxima.  The tail is the peak list
    with the first K_tail entries dropped (default: first half).  A run of
    peaks that keeps growing across the tail is flagged growingUnbounded
    and reported as infinite; a rational hit is flagged terminatedRational
    with the exact limit 0.
    """
    K_tail, Tmax = horizon
    rs = realizing_sequence(theta, psi, norms, Tmax, budget=budget)
    peaks = [(t, v) for t, v in rs.peaks() if t <= Tmax]
    if rs.terminated:
        return LimsupEstimate(0.0, tuple(peaks), (K_tail or 0, Tmax), "terminatedRational")
    if K_tail is None:
        K_tail = len(peaks) // 2
    tail = peaks[K_tail:]
    if not tail:
        raise ValueError("horizon leaves no tail peaks; increase Tmax")
    vals = [v for _, v in tail]
    value = max(vals)
    flag = "finite"
    if value > OVERFLOW_PEAK:
        flag = "growingUnbounded"
        value = math.inf
    elif len(vals) >= 8:
        half = len(vals) // 2
        if max(vals[half:]) > GROWTH_RATIO * max(vals[:half]):
            flag = "growingUnbounded"
            value = math.inf
    return LimsupEstimate(value, tuple(tail), (K_tail, Tmax), flag)


def chi_limsup_estimate(
    theta: MatrixPoint,
    gamma,
    norms: ProductNormSpec,
    Qmax: float,
    K_tail: int | None = None,
    budget: int = FRONT_BUDGET,
) -> tuple[float, list[float]]:
    """Tail max of the jump-function peaks qnorm_{k+1}^gamma * err_k."""
    front = pareto_front(theta, norms, Qmax, budget=budget)
    peaks = chi_peaks(front, gamma)
    if front[-1].err == 0.0:
        return 0.0, peaks
    if K_tail is None:
        K_tail = len(peaks) // 2
    tail = peaks[K_tail:]
    if not tail:
        raise ValueError("no tail peaks at this horizon")
    return max(tail), peaks


def bridge_check(
    theta: MatrixPoint,
    gamma,
    norms: ProductNormSpec,
    horizon: tuple[int | None, float],
    budget: int = FRONT_BUDGET,
) -> tuple[float, float, float]:
    """Two routes to the same tail: direct evaluation of the continuous
    minimum at its peak times, raised to 1 + gamma*n/m, versus the jump
    function's record formula.  Returns (lhs, rhs, relative gap)."""
    K_tail, Qmax = horizon
    m, n = theta.m, theta.n
    gamma = float(gamma)
    psi = PsiSpec(gamma=Fraction(gamma).limit_denominator(10**6))
    front = pareto_front(theta, norms, Qmax, budget=budget)
    if front[-1].err == 0.0:
        return 0.0, 0.0, 0.0
    gnm = gamma * n / m
    peaks_rhs = chi_peaks(front, gnm)
    if K_tail is None:
        K_tail = len(peaks_rhs) // 2
    tail_idx = range(K_tail, len(peaks_rhs))
    if not len(peaks_rhs) or K_tail >= len(peaks_rhs):
        raise ValueError("no tail peaks at this horizon")
    rhs = max(peaks_rhs[k] for k in tail_idx)
    lhs_vals = []
    for k in tail_idx:
        tk = crossing_time(front[k + 1].qnorm, front[k].err, psi, m, n)
        lhs_vals.append(lambda_psi(theta, tk, psi, norms, budget=budget))
    lhs = max(lhs_vals) ** (1.0 + gnm)
    rel = abs(lhs - rhs) / max(rhs, 1e-300)
    return lhs, rhs, rel


def uniform_exponent_estimate(
    theta: MatrixPoint, norms: ProductNormSpec, Qmax: float, budget: int = FRONT_BUDGET
) -> float:
    """Tail min of -log err_k / log qnorm_{k+1}; inf for rational points."""
    front = pareto_front(theta, norms, Qmax, budget=budget)
    if front[-1].err == 0.0:
        return math.inf
    ratios = [
        -math.log(front[k].err) / math.log(front[k + 1].qnorm)
        for k in range(len(front) - 1)
        if front[k + 1].qnorm > 1
    ]
    if not ratios:
        raise ValueError("horizon too small for an exponent estimate")
    tail = ratios[len(ratios) // 2 :]
    return min(tail)
