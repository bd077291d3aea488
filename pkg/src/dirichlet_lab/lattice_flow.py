"""Sheared integer lattices, diagonal flows, and certified first minima.

The lattice attached to an m-by-n rational matrix is the block
unitriangular [[I, Theta], [0, I]] Z^d.  Its vectors are indexed by
integer pairs (q, p) as (Theta q - p, q), so diagonal flows act in closed
form and never require matrix products.  First minima are found by
complete box enumeration: an upper bound from explicit candidate vectors
plus the norm's sup-comparison constant bounds the search region, which
makes the result certified rather than heuristic.  Enumeration work is
capped by an explicit budget; callers see a BudgetExceeded error instead
of a silent truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from .norms import (
    AnyNorm,
    NormSpec,
    ProductNormSpec,
    equivalence_constants,
    eval_any,
    eval_norm,
    eval_norm_array,
)
from .psi import PsiSpec

DEFAULT_BUDGET = 10**8


class BudgetExceeded(RuntimeError):
    """Enumeration region too large; reduce t, loosen the norm, or raise the budget."""


def _to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**12)
    return Fraction(x)


@dataclass(frozen=True)
class MatrixPoint:
    """Exact rational m-by-n matrix, the point under study."""

    m: int
    n: int
    rows: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if len(self.rows) != self.m or any(len(r) != self.n for r in self.rows):
            raise ValueError("entry shape does not match (m, n)")

    @staticmethod
    def from_rows(rows: Sequence[Sequence]) -> "MatrixPoint":
        rr = tuple(tuple(_to_fraction(x) for x in row) for row in rows)
        return MatrixPoint(len(rr), len(rr[0]), rr)

    @staticmethod
    def column_vector(entries: Sequence) -> "MatrixPoint":
        return MatrixPoint.from_rows([[x] for x in entries])

    @property
    def d(self) -> int:
        return self.m + self.n

    def entry(self, i: int, j: int) -> Fraction:
        return self.rows[i][j]

    def column(self, j: int) -> tuple[Fraction, ...]:
        return tuple(self.rows[i][j] for i in range(self.m))

    def as_float_array(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.rows], dtype=float)

    def apply(self, q: Sequence[int]) -> tuple[Fraction, ...]:
        """Theta q, exact."""
        return tuple(sum(self.rows[i][j] * q[j] for j in range(self.n)) for i in range(self.m))

    def flat(self) -> tuple[Fraction, ...]:
        return tuple(x for row in self.rows for x in row)

    def to_json(self) -> list:
        return [[str(x) for x in row] for row in self.rows]

    @staticmethod
    def from_json(data: list) -> "MatrixPoint":
        return MatrixPoint.from_rows([[Fraction(x) for x in row] for row in data])


@dataclass(frozen=True)
class Weights:
    """Positive weights (alpha, beta), each block summing to 1."""

    alpha: tuple[Fraction, ...]
    beta: tuple[Fraction, ...]

    def __post_init__(self):
        if not self.alpha or not self.beta:
            raise ValueError("weights must be nonempty")
        if any(a <= 0 for a in self.alpha) or any(b <= 0 for b in self.beta):
            raise ValueError("weights must be strictly positive")
        if sum(self.alpha) != 1 or sum(self.beta) != 1:
            raise ValueError("each weight block must sum to 1")

    @property
    def m(self) -> int:
        return len(self.alpha)

    @property
    def n(self) -> int:
        return len(self.beta)

    @property
    def is_equal(self) -> bool:
        return all(a == Fraction(1, self.m) for a in self.alpha) and all(
            b == Fraction(1, self.n) for b in self.beta
        )


def equal_weights(m: int, n: int) -> Weights:
    return Weights(tuple([Fraction(1, m)] * m), tuple([Fraction(1, n)] * n))


@dataclass(frozen=True)
class FlowSpec:
    """One-parameter diagonal flow: power weights or a rate-function scaling."""

    family: str  # "g" or "a_psi"
    weights: Weights | None = None
    psi: PsiSpec | None = None

    def __post_init__(self):
        if self.family == "g":
            if self.weights is None:
                raise ValueError("g flow requires weights")
        elif self.family == "a_psi":
            if self.psi is None:
                raise ValueError("a_psi flow requires a rate function")
        else:
            raise ValueError(f"unknown flow family {self.family!r}")

    @staticmethod
    def g_flow(weights: Weights) -> "FlowSpec":
        return FlowSpec("g", weights=weights)

    @staticmethod
    def a_psi_flow(psi: PsiSpec) -> "FlowSpec":
        return FlowSpec("a_psi", psi=psi)

    def x_scales(self, t: float, m: int) -> list[float]:
        if t <= 0:
            raise ValueError("t must be positive")
        if self.family == "g":
            if self.weights.m != m:
                raise ValueError("weight length does not match m")
            return [t ** float(a) for a in self.weights.alpha]
        return [self.psi.inv_root(t, m)] * m

    def y_scales(self, t: float, n: int) -> list[float]:
        if t <= 0:
            raise ValueError("t must be positive")
        if self.family == "g":
            if self.weights.n != n:
                raise ValueError("weight length does not match n")
            return [t ** -float(b) for b in self.weights.beta]
        return [t ** (-1.0 / n)] * n


@dataclass(frozen=True)
class LatticeBasis:
    """Columns of a nondegenerate rational basis, determinant cached."""

    columns: tuple[tuple[Fraction, ...], ...]
    det: Fraction

    @property
    def d(self) -> int:
        return len(self.columns)

    @staticmethod
    def from_columns(columns: Sequence[Sequence]) -> "LatticeBasis":
        cols = tuple(tuple(_to_fraction(x) for x in col) for col in columns)
        d = len(cols)
        if any(len(c) != d for c in cols):
            raise ValueError("basis must be square")
        det = _fraction_det(cols)
        if det == 0:
            raise ValueError("basis is degenerate")
        return LatticeBasis(cols, det)

    def as_float_matrix(self) -> np.ndarray:
        d = self.d
        return np.array([[float(self.columns[j][i]) for j in range(d)] for i in range(d)])

    def vector(self, coeffs: Sequence[int]) -> tuple[Fraction, ...]:
        d = self.d
        return tuple(
            sum(self.columns[j][i] * coeffs[j] for j in range(d)) for i in range(d)
        )


def _fraction_det(cols: tuple[tuple[Fraction, ...], ...]) -> Fraction:
    d = len(cols)
    a = [[cols[j][i] for j in range(d)] for i in range(d)]
    det = Fraction(1)
    for k in range(d):
        piv = None
        for r in range(k, d):
            if a[r][k] != 0:
                piv = r
                break
        if piv is None:
            return Fraction(0)
        if piv != k:
            a[k], a[piv] = a[piv], a[k]
            det = -det
        det *= a[k][k]
        inv = a[k][k]
        for r in range(k + 1, d):
            if a[r][k] != 0:
                f = a[r][k] / inv
                for c in range(k, d):
                    a[r][c] -= f * a[k][c]
    return det


def lattice_of(theta: MatrixPoint) -> LatticeBasis:
    """Unimodular basis [[I, Theta], [0, I]] of the sheared lattice."""
    m, n, d = theta.m, theta.n, theta.d
    cols = []
    for i in range(m):
        col = [Fraction(0)] * d
        col[i] = Fraction(1)
        cols.append(tuple(col))
    for j in range(n):
        col = [theta.entry(i, j) for i in range(m)] + [Fraction(0)] * n
        col[m + j] = Fraction(1)
        cols.append(tuple(col))
    return LatticeBasis(tuple(cols), Fraction(1))


def flowed_vector(
    theta: MatrixPoint, flow: FlowSpec, t: float, q: Sequence[int], p: Sequence[int]
) -> list[float]:
    """Image of the lattice vector (Theta q - p, q) under the flow at time t."""
    if t <= 0:
        raise ValueError("t must be positive")
    ax = flow.x_scales(t, theta.m)
    by = flow.y_scales(t, theta.n)
    tq = theta.apply(q)
    xs = [ax[i] * float(tq[i] - p[i]) for i in range(theta.m)]
    ys = [by[j] * float(q[j]) for j in range(theta.n)]
    return xs + ys


@dataclass(frozen=True)
class FlowedVectorWitness:
    q: tuple[int, ...]
    p: tuple[int, ...]
    value: float
    t: float

    def __post_init__(self):
        if all(v == 0 for v in self.q) and all(v == 0 for v in self.p):
            raise ValueError("witness must be a nonzero lattice vector")

    def to_json_dict(self) -> dict:
        return {"q": list(self.q), "p": list(self.p), "value": self.value, "t": self.t}


# ---------------------------------------------------------------------------
# vectorized norm evaluation and integer box enumeration


def _box_count(ks: Sequence[int]) -> int:
    total = 1
    for k in ks:
        total *= 2 * k + 1
    return total


def _iter_coeff_box(ks: Sequence[int], chunk_rows: int = 1 << 18) -> Iterator[np.ndarray]:
    """Yield (N, d) int64 chunks covering the full box prod [-k_i, k_i]."""
    ks = list(ks)
    d = len(ks)
    tail_ks = ks[1:]
    tail_count = _box_count(tail_ks) if tail_ks else 1
    if tail_ks:
        grids = np.meshgrid(
            *[np.arange(-k, k + 1, dtype=np.int64) for k in tail_ks], indexing="ij"
        )
        tail = np.stack([g.ravel() for g in grids], axis=1)
    else:
        tail = np.zeros((1, 0), dtype=np.int64)
    step = max(1, chunk_rows // max(tail_count, 1))
    first = np.arange(-ks[0], ks[0] + 1, dtype=np.int64)
    for start in range(0, len(first), step):
        block_first = first[start : start + step]
        rep_first = np.repeat(block_first, tail_count)
        rep_tail = np.tile(tail, (len(block_first), 1))
        yield np.column_stack([rep_first[:, None], rep_tail]) if d > 1 else rep_first[:, None]


def lattice_points_in_box(
    basis: LatticeBasis, bounds: Sequence[float], budget: int = DEFAULT_BUDGET
) -> tuple[np.ndarray, np.ndarray]:
    """All nonzero lattice vectors x with |x_i| <= bounds_i (one per +/- pair).

    Returns (coeffs, points) arrays.  Complete by construction: coefficient
    ranges come from the inverse basis row sums against the bounds.
    """
    d = basis.d
    B = basis.as_float_matrix()
    Binv = np.linalg.inv(B)
    b = np.asarray(bounds, dtype=float)
    ks = [int(math.floor(np.sum(np.abs(Binv[i]) * b) * (1 + 1e-9) + 1e-9)) for i in range(d)]
    if _box_count(ks) > budget:
        raise BudgetExceeded(f"coefficient box has {_box_count(ks)} points, budget {budget}")
    out_u, out_x = [], []
    slack = 1 + 1e-9
    for U in _iter_coeff_box(ks):
        nz = np.any(U != 0, axis=1)
        U = U[nz]
        if len(U) == 0:
            continue
        # one representative per +/- pair: first nonzero coefficient positive
        first_idx = np.argmax(U != 0, axis=1)
        lead = U[np.arange(len(U)), first_idx]
        U = U[lead > 0]
        if len(U) == 0:
            continue
        X = U @ B.T
        ok = np.all(np.abs(X) <= b * slack, axis=1)
        if np.any(ok):
            out_u.append(U[ok])
            out_x.append(X[ok])
    if not out_u:
        return np.zeros((0, d), dtype=np.int64), np.zeros((0, d))
    return np.concatenate(out_u), np.concatenate(out_x)


def first_minimum(
    basis: LatticeBasis, norm: AnyNorm, budget: int = DEFAULT_BUDGET
) -> tuple[float, tuple[int, ...]]:
    """Shortest nonzero lattice vector under the norm, with witness coefficients.

    Certified: every lattice vector shorter than the best basis column lies
    in the box |x|_inf <= bound/c_low, which is enumerated completely.
    """
    d = basis.d
    cols_f = [[float(x) for x in col] for col in basis.columns]
    upper = min(eval_any(col, norm) for col in cols_f)
    c_low, _ = equivalence_constants(norm)
    R = float(upper) / c_low * (1 + 1e-12)
    U, X = lattice_points_in_box(basis, [R] * d, budget=budget)
    if len(U) == 0:  # the best column itself is the witness
        j = min(range(d), key=lambda j: eval_any(cols_f[j], norm))
        coeffs = tuple(1 if i == j else 0 for i in range(d))
        return float(eval_any(cols_f[j], norm)), coeffs
    vals = eval_norm_array(X, norm)
    best = np.min(vals)
    tied = np.where(vals <= best * (1 + 1e-12))[0]
    best_key = None
    best_idx = None
    for idx in tied:
        key = (vals[idx], tuple(int(v) for v in U[idx]))
        if best_key is None or key < best_key:
            best_key, best_idx = key, idx
    coeffs = tuple(int(v) for v in U[best_idx])
    value = float(vals[best_idx])
    exact = _exact_value(basis, coeffs, norm)
    if exact is not None:
        value = exact
    return value, coeffs


def _exact_value(basis: LatticeBasis, coeffs: tuple[int, ...], norm: AnyNorm) -> float | None:
    vec = basis.vector(coeffs)
    if isinstance(norm, ProductNormSpec):
        m = norm.left.dim
        if norm.left.kind in ("sup", "weightedSup") and norm.right.kind in ("sup", "weightedSup"):
            return float(max(eval_norm(vec[:m], norm.left), eval_norm(vec[m:], norm.right)))
        return None
    if norm.kind in ("sup", "weightedSup"):
        return float(eval_norm(vec, norm))
    return None


def first_minimum_flowed(
    theta: MatrixPoint,
    flow: FlowSpec,
    t: float,
    norm: AnyNorm,
    budget: int = DEFAULT_BUDGET,
) -> tuple[float, FlowedVectorWitness]:
    """First minimum of the flowed sheared lattice, exploiting its diagonal form.

    q ranges over a box certified from the y-block scales and the current
    upper bound; for each q the optimal integer p is the coordinate-wise
    rounding of Theta q (valid for absolute norms, ties to even).  The
    p-only sublattice (q = 0) is handled as a separate closed-form branch.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    m, n = theta.m, theta.n
    if isinstance(norm, ProductNormSpec):
        if norm.left.dim != m or norm.right.dim != n:
            raise ValueError("product norm blocks do not match (m, n)")
    elif norm.dim != theta.d:
        raise ValueError("norm dimension does not match m + n")
    ax = np.array(flow.x_scales(t, m))
    by = np.array(flow.y_scales(t, n))
    ThetaF = theta.as_float_array()

    def value_of(q_arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        XQ = q_arr @ ThetaF.T
        P = np.rint(XQ)
        E = (XQ - P) * ax
        Y = q_arr * by
        return eval_norm_array(np.column_stack([E, Y]), norm), P.astype(np.int64)

    # q = 0 branch: vectors (-p, 0), best at a single unit coordinate
    best_val = math.inf
    best_key = (math.inf, (), ())
    best_qp = None
    for i in range(m):
        xs = [0.0] * m
        xs[i] = ax[i]
        v = float(eval_any(xs + [0.0] * n, norm))
        q0 = tuple([0] * n)
        p0 = tuple(1 if j == i else 0 for j in range(m))
        key = (0.0, q0, p0)
        if v < best_val * (1 - 1e-12) or (v <= best_val * (1 + 1e-12) and key < best_key):
            best_val, best_key, best_qp = v, key, (q0, p0)

    # seed with the unit q vectors to tighten the box before scanning
    eye = np.eye(n, dtype=np.int64)
    seed_vals, seed_P = value_of(eye)
    for j in range(n):
        v = float(seed_vals[j])
        if v < best_val:
            q0 = tuple(int(x) for x in eye[j])
            p0 = tuple(int(x) for x in seed_P[j])
            qn = float(eval_norm(list(q0), norm.right)) if isinstance(norm, ProductNormSpec) else 1.0
            best_val, best_key, best_qp = v, (qn, q0, p0), (q0, p0)

    if isinstance(norm, ProductNormSpec):
        c_low_y, _ = equivalence_constants(norm.right)
    else:
        c_low_y, _ = equivalence_constants(norm)
    qnorm_spec = norm.right if isinstance(norm, ProductNormSpec) else None

    def consider(Q: np.ndarray):
        nonlocal best_val, best_key, best_qp
        if len(Q) == 0:
            return
        first_idx = np.argmax(Q != 0, axis=1)
        lead = Q[np.arange(len(Q)), first_idx]
        Q = Q[lead > 0]
        if len(Q) == 0:
            return
        vals, P = value_of(Q)
        vmin = float(np.min(vals))
        if vmin > best_val * (1 + 1e-12):
            return
        for idx in np.where(vals <= max(vmin, best_val) * (1 + 1e-12))[0]:
            v = float(vals[idx])
            if v > best_val * (1 + 1e-12):
                continue
            q_t = tuple(int(x) for x in Q[idx])
            p_t = tuple(int(x) for x in P[idx])
            qn = float(eval_norm(list(q_t), qnorm_spec)) if qnorm_spec else float(np.max(np.abs(Q[idx])))
            key = (qn, q_t, p_t)
            if v < best_val * (1 - 1e-12):
                best_val, best_key, best_qp = v, key, (q_t, p_t)
            elif v <= best_val * (1 + 1e-12) and key < best_key:
                best_val, best_key, best_qp = v, key, (q_t, p_t)

    def caps() -> list[int]:
        return [int(math.floor(best_val / (c_low_y * by[j]) * (1 + 1e-12))) for j in range(n)]

    # grow the scanned box geometrically; the cap shrinks as the bound improves
    scanned = 0
    done = [0] * n
    while any(done[j] < caps()[j] for j in range(n)):
        ks = [min(max(2 * done[j], 4), caps()[j]) for j in range(n)]
        count = _box_count(ks)
        if count > budget:
            raise BudgetExceeded(
                f"q box has {count} points, budget {budget}; reduce t or loosen the norm"
            )
        for Q in _iter_coeff_box(ks):
            inner = np.all(np.abs(Q) <= np.array(done), axis=1)
            Q = Q[~inner]
            scanned += len(Q)
            if scanned > budget:
                raise BudgetExceeded(f"scanned {scanned} q values, budget {budget}")
            consider(Q)
        done = ks
    q, p = best_qp
    return best_val, FlowedVectorWitness(q=q, p=p, value=best_val, t=t)


# ---------------------------------------------------------------------------
# dense-lattice library and the sampled lower bound for the norm constant r


def hexagonal_basis(digits: int = 30) -> LatticeBasis:
    """Unimodular hexagonal basis (a, 0), (a/2, a sqrt3/2), a = (2/sqrt3)^(1/2)."""
    scale = 10**digits
    sqrt3 = Fraction(math.isqrt(3 * scale * scale), scale)
    a2 = 2 / sqrt3  # a^2, so the covolume a^2 * sqrt3 / 2 == 1 up to truncation
    a = _fraction_sqrt(a2, digits)
    return LatticeBasis.from_columns([[a, 0], [a / 2, a * sqrt3 / 2]])


def cylinder_critical_basis(digits: int = 30) -> LatticeBasis:
    """Critical lattice of max(euclid(x1,x2), |x3|), scaled to covolume 1.

    Three hexagonal layers with deep-hole shifts; the unscaled copy has
    covolume sqrt3/2 and gauge minimum 1, so scaling by (2/sqrt3)^(1/3)
    gives a unimodular lattice whose first minimum attains the norm's
    critical constant.
    """
    scale = 10**digits
    sqrt3 = Fraction(math.isqrt(3 * scale * scale), scale)
    r = _fraction_root(2 / sqrt3, 3, digits)
    b1 = [sqrt3, Fraction(0), Fraction(0)]
    b2 = [sqrt3 / 2, Fraction(3, 2), Fraction(0)]
    b3 = [sqrt3 / 2, Fraction(1, 2), Fraction(1, 3)]
    cols = [[r * x for x in col] for col in (b1, b2, b3)]
    return LatticeBasis.from_columns(cols)


def _fraction_sqrt(x: Fraction, digits: int) -> Fraction:
    scale = 10**digits
    return Fraction(math.isqrt(x.numerator * scale * scale // x.denominator), scale)


def _fraction_root(x: Fraction, k: int, digits: int) -> Fraction:
    target = float(x) ** (1.0 / k)
    f = Fraction(target).limit_denominator(10**digits)
    return f


def random_unimodular_basis(d: int, rng: np.random.Generator, digits: int = 12) -> LatticeBasis:
    """Haar-like random unimodular basis: Gaussian matrix normalized to det 1."""
    while True:
        A = rng.standard_normal((d, d))
        det = np.linalg.det(A)
        if abs(det) < 1e-6:
            continue
        A = A / abs(det) ** (1.0 / d)
        cols = [[Fraction(float(A[i, j])).limit_denominator(10**digits) for i in range(d)] for j in range(d)]
        try:
            return LatticeBasis.from_columns(cols)
        except ValueError:
            continue


def random_sl2_basis(rng: np.random.Generator, digits: int = 12) -> LatticeBasis:
    """Random 2-lattice: rotation times upper triangular with unit determinant."""
    phi = rng.uniform(0, 2 * math.pi)
    a = math.exp(rng.normal(0, 0.5))
    b = rng.normal(0, 1.0)
    c, s = math.cos(phi), math.sin(phi)
    M = np.array([[c, -s], [s, c]]) @ np.array([[a, b], [0.0, 1.0 / a]])
    cols = [[Fraction(float(M[i, j])).limit_denominator(10**digits) for i in range(2)] for j in range(2)]
    return LatticeBasis.from_columns(cols)


def r_estimate(
    norm: AnyNorm,
    d: int,
    sample_count: int,
    seed: int,
    budget: int = DEFAULT_BUDGET,
) -> float:
    """Sampled lower bound for the largest first minimum over unimodular lattices.

    Takes the max of first minima over seeded random unimodular lattices and
    a small library of known dense lattices; values are normalized by
    |det|^(1/d) so rational truncations of irrational bases are harmless.
    Reported as a lower bound for the true constant.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    best = 0.0

    def normalized(basis: LatticeBasis) -> float:
        val, _ = first_minimum(basis, norm, budget=budget)
        return val / abs(float(basis.det)) ** (1.0 / d)

    # library: the integer lattice always, plus known critical shapes
    eye = LatticeBasis.from_columns([[1 if i == j else 0 for i in range(d)] for j in range(d)])
    best = max(best, normalized(eye))
    if d == 2 and isinstance(norm, NormSpec) and norm.kind == "euclidean":
        best = max(best, normalized(hexagonal_basis()))
    if (
        d == 3
        and isinstance(norm, ProductNormSpec)
        and norm.left.kind == "euclidean"
        and norm.left.dim == 2
        and norm.right.dim == 1
    ):
        best = max(best, normalized(cylinder_critical_basis()))
    rng = np.random.default_rng(np.random.SeedSequence([seed, d]))
    for _ in range(sample_count):
        basis = random_unimodular_basis(d, rng)
        best = max(best, normalized(basis))
    return best
