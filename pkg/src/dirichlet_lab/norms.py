"""Absolute norms on R^d and the max-of-blocks product norm.

Only absolute (coordinate-wise monotone) norms are supported: sup,
Euclidean, p-norms and weighted sup.  That covers every norm used in the
case studies and makes the inner minimization over integer translates
exact by coordinate rounding.  Each kind comes with tight two-sided
sup-norm comparison constants, which certify enumeration boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

Number = Union[int, float, Fraction]

_KINDS = ("sup", "euclidean", "p", "weightedSup")


@dataclass(frozen=True)
class NormSpec:
    kind: str
    dim: int
    p: Fraction | None = None
    weights: tuple[Fraction, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.kind == "p":
            if self.p is None or self.p < 1:
                raise ValueError("p-norm requires p >= 1")
        if self.kind == "weightedSup":
            if self.weights is None or len(self.weights) != self.dim:
                raise ValueError("weightedSup requires one weight per coordinate")
            if any(w <= 0 for w in self.weights):
                raise ValueError("weightedSup weights must be strictly positive")

    def to_json_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.p is not None:
            out["p"] = str(self.p)
        if self.weights is not None:
            out["weights"] = [str(w) for w in self.weights]
        return out

    @staticmethod
    def from_json_dict(d: dict) -> "NormSpec":
        p = Fraction(d["p"]) if "p" in d and d["p"] is not None else None
        weights = tuple(Fraction(w) for w in d["weights"]) if d.get("weights") else None
        return NormSpec(kind=d["kind"], dim=int(d["dim"]), p=p, weights=weights)


def sup_norm(dim: int) -> NormSpec:
    return NormSpec("sup", dim)


def euclidean_norm(dim: int) -> NormSpec:
    return NormSpec("euclidean", dim)


def p_norm(dim: int, p) -> NormSpec:
    return NormSpec("p", dim, p=Fraction(p))


def weighted_sup_norm(weights: Sequence) -> NormSpec:
    w = tuple(Fraction(x) for x in weights)
    return NormSpec("weightedSup", len(w), weights=w)


@dataclass(frozen=True)
class ProductNormSpec:
    """max(|x|_m, |y|_n) on R^(m+n), blocks of sizes left.dim and right.dim."""

    left: NormSpec
    right: NormSpec

    @property
    def dim(self) -> int:
        return self.left.dim + self.right.dim

    def to_json_dict(self) -> dict:
        return {"product": True, "left": self.left.to_json_dict(), "right": self.right.to_json_dict()}

    @staticmethod
    def from_json_dict(d: dict) -> "ProductNormSpec":
        return ProductNormSpec(NormSpec.from_json_dict(d["left"]), NormSpec.from_json_dict(d["right"]))


AnyNorm = Union[NormSpec, ProductNormSpec]


def eval_norm(x: Sequence[Number], spec: NormSpec):
    """Evaluate the norm; exact (Fraction) for sup/weightedSup on exact input."""
    if len(x) != spec.dim:
        raise ValueError(f"dimension mismatch: vector has {len(x)}, norm expects {spec.dim}")
    if spec.kind == "sup":
        return max(abs(v) for v in x)
    if spec.kind == "weightedSup":
        return max(w * abs(v) for w, v in zip(spec.weights, x))
    if spec.kind == "euclidean":
        return math.sqrt(math.fsum(float(v) * float(v) for v in x))
    # p-norm
    pf = float(spec.p)
    return math.fsum(abs(float(v)) ** pf for v in x) ** (1.0 / pf)


def eval_product_norm(x: Sequence[Number], y: Sequence[Number], spec: ProductNormSpec):
    return max(eval_norm(x, spec.left), eval_norm(y, spec.right))


def eval_any(v: Sequence[Number], spec: AnyNorm):
    """Evaluate a plain or product norm on a full length-d vector."""
    if isinstance(spec, ProductNormSpec):
        m = spec.left.dim
        return eval_product_norm(v[:m], v[m:], spec)
    return eval_norm(v, spec)


def equivalence_constants(spec: AnyNorm) -> tuple[float, float]:
    """Tight (c_low, c_high) with c_low*|x|_inf <= |x| <= c_high*|x|_inf."""
    if isinstance(spec, ProductNormSpec):
        ll, lh = equivalence_constants(spec.left)
        rl, rh = equivalence_constants(spec.right)
        return min(ll, rl), max(lh, rh)
    if spec.kind == "sup":
        return 1.0, 1.0
    if spec.kind == "euclidean":
        return 1.0, math.sqrt(spec.dim)
    if spec.kind == "p":
        return 1.0, spec.dim ** (1.0 / float(spec.p))
    # weightedSup: extremes on axis vectors / all-ones
    return float(min(spec.weights)), float(max(spec.weights))


def _eval_norm_block(X, spec: NormSpec):
    import numpy as np

    if spec.kind == "sup":
        return np.max(np.abs(X), axis=1)
    if spec.kind == "weightedSup":
        w = np.array([float(x) for x in spec.weights])
        return np.max(np.abs(X) * w, axis=1)
    if spec.kind == "euclidean":
        return np.sqrt(np.sum(X * X, axis=1))
    pf = float(spec.p)
    return np.sum(np.abs(X) ** pf, axis=1) ** (1.0 / pf)


def eval_norm_array(X, spec: AnyNorm):
    """Vectorized norm of each row of a 2-D array."""
    import numpy as np

    if isinstance(spec, ProductNormSpec):
        m = spec.left.dim
        return np.maximum(_eval_norm_block(X[:, :m], spec.left), _eval_norm_block(X[:, m:], spec.right))
    return _eval_norm_block(X, spec)


def min_nonzero_integer_norm(spec: NormSpec) -> float:
    """min |q| over nonzero integer vectors; equals min over unit vectors
    for an absolute norm (the spectrum's domain start t0)."""
    best = None
    for j in range(spec.dim):
        e = [0] * spec.dim
        e[j] = 1
        v = eval_norm(e, spec)
        best = v if best is None else min(best, v)
    return float(best)


def norm_from_json(d: dict) -> AnyNorm:
    if d.get("product"):
        return ProductNormSpec.from_json_dict(d)
    return NormSpec.from_json_dict(d)
