"""Three-parameter family of approximation rate functions.

A rate function here is ``psi(t) = C * t**(-gamma) * log(e + t)**(-s)``
with C > 0, gamma > 0, s >= 0.  Every member is positive, continuous and
strictly decreasing on (0, inf), and the regime flags needed by the
flow/constructor modules have closed forms in (gamma, s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class PsiSpec:
    """Rate function C * t^-gamma * log(e+t)^-s."""

    C: Fraction = Fraction(1)
    gamma: Fraction = Fraction(1)
    s: Fraction = Fraction(0)

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.s < 0:
            raise ValueError("s must be nonnegative")

    def value(self, t: float) -> float:
        if t <= 0:
            raise ValueError("t must be positive")
        return float(self.C) * t ** (-float(self.gamma)) * math.log(math.e + t) ** (-float(self.s))

    def inv_root(self, t: float, m: int) -> float:
        """psi(t)^(-1/m), the error-side scale of the flow at time t."""
        return self.value(t) ** (-1.0 / m)

    @property
    def is_pure_power(self) -> bool:
        return self.s == 0

    @property
    def is_o_of_inverse_t(self) -> bool:
        """Whether t*psi(t) -> 0."""
        return self.gamma > 1 or (self.gamma == 1 and self.s > 0)

    def inv_root_is_o_t(self, m: int) -> bool:
        """Whether psi(t)^(-1/m) = o(t), i.e. t^m * psi(t) -> inf.

        For s >= 0 this holds exactly when gamma < m: at gamma == m the
        log factor pushes psi^(-1/m)/t up, not down.
        """
        return self.gamma < m

    def __str__(self):
        parts = []
        if self.C != 1:
            parts.append(f"{self.C}*")
        parts.append(f"t^-{self.gamma}")
        if self.s != 0:
            parts.append(f"*log^-{self.s}")
        return "".join(parts)


def psi_from_string(text: str) -> PsiSpec:
    """Parse strings like 't^-1', '0.5*t^-2', 't^-1*log^-0.5'."""
    s = text.strip().replace(" ", "")
    C = Fraction(1)
    if "*t^" in s:
        head, _, s = s.partition("*t^")
        C = _parse_rational(head)
        s = "t^" + s
    if not s.startswith("t^-"):
        raise ValueError(f"cannot parse rate function {text!r}")
    s = s[3:]
    logpart = Fraction(0)
    if "*log^-" in s:
        s, _, tail = s.partition("*log^-")
        logpart = _parse_rational(tail)
    gamma = _parse_rational(s)
    return PsiSpec(C=C, gamma=gamma, s=logpart)


def _parse_rational(text: str) -> Fraction:
    try:
        return Fraction(text)
    except ValueError:
        return Fraction(str(float(text)))
