"""Certified evaluation of the control series ``sum_n phi^n c!(n)``.

Terms satisfy ``a_{n+1} / a_n = phi * c(n+1)``.  Because ``c`` is
nonincreasing the ratio is nonincreasing too, so once it drops below one the
remaining tail is dominated by a geometric series.  Divergence is decided from
the structural limit ``c(inf)``, never from partial sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .model import ControlSpec, rational


class NumericalError(ArithmeticError):
    """A truncation, tail or leak tolerance could not be met."""


@dataclass(frozen=True)
class Inconclusive:
    """Returned instead of a value when no certified answer exists within budget."""

    reason: str
    terms: int = 0
    partial: float = math.nan

    def __bool__(self):
        return False


@dataclass(frozen=True)
class SeriesValue:
    value: float
    tail_bound: float
    terms: int
    divergent: bool = False


DIVERGENT = SeriesValue(math.inf, 0.0, 0, divergent=True)


def control_series(phi, c: ControlSpec, *, rtol: float = 1e-15, budget: int = 1_000_000):
    """``S = sum_{n>=0} phi^n c!(n)`` with a certified upper bound on the tail.

    Returns a :class:`SeriesValue` (``divergent=True`` and ``value=inf`` when
    the series diverges) or :class:`Inconclusive` when the tail bound cannot
    reach ``rtol`` within ``budget`` terms.
    """
    phi_q = rational(phi)
    phi = float(phi_q)
    if phi == 0:
        return SeriesValue(1.0, 0.0, 1)
    end = c.support_end()
    if end is None and phi_q * c.limit() >= 1:
        return DIVERGENT
    terms = [1.0]
    a = 1.0
    n = 0
    while True:
        if end is not None and n + 1 >= end:
            return SeriesValue(math.fsum(terms), 0.0, len(terms))
        ratio = phi * c(n + 1)
        if ratio < 1:
            # geometric domination of the tail after index n
            bound = a * ratio / (1 - ratio)
            s = math.fsum(terms)
            if bound <= rtol * s:
                return SeriesValue(s, bound, len(terms))
        if len(terms) >= budget:
            return Inconclusive(f"tail bound not below {rtol:g} after {budget} terms",
                                len(terms), math.fsum(terms))
        a *= ratio
        n += 1
        terms.append(a)


def reciprocal_series_converges(phi, c: ControlSpec) -> bool | None:
    """Whether ``sum_n 1 / (phi^n c!(n))`` converges; None when undecided.

    ``phi * c(inf) > 1`` gives geometric convergence and ``< 1`` divergence.
    On the boundary only the quadratic_ratio family has a closed form:
    ``1/(phi^n c!(n)) = 9 (base/phi)^n / (n+3)^2``, summable iff ``phi >= base``.
    """
    phi_q = rational(phi)
    if phi_q == 0 or c.support_end() is not None:
        return False
    r = phi_q * c.limit()
    if r > 1:
        return True
    if r < 1:
        return False
    if c.family == "quadratic_ratio":
        return True
    return None


def geometric_tail_mass(phi, c: ControlSpec, start: int) -> float:
    """Certified upper bound of ``sum_{n>=start} phi^n c!(n-1)`` (single-coordinate
    reversible mass above height ``start - 1``); ``inf`` when it cannot be bounded."""
    from .model import control_product

    phi = float(rational(phi))
    if start <= 0:
        raise ValueError("start must be positive")
    end = c.support_end()
    if end is not None and start - 1 >= end:
        return 0.0
    first = phi ** start * control_product(c, start - 1)
    ratio = phi * c(start)
    if end is not None:
        # finitely many nonzero terms: sum them directly
        total = 0.0
        a = first
        for n in range(start, end + 1):
            total += a
            a *= phi * c(n)
        return total
    if ratio >= 1:
        return math.inf
    return first / (1 - ratio)


def exact_partial(phi, c: ControlSpec, n_max: int) -> Fraction:
    """Exact ``sum_{n=0}^{n_max} phi^n c!(n)`` for rational inputs."""
    phi_q = rational(phi)
    total = Fraction(0)
    a = Fraction(1)
    for n in range(n_max + 1):
        if n > 0:
            a *= phi_q * c.exact(n)
        total += a
    return total
