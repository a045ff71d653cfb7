"""Expected occupancy of the branching random walk with on-site birth rate
``phi``, per-edge birth rate ``lam`` and unit death rate, started from one
particle at the origin.

The series form weights lattice paths with loops by a Poisson clock; the ODE
form integrates the linear mean equation on a finite box and serves as an
independent oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from .series import NumericalError

EXACT_N_MAX = 24


def _moves(d):
    for axis in range(d):
        for s in (1, -1):
            v = [0] * d
            v[axis] = s
            yield tuple(v)


@dataclass
class PathCountTable:
    """``mu[(n, k)][x]`` = number of length-``n`` paths from 0 to ``x`` with ``k`` loops.

    Arrays are indexed by ``x + R`` per axis and hold Python integers.
    """

    d: int
    n_max: int
    R: int
    mu: dict
    clipped: bool

    def __call__(self, n: int, k: int, x) -> int:
        x = tuple(x)
        if k > n or n > self.n_max or any(abs(c) > self.R for c in x):
            if k > n:
                return 0
            raise KeyError(f"(n={n}, x={x}) outside the table")
        return int(self.mu[(n, k)][tuple(c + self.R for c in x)])


def _shift_add(dst, src, d, R):
    """dst += src shifted by every unit move (clipped to the box)."""
    w = 2 * R + 1
    for axis in range(d):
        for s in (1, -1):
            a = [slice(None)] * d
            b = [slice(None)] * d
            if s == 1:
                a[axis] = slice(1, w)
                b[axis] = slice(0, w - 1)
            else:
                a[axis] = slice(0, w - 1)
                b[axis] = slice(1, w)
            dst[tuple(a)] += src[tuple(b)]


def path_counts(d: int, n_max: int, R: int | None = None) -> PathCountTable:
    """Exact loop-decorated path counts by dynamic programming over steps.

    Each step is either a loop (stay) or a unit lattice move.  Counts are exact
    big integers; with ``R < n_max`` paths leaving the box are dropped and the
    table is flagged as clipped.
    """
    if R is None:
        R = n_max
    w = 2 * R + 1
    zero = np.zeros((w,) * d, dtype=object)
    zero[...] = 0
    start = zero.copy()
    start[(R,) * d] = 1
    mu = {(0, 0): start}
    for n in range(1, n_max + 1):
        for k in range(n + 1):
            cur = zero.copy()
            if k >= 1:
                cur += mu[(n - 1, k - 1)]
            if k <= n - 1:
                _shift_add(cur, mu[(n - 1, k)], d, R)
            mu[(n, k)] = cur
    return PathCountTable(d, n_max, R, mu, clipped=R < n_max)


def simple_walk_counts(d: int, n: int, x) -> int:
    """Loopless nearest-neighbour path count from 0 to ``x`` in ``n`` steps (direct DP)."""
    counts = {(0,) * d: 1}
    for _ in range(n):
        nxt: dict = {}
        for pos, v in counts.items():
            for m in _moves(d):
                q = tuple(p + e for p, e in zip(pos, m))
                nxt[q] = nxt.get(q, 0) + v
        counts = nxt
    return counts.get(tuple(x), 0)


def lazy_walk_distribution(phi, lam, d: int, n: int) -> dict:
    """n-step law of the walk that stays w.p. ``phi/(phi+2d lam)`` and moves to each
    neighbour w.p. ``lam/(phi+2d lam)``.  Exact for Fraction inputs."""
    total = phi + 2 * d * lam
    if not total > 0:
        raise ValueError("need phi + 2d lam > 0")
    stay = phi / total
    move = lam / total
    dist = {(0,) * d: Fraction(1) if isinstance(total, Fraction) else 1.0}
    for _ in range(n):
        nxt: dict = {}
        for pos, p in dist.items():
            if stay:
                nxt[pos] = nxt.get(pos, 0) + p * stay
            if move:
                for m in _moves(d):
                    q = tuple(a + b for a, b in zip(pos, m))
                    nxt[q] = nxt.get(q, 0) + p * move
        dist = nxt
    return dist


def lazy_walk_prob(phi, lam, d: int, n: int, x) -> float | Fraction:
    """Probability that the lazy walk sits at ``x`` after ``n`` steps."""
    x = tuple(x)
    if len(x) != d:
        raise ValueError(f"x must have {d} coordinates")
    return lazy_walk_distribution(phi, lam, d, n).get(x, 0)


def _lazy_fields(phi: float, lam: float, d: int, n_max: int, R: int) -> list[np.ndarray]:
    """Floating lazy-walk probability fields for n = 0..n_max on the box of radius R."""
    total = phi + 2 * d * lam
    w = 2 * R + 1
    f = np.zeros((w,) * d)
    f[(R,) * d] = 1.0
    out = [f]
    for _ in range(n_max):
        g = (phi / total) * f
        tmp = np.zeros_like(f)
        _shift_add(tmp, f, d, R)
        g += (lam / total) * tmp
        f = g
        out.append(f)
    return out


def _weighted_path_field(table: PathCountTable, n: int, phi, lam) -> np.ndarray:
    """``sum_k mu[(n,k)] phi^k lam^(n-k) / (phi + 2d lam)^n`` from exact counts."""
    phi_q, lam_q = Fraction(phi), Fraction(lam)
    total = (phi_q + 2 * table.d * lam_q) ** n
    acc = np.zeros_like(table.mu[(0, 0)])
    acc[...] = 0
    for k in range(n + 1):
        acc = acc + table.mu[(n, k)] * (phi_q ** k * lam_q ** (n - k))
    return np.array([float(Fraction(v) / total) for v in acc.ravel()]).reshape(acc.shape)


def poisson_tail(phi: float, lam: float, d: int, t: float, n_max: int) -> float:
    """Upper bound on the series remainder beyond ``n_max``: since the weighted
    path counts sum to ``(phi + 2d lam)^n`` over ``x``, the remainder at any ``x``
    is at most ``e^{(rho-1)t} P(Poisson(rho t) > n_max)``."""
    rho = phi + 2 * d * lam
    if rho == 0:
        return 0.0
    return math.exp((rho - 1) * t) * float(poisson.sf(n_max, rho * t))


def auto_n_max(phi: float, lam: float, d: int, t: float, tol: float = 1e-13) -> int:
    rho = phi + 2 * d * lam
    n = 0
    while poisson_tail(phi, lam, d, t, n) > tol * max(1.0, math.exp((rho - 1) * t)):
        n += 1
        if n > 100_000:
            raise NumericalError("could not find a series truncation")
    return max(n, 1)


@dataclass
class ExpectationField:
    values: np.ndarray
    R: int
    t: float
    tail_bound: float = 0.0

    def at(self, x) -> float:
        return float(self.values[tuple(c + self.R for c in x)])

    @property
    def mass(self) -> float:
        return math.fsum(self.values.ravel())


def brw_expectation_field(phi: float, lam: float, d: int, t: float, n_max: int | None = None,
                          R: int | None = None, tol: float = 1e-10) -> ExpectationField:
    """Expected occupancy on the box of radius ``R`` (default ``n_max``, no clipping).

    Terms ``n <= 24`` use exact path counts; later terms use the floating lazy-walk
    recursion, which equals the normalized weighted count.  When ``R`` is given
    and ``n_max`` is not, at least ``2R`` terms are kept: the tail bound is
    absolute, and sites near the box edge need paths of length ``|x|`` and more
    before their small values are resolved to relative accuracy.
    """
    if n_max is None:
        n_max = auto_n_max(phi, lam, d, t)
        if R is not None and t > 0:
            n_max = max(n_max, 2 * R)
    if R is None:
        R = n_max
    tail = poisson_tail(phi, lam, d, t, n_max)
    rho = phi + 2 * d * lam
    if tail > tol * max(1.0, math.exp((rho - 1) * t)):
        raise NumericalError(f"series tail bound {tail:.3e} above tolerance; increase n_max")
    n_exact = min(n_max, EXACT_N_MAX)
    w = 2 * R + 1
    acc = np.zeros((w,) * d)
    if rho == 0:
        acc[(R,) * d] = math.exp(-t)
        return ExpectationField(acc, R, t, 0.0)
    table = path_counts(d, n_exact, R) if n_exact > 0 else None
    fields = _lazy_fields(phi, lam, d, n_max, R)
    terms = []
    for n in range(n_max + 1):
        # Poisson-style weight e^{-t} (rho t)^n / n!
        if t == 0:
            weight = 1.0 if n == 0 else 0.0
        else:
            weight = math.exp(n * math.log(rho * t) - t - float(gammaln(n + 1)))
        if weight == 0.0:
            continue
        if n <= n_exact:
            f = _weighted_path_field(table, n, phi, lam) if n > 0 else fields[0]
        else:
            f = fields[n]
        terms.append(weight * f)
    acc = np.sum(terms, axis=0) if terms else acc
    return ExpectationField(acc, R, t, tail)


def brw_expectation(phi: float, lam: float, d: int, x, t: float, n_max: int | None = None,
                    tol: float = 1e-10) -> float:
    """Expected number of particles at ``x`` at time ``t``."""
    x = tuple(x)
    fld = brw_expectation_field(phi, lam, d, t, n_max=n_max, tol=tol)
    if any(abs(c) > fld.R for c in x):
        return 0.0
    return fld.at(x)


def brw_expectation_ode(phi: float, lam: float, d: int, R: int, t: float, dt: float = 1e-3,
                        boundary_tol: float = 1e-8) -> ExpectationField:
    """RK4 integration of ``dE/dt = (phi - 1) E + lam * sum_{neighbours} E`` on the
    box of radius ``R`` with absorbing exterior."""
    w = 2 * R + 1
    E = np.zeros((w,) * d)
    E[(R,) * d] = 1.0

    def rhs(f):
        out = (phi - 1.0) * f
        nb = np.zeros_like(f)
        _shift_add(nb, f, d, R)
        return out + lam * nb

    n_steps = max(1, int(math.ceil(t / dt - 1e-9)))
    h = t / n_steps if t > 0 else 0.0
    for _ in range(n_steps if t > 0 else 0):
        k1 = rhs(E)
        k2 = rhs(E + 0.5 * h * k1)
        k3 = rhs(E + 0.5 * h * k2)
        k4 = rhs(E + h * k3)
        E = E + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    edge = _boundary_mass(E, d)
    total = float(E.sum())
    if total > 0 and edge > boundary_tol * total:
        raise NumericalError(f"boundary mass {edge:.3e} exceeds {boundary_tol:g} of total; increase R")
    return ExpectationField(E, R, t)


def _boundary_mass(E: np.ndarray, d: int) -> float:
    mask = np.zeros(E.shape, dtype=bool)
    for axis in range(d):
        idx = [slice(None)] * d
        idx[axis] = 0
        mask[tuple(idx)] = True
        idx[axis] = -1
        mask[tuple(idx)] = True
    return float(E[mask].sum())


def field_rows(field: ExpectationField, d: int):
    """CSV rows ``(x_1, ..., x_d, value)`` for every box point."""
    for pos in product(range(-field.R, field.R + 1), repeat=d):
        yield (*pos, field.at(pos))
