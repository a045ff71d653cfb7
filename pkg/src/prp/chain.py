"""Single-patch embedded random walk on ``N^N``.

From ``(i_1, ..., i_N)`` the walk moves coordinate ``j`` up with probability
``phi c(i_j) / ((1+phi) N)``, down with probability ``1 / ((1+phi) N)`` when
``i_j > 0`` and otherwise holds.  Its reversible measure, recurrence class
and absorption time at the empty patch control single-patch survival and the
small-``lam`` extinction bound.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from .model import ControlSpec, control_product, rational
from .series import (Inconclusive, NumericalError, control_series, geometric_tail_mass,
                     reciprocal_series_converges)


class ChainClass(enum.Enum):
    TRANSIENT = "Transient"
    POSITIVE_RECURRENT = "PositiveRecurrent"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Classification:
    kind: ChainClass
    reason: str

    def __str__(self):
        return str(self.kind)


def _num(phi, exact):
    if exact:
        return rational(phi), (lambda c, i: c.exact(i))
    return float(phi), (lambda c, i: c(i))


def embedded_step_distribution(phi, c: ControlSpec, N: int, state, boundary: str = "reflect",
                               exact: bool | None = None) -> dict[tuple, object]:
    """One-step law of the embedded walk as ``{next_state: probability}``.

    ``boundary='reflect'`` turns blocked down-moves at zero coordinates into
    holding mass; ``'absorb'`` additionally freezes the all-zero state.
    Probabilities are Fractions when ``phi`` is a Fraction (or ``exact=True``).
    """
    state = tuple(int(i) for i in state)
    if len(state) != N or min(state) < 0:
        raise ValueError(f"state must be {N} nonnegative integers")
    if exact is None:
        exact = isinstance(phi, Fraction)
    phi, cval = _num(phi, exact)
    if boundary == "absorb" and not any(state):
        return {state: Fraction(1) if exact else 1.0}
    if boundary not in ("reflect", "absorb"):
        raise ValueError("boundary must be 'reflect' or 'absorb'")
    denom = (1 + phi) * N
    out: dict[tuple, object] = {}
    hold = 0
    for j, i in enumerate(state):
        cj = cval(c, i)
        up = phi * cj / denom
        if up:
            nxt = state[:j] + (i + 1,) + state[j + 1:]
            out[nxt] = up
        hold = hold + phi * (1 - cj) / denom
        if i > 0:
            nxt = state[:j] + (i - 1,) + state[j + 1:]
            out[nxt] = 1 / denom
        else:
            hold = hold + 1 / denom
    if hold:
        out[state] = hold
    return out


def classify(phi, c: ControlSpec, *, budget: int = 1_000_000) -> Classification:
    """Recurrence class of the embedded walk.

    Positive recurrent iff ``sum phi^n c!(n)`` converges; transient when
    ``sum 1/(phi^n c!(n))`` converges.  Both are decided from the structure of
    ``c`` with certified tails; anything else is reported as inconclusive.
    """
    if rational(phi) == 0:
        return Classification(ChainClass.POSITIVE_RECURRENT, "phi = 0: the walk only moves down")
    s = control_series(phi, c, budget=budget)
    if isinstance(s, Inconclusive):
        return Classification(ChainClass.INCONCLUSIVE, s.reason)
    if not s.divergent:
        return Classification(ChainClass.POSITIVE_RECURRENT,
                              f"sum phi^n c!(n) = {s.value:.12g} < inf")
    rec = reciprocal_series_converges(phi, c)
    if rec:
        return Classification(ChainClass.TRANSIENT, "sum 1/(phi^n c!(n)) < inf")
    return Classification(ChainClass.INCONCLUSIVE,
                          f"phi * c(inf) = {float(rational(phi) * c.limit()):g}: both series diverge "
                          "or the boundary case has no closed form")


_WEIGHTS: dict = {}


def _coord_weights(phi, c: ControlSpec, exact: bool, n: int) -> list:
    """Prefix weights ``phi^i c(0) ... c(i - 1)`` for ``i <= n``, cached per (phi, c)."""
    key = (phi, c, exact)
    w = _WEIGHTS.get(key)
    if w is None:
        if len(_WEIGHTS) > 256:
            _WEIGHTS.clear()
        w = _WEIGHTS[key] = [Fraction(1) if exact else 1.0]
    if len(w) <= n:
        phi_, cval = _num(phi, exact)
        while len(w) <= n:
            w.append(w[-1] * phi_ * cval(c, len(w) - 1))
    return w


def reversible_measure(phi, c: ControlSpec, state, exact: bool | None = None):
    """``nu(s) = prod_{j: s_j > 0} phi^{s_j} c(0) ... c(s_j - 1)``, ``nu(0) = 1``."""
    if exact is None:
        exact = isinstance(phi, Fraction)
    state = [int(i) for i in state]
    w = _coord_weights(phi, c, exact, max(state, default=0))
    out = Fraction(1) if exact else 1.0
    for i in state:
        if i:
            out = out * w[i]
    return out


def total_mass(phi, c: ControlSpec, N: int):
    """``nu(N^N) = (1 + phi sum_n phi^n c!(n))^N``; ``inf`` when the series diverges."""
    s = control_series(phi, c)
    if isinstance(s, Inconclusive):
        return s
    if s.divergent:
        return math.inf
    return (1.0 + float(rational(phi)) * s.value) ** N


def default_height(phi, c: ControlSpec, N: int, rel: float = 1e-10, h_max: int = 10_000) -> int:
    """Smallest ``H`` whose excluded reversible mass is below ``rel`` of the total."""
    end = c.support_end()
    if end is not None:
        return max(end, 1)
    s = control_series(phi, c)
    if isinstance(s, Inconclusive) or s.divergent:
        raise ValueError("walk is not positive recurrent: no finite truncation height")
    z1 = 1.0 + float(rational(phi)) * s.value
    for H in range(1, h_max + 1):
        tail = geometric_tail_mass(phi, c, H + 1)
        if N * tail / z1 < rel:
            return H
    raise NumericalError(f"no truncation height below {h_max} reaches relative mass {rel:g}")


@dataclass(frozen=True)
class AbsorptionTime:
    value: float
    H: int
    value_H5: float

    @property
    def sensitivity(self) -> float:
        return abs(self.value_H5 - self.value)

    def __float__(self):
        return self.value


def _absorption_solve(phi: float, c: ControlSpec, N: int, H: int) -> np.ndarray:
    """Expected steps to reach the zero vector from every state of ``{0..H}^N``."""
    shape = (H + 1,) * N
    n = (H + 1) ** N
    idx = np.indices(shape).reshape(N, -1)
    cvals = c.table_values(H + 1)
    denom = (1.0 + phi) * N
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    flat = np.arange(n)
    for j in range(N):
        occ = idx[j]
        up = phi * cvals[occ] / denom
        up[occ == H] = 0.0  # reflecting cap
        ok = up > 0
        tgt = idx[:, ok].copy()
        tgt[j] += 1
        rows.append(flat[ok]); cols.append(np.ravel_multi_index(tuple(tgt), shape)); vals.append(up[ok])
        down = np.where(occ > 0, 1.0 / denom, 0.0)
        ok = down > 0
        tgt = idx[:, ok].copy()
        tgt[j] -= 1
        rows.append(flat[ok]); cols.append(np.ravel_multi_index(tuple(tgt), shape)); vals.append(down[ok])
        diag += up + down
    # (I - P) h = 1 off the absorbing state; holding mass cancels from both sides
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A = (sp.diags(diag) - P).tocsr()
    keep = np.arange(1, n)
    A = A[keep][:, keep]
    h = np.zeros(n)
    if n > 1:
        sol = spsolve(A.tocsc(), np.ones(n - 1))
        if not np.all(np.isfinite(sol)):
            raise NumericalError("singular truncated absorption system")
        h[1:] = sol
    return h.reshape(shape)


def expected_absorption_time(phi, c: ControlSpec, N: int, start=None, H: int | None = None) -> AbsorptionTime:
    """Expected number of embedded steps until the patch empties.

    Solves the first-passage system on ``{0..H}^N`` (zero vector absorbing,
    up-moves blocked at ``H``) and repeats at ``H + 5`` to report truncation
    sensitivity.  Refuses walks that are not positive recurrent.
    """
    cls = classify(phi, c)
    if cls.kind is not ChainClass.POSITIVE_RECURRENT:
        raise ValueError(f"absorption time is infinite or undecided: {cls.kind} ({cls.reason})")
    if start is None:
        start = (1,) + (0,) * (N - 1)
    start = tuple(int(i) for i in start)
    if len(start) != N:
        raise ValueError("start must have N coordinates")
    if H is None:
        H = default_height(phi, c, N)
    H = max(H, max(start))
    phi_f = float(rational(phi))
    end = c.support_end()
    a = _absorption_solve(phi_f, c, N, H)[start]
    if end is not None and H >= end:
        b = a
    else:
        b = _absorption_solve(phi_f, c, N, H + 5)[start]
    return AbsorptionTime(float(a), H, float(b))


def simulate_absorption_times(phi, c: ControlSpec, N: int, start, replicas: int, rng,
                              max_steps: int = 10_000_000) -> np.ndarray:
    """Monte Carlo absorption times of the embedded walk, all replicas in lockstep."""
    phi = float(rational(phi))
    state = np.tile(np.asarray(start, dtype=np.int64), (replicas, 1))
    steps = np.zeros(replicas, dtype=np.int64)
    alive = state.any(axis=1)
    cache_len = 64
    cvals = c.table_values(cache_len)
    denom = (1.0 + phi) * N
    for _ in range(max_steps):
        live = np.flatnonzero(alive)
        if live.size == 0:
            return steps
        s = state[live]
        top = int(s.max())
        if top + 1 >= cache_len:
            cache_len = 2 * (top + 1)
            cvals = c.table_values(cache_len)
        j = rng.integers(0, N, size=live.size)
        occ = s[np.arange(live.size), j]
        u = rng.random(live.size) * (1.0 + phi)
        # per-coordinate move: up w.p. phi c / (1+phi), down w.p. 1/(1+phi)
        up = u < phi * cvals[occ]
        down = (u >= phi) & (occ > 0)
        s[np.arange(live.size), j] += up.astype(np.int64) - down.astype(np.int64)
        state[live] = s
        steps[live] += 1
        alive[live] = s.any(axis=1)
    raise NumericalError(f"embedded walk not absorbed within {max_steps} steps")


def escape_probability(phi, c: ControlSpec, H: int, start: int = 1) -> float:
    """``P(hit H before 0)`` for the one-site walk, by a banded linear solve."""
    phi = float(rational(phi))
    if not 0 < start < H:
        raise ValueError("need 0 < start < H")
    i = np.arange(1, H)
    up = phi * np.array([c(k) for k in i]) / (1.0 + phi)
    down = np.full(H - 1, 1.0 / (1.0 + phi))
    # (up + down) h(i) - up h(i+1) - down h(i-1) = 0, h(0) = 0, h(H) = 1
    ab = np.zeros((3, H - 1))
    ab[0, 1:] = -up[:-1]
    ab[1] = up + down
    ab[2, :-1] = -down[1:]
    rhs = np.zeros(H - 1)
    rhs[-1] = up[-1]
    h = solve_banded((1, 1), ab, rhs)
    return float(h[start - 1])


def escape_probability_limit(phi, c: ControlSpec, start: int = 1, H0: int = 64, tol: float = 1e-4,
                             h_max: int = 1 << 22) -> tuple[float, int]:
    """Escape probability with ``H`` doubled until successive values agree to ``tol``."""
    H = max(H0, start + 1)
    prev = escape_probability(phi, c, H, start)
    while H < h_max:
        H *= 2
        cur = escape_probability(phi, c, H, start)
        if abs(cur - prev) < tol:
            return cur, H
        prev = cur
    raise NumericalError(f"escape probability not stable to {tol:g} by H={h_max}")


def trial_vector_pmf(lam, phi, d: int, counts) -> float:
    """Law of the inter-patch trial counts toward the ``2d`` neighbours between
    two embedded transitions."""
    counts = [int(n) for n in counts]
    if len(counts) != 2 * d or min(counts) < 0:
        raise ValueError(f"counts must be {2 * d} nonnegative integers")
    a = float(lam) / (1.0 + float(phi))
    t = sum(counts)
    if a == 0:
        return 1.0 if t == 0 else 0.0
    logp = (math.lgamma(t + 1) + t * math.log(a) - (1 + t) * math.log1p(2 * d * a)
            - sum(math.lgamma(n + 1) for n in counts))
    return math.exp(logp)


def sample_trial_vector(lam, phi, d: int, rng, size: int | None = None) -> np.ndarray:
    """Geometric total number of trials split uniformly over the ``2d`` directions."""
    a = float(lam) / (1.0 + float(phi))
    p_stop = 1.0 / (1.0 + 2 * d * a)
    n = 1 if size is None else size
    totals = rng.geometric(p_stop, size=n) - 1
    out = rng.multinomial(totals, [1.0 / (2 * d)] * (2 * d))
    return out[0] if size is None else out


def subcritical_lambda_bound(phi, c: ControlSpec, N: int, d: int, H: int | None = None) -> float:
    """``lam* = (1+phi) / (2d E(tau0))`` with ``tau0`` started from one particle."""
    tau = expected_absorption_time(phi, c, N, H=H)
    return (1.0 + float(rational(phi))) / (2 * d * tau.value)


def min_mean_control(c: ControlSpec, N: int, M: int) -> Fraction:
    """``min (1/N) sum_j c(f(j))`` over placements ``f`` of ``M`` particles on ``N`` sites."""
    if N < 1 or M < 0:
        raise ValueError("need N >= 1 and M >= 0")
    cv = [c.exact(a) for a in range(M + 1)]
    best = cv[:]  # one site holding m particles
    for _ in range(N - 1):
        best = [min(best[m - a] + cv[a] for a in range(m + 1)) for m in range(M + 1)]
    return best[M] / N


def min_mean_control_bruteforce(c: ControlSpec, N: int, M: int) -> Fraction:
    """Exhaustive enumeration over all compositions of ``M`` into ``N`` parts."""
    best = None
    for cut in itertools.combinations(range(M + N - 1), N - 1):
        parts = [b - a - 1 for a, b in zip((-1,) + cut, cut + (M + N - 1,))]
        v = sum(c.exact(p) for p in parts)
        best = v if best is None or v < best else best
    return best / N
