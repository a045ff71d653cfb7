"""Mean-field concentrations for the single-site (N = 1) logistic and
self-regulating processes.

``u[i]`` is the fraction of sites holding ``i`` particles.  Sites empty at
rate ``i``, grow ``i -> i+1`` at rate ``i phi c(i)`` and an empty site is
colonised at rate ``lam * sum_i i u[i]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import ControlSpec, control_product, rational
from .series import Inconclusive, NumericalError, control_series


@dataclass(frozen=True)
class Logistic:
    kappa: int

    def control(self) -> ControlSpec:
        return ControlSpec.logistic(self.kappa)


@dataclass(frozen=True)
class SelfReg:
    control: ControlSpec


@dataclass(frozen=True)
class NoEndemicEquilibrium:
    """Stationary ``u0 >= 1``: the only admissible equilibrium is the empty one."""

    u0: float

    def __bool__(self):
        return False


@dataclass
class MeanFieldProfile:
    u: np.ndarray
    flavor: Logistic | SelfReg
    t: float = 0.0
    leak: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.u) - 1

    @property
    def mass(self) -> float:
        return math.fsum(self.u)

    @property
    def u0(self) -> float:
        return float(self.u[0])


def _check_lam(lam):
    if not lam > 0:
        raise ValueError(f"mean-field u0 needs lam > 0, got {lam}")


def u0_logistic(lam: float, phi: float, kappa: int) -> float:
    """Stationary ``u0 = 1 / (lam * (1 + sum_{i=1}^{kappa-1} phi^i prod_{j<=i} (1 - j/kappa)))``.

    The sum is accumulated in log space so that ``kappa`` up to 1e4 and
    ``phi > 1`` neither overflow nor lose the small terms.
    """
    _check_lam(lam)
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if phi == 0:
        return 1.0 / lam
    j = np.arange(1, kappa, dtype=np.float64)
    logs = np.concatenate(([0.0], np.cumsum(math.log(phi) + np.log1p(-j / kappa))))
    top = logs.max()
    s = math.fsum(np.exp(logs - top))
    return math.exp(-top) / (lam * s)


def u0_selfreg(lam: float, phi: float, c: ControlSpec, *, rtol: float = 1e-15,
               budget: int = 1_000_000):
    """Stationary ``u0 = 1 / (lam * sum_i phi^i c!(i))``; 0 when the series diverges.

    Returns :class:`Inconclusive` when the tail cannot be certified within budget.
    """
    _check_lam(lam)
    s = control_series(phi, c, rtol=rtol, budget=budget)
    if isinstance(s, Inconclusive):
        return s
    if s.divergent:
        return 0.0
    return 1.0 / (lam * s.value)


def u0_limit(flavor: str, lam: float, phi: float, c_inf: ControlSpec | None = None):
    """Limit of the stationary ``u0`` as the regulation is removed.

    ``flavor='logistic'`` is the ``kappa -> inf`` limit ``max(0, (1 - phi)/lam)``;
    ``flavor='selfreg'`` evaluates ``u0_selfreg`` at the limiting control
    ``c_inf`` (default: no regulation, giving the same value).
    """
    _check_lam(lam)
    if flavor == "logistic" or (flavor == "selfreg" and (c_inf is None or c_inf.family == "all_one")):
        return max(0.0, (1.0 - phi) / lam)
    if flavor == "selfreg":
        return u0_selfreg(lam, phi, c_inf)
    raise ValueError(f"unknown flavor {flavor!r}")


def _shape_weights(flavor, phi, K: int) -> np.ndarray:
    """``w[i] = u_i / u_1`` for ``i = 1..K`` from the stationary recursion."""
    if isinstance(flavor, Logistic):
        c = flavor.control()
    else:
        c = flavor.control
    w = np.zeros(K + 1)
    for i in range(1, K + 1):
        # phi^{i-1} c!(i-1) / i, via logs when phi^{i-1} is large
        cp = control_product(c, i - 1)
        if cp == 0:
            break
        w[i] = math.exp((i - 1) * math.log(phi) + math.log(cp) - math.log(i)) if phi > 0 else (1.0 if i == 1 else 0.0)
    return w


def _selfreg_truncation(phi, c: ControlSpec, tol=1e-12, k_max=100_000) -> int:
    end = c.support_end()
    if end is not None:
        return max(end, 1)
    w_prev = 1.0
    k = 1
    while k < k_max:
        k += 1
        w_prev *= phi * c(k - 1) * (k - 1) / k
        if w_prev < tol and phi * c(k) < 1:
            return k
    raise NumericalError(f"profile weights not below {tol:g} by K={k_max}")


def stationary_profile(flavor, lam: float, phi: float, K: int | None = None):
    """Normalized endemic equilibrium, or :class:`NoEndemicEquilibrium` when ``u0 >= 1``.

    For ``SelfReg`` flavors the profile is truncated where the weights fall
    below 1e-12 (or at the support end of ``c``).
    """
    _check_lam(lam)
    if isinstance(flavor, Logistic):
        u0 = u0_logistic(lam, phi, flavor.kappa)
        K = flavor.kappa
    elif isinstance(flavor, SelfReg):
        u0 = u0_selfreg(lam, phi, flavor.control)
        if isinstance(u0, Inconclusive):
            return u0
        if u0 == 0:
            return Inconclusive("normalization series diverges: no summable stationary profile")
        if K is None:
            K = _selfreg_truncation(phi, flavor.control)
    else:
        raise TypeError("flavor must be Logistic or SelfReg")
    if u0 >= 1:
        return NoEndemicEquilibrium(u0)
    w = _shape_weights(flavor, phi, K)
    u1 = (1.0 - u0) / math.fsum(w[1:])
    u = w * u1
    u[0] = u0
    return MeanFieldProfile(u, flavor)


def _rates(flavor, phi: float, K: int):
    """Per-state growth rate ``i phi c(i)`` (0 at ``K``) and death rate ``i``."""
    c = flavor.control() if isinstance(flavor, Logistic) else flavor.control
    i = np.arange(K + 1, dtype=np.float64)
    cvals = c.table_values(K + 1)
    birth = i * phi * cvals
    birth[0] = 0.0
    birth[K] = 0.0  # clipped outflow at the truncation
    return birth, i


def meanfield_rhs(flavor, lam: float, phi: float, u: np.ndarray) -> np.ndarray:
    """Right-hand side of the mean-field system on states ``0..K``."""
    u = np.asarray(u, dtype=np.float64)
    K = len(u) - 1
    birth, death = _rates(flavor, phi, K)
    return _rhs(u, birth, death, float(lam))


@numba.njit(cache=True)
def _rhs(u, birth, death, lam):
    du = -(birth + death) * u
    du[1:] += birth[:-1] * u[:-1]
    du[:-1] += death[1:] * u[1:]
    colon = lam * u[0] * np.dot(death, u)
    du[0] -= colon
    du[1] += colon
    return du


def integrate_meanfield(flavor, lam: float, phi: float, u_init, t_end: float, dt: float = 0.01,
                        K: int | None = None, leak_tol: float = 1e-10, record_every: int | None = None):
    """Classical RK4 integration of the mean-field system up to ``t_end``.

    Returns a list of :class:`MeanFieldProfile` snapshots (first and last
    always included).  For ``SelfReg`` the state is truncated at ``K`` and a
    :class:`NumericalError` is raised if ``u[K]`` exceeds ``leak_tol``.
    """
    u = np.asarray(u_init, dtype=np.float64).copy()
    if isinstance(flavor, Logistic):
        K = flavor.kappa
    elif K is None:
        K = len(u) - 1
    if len(u) < K + 1:
        u = np.concatenate([u, np.zeros(K + 1 - len(u))])
    elif len(u) > K + 1:
        if np.any(u[K + 1:] != 0):
            raise ValueError("u_init has mass beyond the truncation K")
        u = u[:K + 1].copy()
    if abs(math.fsum(u) - 1.0) > 1e-9:
        raise ValueError(f"u_init must have mass 1, got {math.fsum(u)}")
    birth, death = _rates(flavor, phi, K)
    end = flavor.control.support_end() if isinstance(flavor, SelfReg) else None
    truncated = isinstance(flavor, SelfReg) and (end is None or end > K)
    n_steps = int(round(t_end / dt))
    if not math.isclose(n_steps * dt, t_end, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("t_end must be a multiple of dt")
    m0 = math.fsum(u)
    out = [MeanFieldProfile(u.copy(), flavor, 0.0)]
    record_every = record_every or n_steps
    step = 0
    while step < n_steps:
        n = min(record_every - step % record_every, n_steps - step)
        taken = _rk4_steps(u, birth, death, float(lam), float(dt), n, truncated, float(leak_tol))
        step += taken
        if taken < n:
            raise NumericalError(f"truncation leak: u[K={K}] = {u[K]:.3e} > {leak_tol:g} at t={step * dt:g}; "
                                 "increase K")
        out.append(MeanFieldProfile(u.copy(), flavor, step * dt, leak=float(u[K]) if truncated else 0.0,
                                    extra={"mass_drift": math.fsum(u) - m0}))
    return out


@numba.njit(cache=True)
def _rk4_steps(u, birth, death, lam, dt, n, check_leak, leak_tol):
    # advances u in place; returns the steps taken, fewer than n on a leak
    K = u.shape[0] - 1
    for s in range(n):
        k1 = _rhs(u, birth, death, lam)
        k2 = _rhs(u + 0.5 * dt * k1, birth, death, lam)
        k3 = _rhs(u + 0.5 * dt * k2, birth, death, lam)
        k4 = _rhs(u + dt * k3, birth, death, lam)
        u += (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if check_leak and u[K] > leak_tol:
            return s + 1
    return n


def u0_table(lam: float, phi: float, kappas) -> list[dict]:
    """Rows ``{kappa, lambda, phi, u0}`` for CSV export."""
    return [{"kappa": k, "lambda": lam, "phi": phi, "u0": u0_logistic(lam, phi, k)} for k in kappas]


def flavor_from_dict(d: dict):
    if d.get("flavor") == "logistic":
        return Logistic(int(d["kappa"]))
    if d.get("flavor") == "selfreg":
        return SelfReg(ControlSpec.from_dict(d["control"]))
    raise ValueError(f"unknown mean-field flavor {d.get('flavor')!r}")


def exact_u0_logistic(lam, phi, kappa):
    """Rational ``u0`` for rational inputs; used to cross-check the float path."""
    lam, phi = rational(lam), rational(phi)
    s = 1
    prod = 1
    for i in range(1, kappa):
        prod *= phi * (1 - rational(i) / kappa)
        s += prod
    return 1 / (lam * s)
