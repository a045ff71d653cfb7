"""Exact continuous-time simulation of the PRP on a finite box.

Events are drawn hierarchically: a patch proportionally to its total rate
(sum tree over patches), then death / intra-patch birth / inter-patch birth
within the patch, then a site from the per-patch aggregates.  Per-event cost
is ``O(log n_patches + N + d)``.  The hot loops are compiled with numba and
draw from a numpy ``Generator`` passed in by the caller.
"""
from __future__ import annotations

import csv
import enum
import functools
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import ControlSpec, Geometry, Params

DEATH, INTRA, INTER, REJECTED = 0, 1, 2, 3


class EventKind(enum.IntEnum):
    Death = DEATH
    IntraBirth = INTRA
    InterBirth = INTER
    RejectedBirth = REJECTED


class Status(str, enum.Enum):
    Extinct = "Extinct"
    TimeCapReached = "TimeCapReached"
    PopulationCapReached = "PopulationCapReached"


class ContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class Stopping:
    t_max: float = 200.0
    pop_cap: int = 2000

    def __post_init__(self):
        if not (self.t_max > 0 and self.pop_cap > 0):
            raise ValueError("stopping caps must be positive")

    def to_dict(self):
        return {"t_max": self.t_max, "pop_cap": self.pop_cap}


@dataclass(frozen=True)
class Outcome:
    status: Status
    time: float
    events: int
    peak: int
    population: int

    @property
    def survived(self) -> bool:
        return self.status is not Status.Extinct

    def to_dict(self):
        return {"status": self.status.value, "time": self.time, "events": self.events,
                "peak": self.peak, "population": self.population}


# --------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True, nogil=True, inline="always", _nrt=False)
def _c(ctab, i):
    n = ctab.shape[0]
    return ctab[i] if i < n else ctab[n - 1]


@numba.njit(cache=True, nogil=True, inline="always", _nrt=False)
def _patch_components(x, pop, empty, iw, nbr, lam, phi, inv_n, own):
    # iw is csum (exact rates) or N per patch (uniformized intra trials)
    s = 0
    for k in range(nbr.shape[1]):
        z = nbr[x, k]
        if z >= 0:
            s += pop[z]
    if own:
        s += pop[x]
    death = float(pop[x])
    intra = phi * inv_n * pop[x] * iw[x]
    inter = lam * inv_n * empty[x] * s
    return death, intra, inter


@numba.njit(cache=True, nogil=True, inline="always", _nrt=False)
def _set_leaf(tree, size, x, v):
    i = size + x
    tree[i] = v
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


@numba.njit(cache=True, nogil=True, inline="always", _nrt=False)
def _refresh(x, pop, empty, iw, nbr, tree, size, lam, phi, inv_n, own):
    d_, a_, b_ = _patch_components(x, pop, empty, iw, nbr, lam, phi, inv_n, own)
    _set_leaf(tree, size, x, d_ + a_ + b_)
    for k in range(nbr.shape[1]):
        z = nbr[x, k]
        if z >= 0:
            d_, a_, b_ = _patch_components(z, pop, empty, iw, nbr, lam, phi, inv_n, own)
            _set_leaf(tree, size, z, d_ + a_ + b_)


@numba.njit(cache=True, nogil=True, inline="always", _nrt=False)
def _patch_csum(eta, x, ctab):
    s = 0.0
    for r in range(eta.shape[1]):
        s += _c(ctab, eta[x, r])
    return s


@numba.njit(cache=True, nogil=True, _nrt=False)
def _build_tree(pop, empty, iw, nbr, tree, size, lam, phi, inv_n, own):
    tree[:] = 0.0
    for x in range(pop.shape[0]):
        d_, a_, b_ = _patch_components(x, pop, empty, iw, nbr, lam, phi, inv_n, own)
        tree[size + x] = d_ + a_ + b_
    for i in range(size - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@numba.njit(cache=True, nogil=True, inline="always", _nrt=False)
def _select(eta, pop, empty, csum, iw, nbr, ctab, tree, size, lam, phi, inv_n, own, uniformized, rng):
    """Draw (kind, patch, site, source patch, dt) without changing the state."""
    total = tree[1]
    dt = rng.exponential(1.0 / total)
    u = rng.random() * total
    i = 1
    while i < size:
        left = tree[2 * i]
        if (u < left and left > 0.0) or tree[2 * i + 1] <= 0.0:
            i = 2 * i
        else:
            u -= left
            i = 2 * i + 1
    x = i - size
    death, intra, inter = _patch_components(x, pop, empty, iw, nbr, lam, phi, inv_n, own)
    v = rng.random() * (death + intra + inter)
    n = eta.shape[1]
    src = x
    if v < death or (intra <= 0.0 and inter <= 0.0):
        kind = 0
        k = int(rng.random() * pop[x])
        if k >= pop[x]:
            k = pop[x] - 1
        r = 0
        acc = eta[x, 0]
        while acc <= k:
            r += 1
            acc += eta[x, r]
    elif (v < death + intra and intra > 0.0) or inter <= 0.0:
        kind = 1
        if uniformized:
            r = int(rng.random() * n)
            if r >= n:
                r = n - 1
            if rng.random() >= _c(ctab, eta[x, r]):
                kind = 3
        else:
            w = rng.random() * csum[x]
            r = -1
            acc = 0.0
            last = 0
            for q in range(n):
                cq = _c(ctab, eta[x, q])
                if cq > 0.0:
                    last = q
                    acc += cq
                    if w < acc:
                        r = q
                        break
            if r < 0:
                r = last
    else:
        kind = 2
        k = int(rng.random() * empty[x])
        if k >= empty[x]:
            k = empty[x] - 1
        r = 0
        seen = -1
        for q in range(n):
            if eta[x, q] == 0:
                seen += 1
                if seen == k:
                    r = q
                    break
        # source patch, proportional to its population (for logging)
        s = 0
        for kk in range(nbr.shape[1]):
            z = nbr[x, kk]
            if z >= 0:
                s += pop[z]
        if own:
            s += pop[x]
        w2 = rng.random() * s
        acc2 = 0.0
        src = -1
        for kk in range(nbr.shape[1]):
            z = nbr[x, kk]
            if z >= 0 and pop[z] > 0:
                acc2 += pop[z]
                src = z
                if w2 < acc2:
                    break
        if own and (src < 0 or w2 >= acc2):
            src = x
    return kind, x, r, src, dt


@numba.njit(cache=True, nogil=True, inline="always", _nrt=False)
def _apply(kind, x, r, eta, pop, empty, csum, iw, nbr, ctab, tree, size, lam, phi, inv_n, own):
    if kind == 3:
        return 0
    if kind == 0:
        eta[x, r] -= 1
        pop[x] -= 1
        if eta[x, r] == 0:
            empty[x] += 1
        delta = -1
    else:
        if eta[x, r] == 0:
            empty[x] -= 1
        eta[x, r] += 1
        pop[x] += 1
        delta = 1
    csum[x] = _patch_csum(eta, x, ctab)
    _refresh(x, pop, empty, iw, nbr, tree, size, lam, phi, inv_n, own)
    return delta


@numba.njit(cache=True, nogil=True, _nrt=False)
def _run(eta, pop, empty, csum, iw, nbr, ctab, tree, size, lam, phi, inv_n, own, uniformized,
         total, time, events, t_max, pop_cap, max_events, rng):
    """Returns (status, total, time, events, peak); status 0 extinct, 1 time cap,
    2 population cap, 3 event budget."""
    peak = total
    while True:
        if total == 0:
            return 0, total, time, events, peak
        if total >= pop_cap:
            return 2, total, time, events, peak
        if max_events >= 0 and events >= max_events:
            return 3, total, time, events, peak
        kind, x, r, src, dt = _select(eta, pop, empty, csum, iw, nbr, ctab, tree, size, lam, phi, inv_n,
                                      own, uniformized, rng)
        if time + dt > t_max:
            return 1, total, t_max, events, peak
        time += dt
        total += _apply(kind, x, r, eta, pop, empty, csum, iw, nbr, ctab, tree, size, lam, phi, inv_n, own)
        events += 1
        if total > peak:
            peak = total


# --------------------------------------------------------------------------
# state


_TABLE_CHUNK = 4096


def control_table(c: ControlSpec, min_len: int = 2) -> np.ndarray:
    """Float table of ``c`` whose last entry is valid for every larger index,
    or which covers at least ``min_len`` entries when ``c`` never settles."""
    start = c.eventually_constant_from()
    if start is not None:
        n = max(start + 1, 2)
    else:
        # round up so repeated requests share one cached table
        n = _TABLE_CHUNK * -(-max(min_len, _TABLE_CHUNK) // _TABLE_CHUNK)
    return _cached_table(c, n)


@functools.lru_cache(maxsize=64)
def _cached_table(c: ControlSpec, n: int) -> np.ndarray:
    t = c.table_values(n)
    t.flags.writeable = False
    return t


class LatticeState:
    """Occupancies ``eta[x, r]`` on a :class:`Geometry` with per-patch caches.

    ``pop[x]`` is the patch total, ``empty[x]`` the number of vacant sites and
    ``csum[x] = sum_r c(eta[x, r])``.  ``tree`` holds the sum tree of patch
    rates for the bound :class:`Params`.
    """

    def __init__(self, geometry: Geometry, params: Params, eta=None, uniformized: bool = False):
        if geometry.d != params.d or geometry.N != params.N:
            raise ValueError(f"geometry (d={geometry.d}, N={geometry.N}) does not match params "
                             f"(d={params.d}, N={params.N})")
        self.geometry = geometry
        self.params = params
        self.uniformized = bool(uniformized)
        self.nbr = np.ascontiguousarray(geometry.neighbors())
        P, N = geometry.n_patches, geometry.N
        if eta is None:
            eta = np.zeros((P, N), dtype=np.int64)
        eta = np.array(eta, dtype=np.int64).reshape(P, N)
        if eta.min(initial=0) < 0:
            raise ValueError("occupancies must be nonnegative")
        self.eta = eta
        self.time = 0.0
        self.events = 0
        self.ctab = control_table(params.control, int(eta.sum()) + 2)
        self.size = 1 << max(0, (P - 1).bit_length())
        self.tree = np.zeros(2 * self.size)
        self._rebuild()

    # construction helpers
    @classmethod
    def single(cls, geometry: Geometry, params: Params, patch=None, site: int = 0, **kw) -> "LatticeState":
        """One particle at ``site`` of ``patch`` (default: the origin patch)."""
        st = cls(geometry, params, **kw)
        x = geometry.origin if patch is None else geometry.index(patch)
        st.eta[x, site] = 1
        st._rebuild()
        return st

    @classmethod
    def empty_state(cls, geometry: Geometry, params: Params, **kw) -> "LatticeState":
        return cls(geometry, params, **kw)

    def _rebuild(self):
        self.pop = self.eta.sum(axis=1).astype(np.int64)
        self.empty = (self.eta == 0).sum(axis=1).astype(np.int64)
        self.csum = np.array([_patch_csum(self.eta, x, self.ctab) for x in range(self.eta.shape[0])])
        self._sync_iw()
        self.total = int(self.pop.sum())
        self._ensure_table(self.total + 2)
        p = self.params
        _build_tree(self.pop, self.empty, self.iw, self.nbr, self.tree, self.size, p.lam, p.phi,
                    1.0 / p.N, p.lambda_own_patch)

    def _ensure_table(self, need: int):
        if self.params.control.eventually_constant_from() is None and len(self.ctab) < need + 1:
            self.ctab = control_table(self.params.control, 2 * need)
            self.csum = np.array([_patch_csum(self.eta, x, self.ctab) for x in range(self.eta.shape[0])])
            self._sync_iw()

    def _sync_iw(self):
        # intra-birth weight per patch: CSum, or N under uniformization
        if self.uniformized:
            self.iw = np.full(self.eta.shape[0], float(self.params.N))
        else:
            self.iw = self.csum

    def copy(self) -> "LatticeState":
        new = object.__new__(LatticeState)
        new.__dict__.update(self.__dict__)
        for k in ("eta", "pop", "empty", "csum", "tree"):
            setattr(new, k, getattr(self, k).copy())
        new._sync_iw()
        return new

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    def projection(self) -> np.ndarray:
        """Patch totals ``sum_r eta[x, r]`` reshaped onto the box."""
        return self.pop.reshape(self.geometry.shape)

    def check_caches(self) -> None:
        """Raise AssertionError unless every cache equals its recomputation."""
        pop = self.eta.sum(axis=1)
        empty = (self.eta == 0).sum(axis=1)
        csum = np.array([_patch_csum(self.eta, x, self.ctab) for x in range(self.eta.shape[0])])
        assert np.array_equal(pop, self.pop), "pop cache"
        assert np.array_equal(empty, self.empty), "empty cache"
        assert np.array_equal(csum, self.csum), "csum cache"
        assert int(pop.sum()) == self.total, "total"
        p = self.params
        tree = np.zeros_like(self.tree)
        iw = np.full(len(pop), float(p.N)) if self.uniformized else csum.astype(np.float64)
        _build_tree(pop, empty, iw, self.nbr, tree, self.size, p.lam, p.phi, 1.0 / p.N,
                    p.lambda_own_patch)
        assert np.allclose(tree, self.tree, rtol=1e-12, atol=1e-12), "rate tree"


@dataclass(frozen=True)
class RateBreakdown:
    death: float
    intra: float
    inter: float

    @property
    def total(self) -> float:
        return self.death + self.intra + self.inter


def patch_rates(state: LatticeState, x: int) -> RateBreakdown:
    """Death, intra-patch birth and incoming inter-patch birth rates of patch ``x``."""
    if not 0 <= x < state.geometry.n_patches:
        raise IndexError(f"patch {x} outside the geometry")
    p = state.params
    d_, a_, b_ = _patch_components(x, state.pop, state.empty, state.iw, state.nbr, p.lam, p.phi,
                                   1.0 / p.N, p.lambda_own_patch)
    return RateBreakdown(d_, a_, b_)


@dataclass(frozen=True)
class Event:
    kind: EventKind
    patch: int
    site: int
    source: int
    dt: float


def sample_event(state: LatticeState, rng) -> Event:
    """Draw the next event from ``state`` without applying it."""
    if state.total == 0 or state.total_rate <= 0:
        raise ContractViolation("no event can occur: total rate is 0 (extinct state)")
    state._ensure_table(state.total + 2)
    p = state.params
    kind, x, r, src, dt = _select(state.eta, state.pop, state.empty, state.csum, state.iw, state.nbr, state.ctab,
                                  state.tree, state.size, p.lam, p.phi, 1.0 / p.N, p.lambda_own_patch,
                                  state.uniformized, rng)
    return Event(EventKind(kind), int(x), int(r), int(src), float(dt))


def apply_event(state: LatticeState, ev: Event) -> None:
    p = state.params
    state.total += int(_apply(int(ev.kind), ev.patch, ev.site, state.eta, state.pop, state.empty, state.csum,
                              state.iw, state.nbr, state.ctab, state.tree, state.size, p.lam, p.phi, 1.0 / p.N,
                              p.lambda_own_patch))
    state.time += ev.dt
    state.events += 1


def step(state: LatticeState, rng) -> tuple[EventKind, float]:
    """Advance ``state`` by one event; returns ``(kind, dt)``."""
    ev = sample_event(state, rng)
    apply_event(state, ev)
    return ev.kind, ev.dt


_STATUS = {0: Status.Extinct, 1: Status.TimeCapReached, 2: Status.PopulationCapReached}


def run(state: LatticeState, stopping: Stopping, rng, log=None, max_events: int | None = None) -> Outcome:
    """Run until extinction or a cap, mutating ``state`` in place.

    ``log`` is an optional writable text stream receiving CSV lines
    ``time,event_kind,patch,site,population`` (slower Python loop).
    """
    if log is not None:
        return _run_logged(state, stopping, rng, log, max_events)
    state._ensure_table(stopping.pop_cap + 2)
    p = state.params
    code, total, time, events, peak = _run(
        state.eta, state.pop, state.empty, state.csum, state.iw, state.nbr, state.ctab, state.tree, state.size,
        p.lam, p.phi, 1.0 / p.N, p.lambda_own_patch, state.uniformized, state.total, state.time,
        state.events, float(stopping.t_max), int(stopping.pop_cap), -1 if max_events is None else int(max_events),
        rng)
    state.total, state.time, state.events = int(total), float(time), int(events)
    if code == 3:
        raise ContractViolation(f"event budget {max_events} exhausted before a stopping condition")
    return Outcome(_STATUS[int(code)], float(time), int(events), int(peak), int(total))


def _run_logged(state, stopping, rng, log, max_events):
    writer = csv.writer(log, lineterminator="\n")
    peak = state.total
    while True:
        if state.total == 0:
            return Outcome(Status.Extinct, state.time, state.events, peak, 0)
        if state.total >= stopping.pop_cap:
            return Outcome(Status.PopulationCapReached, state.time, state.events, peak, state.total)
        if max_events is not None and state.events >= max_events:
            raise ContractViolation(f"event budget {max_events} exhausted before a stopping condition")
        ev = sample_event(state, rng)
        if state.time + ev.dt > stopping.t_max:
            state.time = float(stopping.t_max)
            return Outcome(Status.TimeCapReached, state.time, state.events, peak, state.total)
        apply_event(state, ev)
        peak = max(peak, state.total)
        writer.writerow([repr(state.time), ev.kind.name, ev.patch, ev.site, state.total])


# --------------------------------------------------------------------------
# monotone coupling


@dataclass
class DominationReport:
    mode: str
    events: int
    time: float
    violations: int
    first_violation: dict | None
    outcome_lo: str
    outcome_hi: str
    peak_hi: int
    checks: int = 0

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _check_order(lo: Params, hi: Params, same_n: bool):
    problems = []
    if lo.lam > hi.lam:
        problems.append(f"lam_lo={lo.lam} > lam_hi={hi.lam}")
    if lo.phi > hi.phi:
        problems.append(f"phi_lo={lo.phi} > phi_hi={hi.phi}")
    if not lo.control <= hi.control:
        problems.append("control_lo is not pointwise below control_hi")
    if lo.d != hi.d:
        problems.append("dimensions differ")
    if lo.lambda_own_patch != hi.lambda_own_patch:
        problems.append("lambda_own_patch differs")
    if not same_n and lo.N != 1:
        problems.append("projection coupling needs N_lo = 1")
    if problems:
        raise ValueError("parameter ordering violated: " + "; ".join(problems))


def _site_rates(eta, params: Params, nbr, ctab):
    """Per-site birth and death rates (flattened (P, N) arrays)."""
    P, N = eta.shape
    pop = eta.sum(axis=1)
    padded = np.append(pop, 0)
    s = padded[nbr].sum(axis=1)
    if params.lambda_own_patch:
        s = s + pop
    cv = ctab[np.minimum(eta, len(ctab) - 1)]
    birth = (params.phi / N) * cv * pop[:, None] + (eta == 0) * (params.lam / N) * s[:, None]
    return birth, eta.astype(np.float64)


def run_coupled(params_lo: Params, params_hi: Params, geometry: Geometry, initial_lo, initial_hi,
                stopping: Stopping, rng, max_events: int = 1_000_000, stop_on_violation: bool = True
                ) -> DominationReport:
    """Simulate two PRPs on one event stream so that the lower one stays dominated.

    With equal patch sizes the coupling is sitewise: each site carries the
    larger of the two birth (and death) rates and one shared uniform coin
    decides which process follows.  With ``N_lo = 1`` the lower process lives
    on the patch lattice and is coupled to the upper one's patch totals.
    ``initial_*`` are occupancy arrays of shape ``(n_patches, N)``.
    """
    same_n = params_lo.N == params_hi.N
    _check_order(params_lo, params_hi, same_n)
    geo_hi = Geometry(geometry.d, geometry.side, params_hi.N, geometry.boundary)
    geo_lo = Geometry(geometry.d, geometry.side, params_lo.N, geometry.boundary)
    # missing neighbours point at a padding slot holding population 0
    nbr = geo_hi.neighbors()
    nbr = np.where(nbr < 0, geo_hi.n_patches, nbr)
    lo = np.array(initial_lo, dtype=np.int64).reshape(geo_lo.n_patches, params_lo.N).copy()
    hi = np.array(initial_hi, dtype=np.int64).reshape(geo_hi.n_patches, params_hi.N).copy()
    mode = "sitewise" if same_n else "projection"
    if not _dominated(lo, hi, mode):
        raise ValueError("initial_lo must be dominated by initial_hi")
    cap = stopping.pop_cap + 2
    ctab_lo = np.array([params_lo.control(i) for i in range(cap)])
    ctab_hi = np.array([params_hi.control(i) for i in range(cap)])
    t = 0.0
    events = 0
    violations = 0
    first = None
    peak = int(hi.sum())
    status = Status.TimeCapReached
    while True:
        tot_hi = int(hi.sum())
        if tot_hi == 0:
            status = Status.Extinct
            break
        if tot_hi >= stopping.pop_cap:
            status = Status.PopulationCapReached
            break
        if events >= max_events:
            break
        b_hi, d_hi = _site_rates(hi, params_hi, nbr, ctab_hi)
        b_lo, d_lo = _site_rates(lo, params_lo, nbr, ctab_lo)
        if mode == "projection":
            # upper process seen through its patch totals
            B_hi, D_hi = b_hi.sum(axis=1), d_hi.sum(axis=1)
            B_lo, D_lo = b_lo[:, 0], d_lo[:, 0]
        else:
            B_hi, D_hi, B_lo, D_lo = b_hi.ravel(), d_hi.ravel(), b_lo.ravel(), d_lo.ravel()
        B = np.maximum(B_hi, B_lo)
        D = np.maximum(D_hi, D_lo)
        rates = np.concatenate([B, D])
        total = rates.sum()
        dt = rng.exponential(1.0 / total)
        if t + dt > stopping.t_max:
            t = stopping.t_max
            break
        t += dt
        cum = np.cumsum(rates)
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        k = min(k, len(rates) - 1)
        while rates[k] <= 0:
            k -= 1
        coin = rng.random()
        is_birth = k < len(B)
        unit = k if is_birth else k - len(B)
        top = rates[k]
        hi_rate = (B_hi if is_birth else D_hi)[unit]
        lo_rate = (B_lo if is_birth else D_lo)[unit]
        delta = 1 if is_birth else -1
        if coin * top < hi_rate:
            if mode == "sitewise":
                hi.flat[unit] += delta
            else:
                w = (b_hi if is_birth else d_hi)[unit]
                r = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
                r = min(r, len(w) - 1)
                while w[r] <= 0:
                    r -= 1
                hi[unit, r] += delta
        if coin * top < lo_rate:
            lo.flat[unit] += delta
        events += 1
        peak = max(peak, int(hi.sum()))
        if not _dominated(lo, hi, mode):
            violations += 1
            if first is None:
                first = {"event": events, "time": t, "unit": unit, "lo": lo.tolist(), "hi": hi.tolist()}
            if stop_on_violation:
                break
    lo_status = Status.Extinct.value if lo.sum() == 0 else "Alive"
    return DominationReport(mode, events, t, violations, first, lo_status, status.value, peak, events)


def _dominated(lo, hi, mode) -> bool:
    if mode == "sitewise":
        return bool(np.all(lo <= hi))
    return bool(np.all(lo[:, 0] <= hi.sum(axis=1)))


def default_initial(geometry: Geometry) -> np.ndarray:
    eta = np.zeros((geometry.n_patches, geometry.N), dtype=np.int64)
    eta[geometry.origin, 0] = 1
    return eta
