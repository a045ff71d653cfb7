"""Monte Carlo survival estimates, critical-parameter bisection and grid sweeps.

Replica ``i`` of any experiment draws from a generator seeded by
``SeedSequence([seed, i])``.  The same replica index therefore sees the same
stream at every grid point (common random numbers), and results do not
depend on how replicas are spread over threads.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .model import ControlSpec, Geometry, Params
from .simulator import LatticeState, Status, Stopping, default_initial, run

CSV_FIELDS = ["lambda", "phi", "N", "d", "family", "kappa", "replicas", "survivors", "ci_lo", "ci_hi", "seed"]


def replica_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def wilson_interval(k: int, n: int) -> tuple[float, float]:
    """Wilson score 95% interval for ``k`` successes out of ``n``."""
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    lo, hi = float(ci.low), float(ci.high)
    p = k / n
    # guard against rounding pushing the estimate outside its own interval
    return max(0.0, min(lo, p)), min(1.0, max(hi, p))


def thread_count() -> int:
    v = os.environ.get("PRP_THREADS")
    if v:
        return max(1, int(v))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SurvivalEstimate:
    replicas: int
    survivors: int
    ci: tuple[float, float]
    rule: str
    seed: int
    stopping: Stopping = field(default_factory=Stopping)
    statuses: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.survivors <= self.replicas:
            raise ValueError("need 0 <= survivors <= replicas")

    @property
    def estimate(self) -> float:
        return self.survivors / self.replicas if self.replicas else 0.0

    def to_dict(self) -> dict:
        return {"replicas": self.replicas, "survivors": self.survivors, "estimate": self.estimate,
                "ci_lo": self.ci[0], "ci_hi": self.ci[1], "rule": self.rule, "seed": self.seed,
                "stopping": self.stopping.to_dict(), "statuses": dict(self.statuses)}


def _template(params: Params, geometry: Geometry, initial) -> LatticeState:
    eta = default_initial(geometry) if initial is None else np.asarray(initial, dtype=np.int64)
    return LatticeState(geometry, params, eta=eta)


def _one(template: LatticeState, stopping: Stopping, seed: int, i: int) -> Status:
    if template.total == 0:
        return Status.Extinct
    st = template.copy()
    return run(st, stopping, replica_rng(seed, i)).status


def estimate_survival(params: Params, geometry: Geometry, stopping: Stopping, replicas: int, seed: int = 0,
                      initial=None, threshold: float | None = None, batch: int = 50,
                      threads: int | None = None) -> SurvivalEstimate:
    """Fraction of replicas that are not extinct when a cap is reached.

    With ``threshold`` set, replicas run in batches and stop early once the
    Wilson interval excludes the threshold (the side of the threshold is then
    decided); otherwise exactly ``replicas`` runs are made.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    template = _template(params, geometry, initial)
    threads = thread_count() if threads is None else threads
    statuses: dict[str, int] = {}
    done = 0
    survivors = 0
    step = replicas if threshold is None else batch
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        while done < replicas:
            idx = range(done, min(replicas, done + step))
            if pool is None:
                res = [_one(template, stopping, seed, i) for i in idx]
            else:
                res = list(pool.map(lambda i: _one(template, stopping, seed, i), idx))
            for s in res:
                statuses[s.value] = statuses.get(s.value, 0) + 1
                survivors += s is not Status.Extinct
            done += len(res)
            if threshold is not None:
                lo, hi = wilson_interval(survivors, done)
                if hi < threshold or lo > threshold:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    rule = "fixed" if threshold is None else f"sequential(threshold={threshold:g}, batch={batch})"
    return SurvivalEstimate(done, survivors, wilson_interval(survivors, done), rule, int(seed), stopping,
                            statuses)


# --------------------------------------------------------------------------
# bisection


@dataclass
class CriticalBracket:
    axis: str
    params: Params
    lo: float
    hi: float
    est_lo: SurvivalEstimate | None
    est_hi: SurvivalEstimate
    replicas: int
    threshold: float
    converged: bool
    decisions: list = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return self.lo == self.hi

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __bool__(self):
        return True

    def to_dict(self) -> dict:
        return {"axis": self.axis, "params": self.params.to_dict(), "lo": self.lo, "hi": self.hi,
                "est_lo": None if self.est_lo is None else self.est_lo.to_dict(),
                "est_hi": self.est_hi.to_dict(), "replicas": self.replicas, "threshold": self.threshold,
                "converged": self.converged}


@dataclass
class NoBracket:
    """No value up to ``searched_up_to`` reached the survival threshold."""

    axis: str
    params: Params
    searched_up_to: float
    threshold: float
    decisions: list = field(default_factory=list)

    def __bool__(self):
        return False

    def to_dict(self) -> dict:
        return {"axis": self.axis, "params": self.params.to_dict(), "no_bracket": True,
                "searched_up_to": self.searched_up_to, "threshold": self.threshold}


_AXES = {"lambda": "lam", "phi": "phi"}


def bisect_critical(axis: str, params: Params, geometry: Geometry, stopping: Stopping, replicas: int,
                    seed: int = 0, threshold: float = 0.05, tol: float = 0.05, lo: float = 0.0,
                    hi: float | None = None, max_value: float = 64.0, budget: int = 40,
                    sequential: bool = True, log=None, threads: int | None = None):
    """Bracket the value of ``axis`` where survival crosses ``threshold``.

    Starts from ``[lo, hi]`` (``hi`` defaults to ``max(2 lo, 1)``), doubling
    ``hi`` until survival reaches the threshold or ``max_value`` is exceeded
    (:class:`NoBracket`).  Each evaluation is one decision, recorded and
    optionally written to ``log`` as a JSON line; ``budget`` caps the
    number of decisions.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {sorted(_AXES)}")
    attr = _AXES[axis]
    decisions: list[dict] = []

    def evaluate(v: float):
        p = params.replace(**{attr: v})
        est = estimate_survival(p, geometry, stopping, replicas, seed,
                                threshold=threshold if sequential else None, threads=threads)
        above = est.estimate >= threshold
        rec = {"axis": axis, "value": v, "above": above, **est.to_dict()}
        decisions.append(rec)
        if log is not None:
            log.write(json.dumps(rec) + "\n")
        return est, above

    est_lo, above = evaluate(lo)
    if above:
        return CriticalBracket(axis, params, lo, lo, est_lo, est_lo, replicas, threshold, True, decisions)
    hi = max(2 * lo, 1.0) if hi is None else hi
    while True:
        if len(decisions) >= budget or hi > max_value:
            return NoBracket(axis, params, min(hi, max_value) if hi <= max_value else hi / 2, threshold,
                             decisions)
        est_hi, above = evaluate(hi)
        if above:
            break
        lo, est_lo = hi, est_hi
        hi *= 2
    while hi - lo >= tol and len(decisions) < budget:
        mid = 0.5 * (lo + hi)
        est, above = evaluate(mid)
        if above:
            hi, est_hi = mid, est
        else:
            lo, est_lo = mid, est
    return CriticalBracket(axis, params, lo, hi, est_lo, est_hi, replicas, threshold, hi - lo < tol,
                           decisions)


# --------------------------------------------------------------------------
# sweeps


def _control_key(c: ControlSpec) -> tuple[str, str]:
    kappa = c.to_dict().get("kappa", "")
    return c.family, "" if kappa is None else str(kappa)


def _row_key(row: dict) -> tuple:
    return (float(row["lambda"]), float(row["phi"]), int(row["N"]), int(row["d"]), row["family"],
            str(row["kappa"]), int(row["replicas"]), int(row["seed"]))


def sweep(lams, phis, Ns, controls, d: int, side: int, stopping: Stopping, replicas: int, seed: int = 0,
          boundary: str = "periodic", out: str | os.PathLike | None = None, threads: int | None = None,
          comment: str | None = None) -> list[dict]:
    """Full factorial survival table over ``lams x phis x Ns x controls``.

    Rows follow :data:`CSV_FIELDS`.  When ``out`` names an existing CSV,
    rows already present for the same point, replica count and seed are
    reused instead of recomputed, and new rows are appended as they finish.
    ``comment`` is written as a leading ``#`` line of a fresh file; such lines
    are skipped on reading.
    """
    done: dict[tuple, dict] = {}
    path = Path(out) if out is not None else None
    if path is not None and path.exists() and path.stat().st_size > 0:
        with path.open(newline="") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                done[_row_key(row)] = row
    fh = None
    writer = None
    if path is not None:
        fresh = not path.exists() or path.stat().st_size == 0
        fh = path.open("a", newline="")
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        if fresh:
            if comment is not None:
                fh.write("# " + comment + "\n")
            writer.writeheader()
    rows = []
    try:
        for lam, phi, N, c in itertools.product(lams, phis, Ns, controls):
            family, kappa = _control_key(c)
            row = {"lambda": float(lam), "phi": float(phi), "N": int(N), "d": d, "family": family,
                   "kappa": kappa, "replicas": replicas, "seed": seed}
            key = _row_key({**row})
            if key in done:
                old = done[key]
                row.update(survivors=int(old["survivors"]), ci_lo=float(old["ci_lo"]), ci_hi=float(old["ci_hi"]))
                rows.append(row)
                continue
            params = Params(float(lam), float(phi), d, int(N), c)
            geo = Geometry(d, side, int(N), boundary)
            est = estimate_survival(params, geo, stopping, replicas, seed, threads=threads)
            row.update(survivors=est.survivors, ci_lo=est.ci[0], ci_hi=est.ci[1])
            rows.append(row)
            if writer is not None:
                writer.writerow({k: row[k] for k in CSV_FIELDS})
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return rows


def monotonicity_violations(rows: list[dict], axis: str) -> list[tuple[dict, dict]]:
    """Pairs of rows, equal except for ``axis``, where survival drops beyond CI overlap
    as ``axis`` increases."""
    if axis not in ("lambda", "phi", "N"):
        raise ValueError("axis must be lambda, phi or N")
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        key = tuple((k, r[k]) for k in CSV_FIELDS if k not in (axis, "survivors", "ci_lo", "ci_hi"))
        groups.setdefault(key, []).append(r)
    bad = []
    for grp in groups.values():
        grp.sort(key=lambda r: float(r[axis]))
        for a, b in zip(grp, grp[1:]):
            if float(b["ci_hi"]) < float(a["ci_lo"]):
                bad.append((a, b))
    return bad


def brackets_nonincreasing(brackets: list[CriticalBracket]) -> bool:
    """True when each bracket's lower end does not exceed the previous upper end."""
    return all(b.lo <= a.hi for a, b in zip(brackets, brackets[1:]))


def cp_geometry(N: int, pop_cap: int = 2000, d: int = 1) -> Geometry:
    """Periodic box with room for ``pop_cap`` particles, so the population cap and
    not the box size limits growth."""
    patches = math.ceil(pop_cap / N) + 1
    side = math.ceil((patches ** (1.0 / d) - 1) / 2)
    return Geometry(d, max(side, 1), N, "periodic")
