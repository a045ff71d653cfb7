import csv
import io
import json

import numpy as np
import pytest

from prp.criticality import (CSV_FIELDS, NoBracket, bisect_critical, brackets_nonincreasing, cp_geometry,
                             estimate_survival, monotonicity_violations, replica_rng, sweep, wilson_interval)
from prp.model import ControlSpec, Geometry, Params
from prp.simulator import Stopping

STOP = Stopping(t_max=20.0, pop_cap=200)


def test_empty_initial_never_survives():
    geo = Geometry(1, 3, 1)
    est = estimate_survival(Params(5.0, 5.0), geo, STOP, 20, initial=np.zeros((geo.n_patches, 1)))
    assert est.survivors == 0 and est.estimate == 0


def test_wilson_properties():
    for k, n in [(0, 10), (3, 10), (10, 10), (250, 500)]:
        lo, hi = wilson_interval(k, n)
        assert 0 <= lo <= k / n <= hi <= 1
    assert wilson_interval(0, 10)[0] == 0
    assert wilson_interval(10, 10)[1] == 1
    assert wilson_interval(0, 0) == (0.0, 1.0)
    # closed-form Wilson interval at z = 1.96
    k, n, z = 30, 100, 1.959963984540054
    p = k / n
    c = (p + z * z / (2 * n)) / (1 + z * z / n)
    h = z / (1 + z * z / n) * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    assert wilson_interval(k, n) == pytest.approx((c - h, c + h), abs=1e-12)
    # width shrinks like 1/sqrt(n)
    w = [np.subtract(*wilson_interval(n // 2, n)[::-1]) for n in (100, 400)]
    assert w[1] == pytest.approx(w[0] / 2, rel=0.05)


def test_replica_streams_independent_of_order():
    a = replica_rng(7, 3).random(4)
    b = replica_rng(7, 3).random(4)
    c = replica_rng(7, 4).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_estimate_reproducible_across_threads():
    p = Params(1.0, 1.0, 1, 2, ControlSpec.logistic(3))
    geo = Geometry(1, 10, 2)
    a = estimate_survival(p, geo, STOP, 60, seed=3, threads=1)
    b = estimate_survival(p, geo, STOP, 60, seed=3, threads=4)
    assert a == b
    assert sum(a.statuses.values()) == 60


def test_sequential_stops_early():
    p = Params(0.1, 0.1)
    est = estimate_survival(p, Geometry(1, 5, 1), STOP, 1000, threshold=0.5, batch=25)
    assert est.replicas < 1000 and est.survivors == 0
    assert est.rule.startswith("sequential")


def test_degenerate_bracket():
    p = Params(0.0, 3.0, 1, 2, ControlSpec.all_one())
    res = bisect_critical("lambda", p, Geometry(1, 5, 2), STOP, 40, lo=0.0)
    assert res and res.degenerate and res.lo == res.hi == 0.0


def test_no_bracket():
    # phi = 0 and N = 1 with lambda capped far below the contact-process threshold
    p = Params(0.0, 0.0)
    res = bisect_critical("lambda", p, Geometry(1, 5, 1), STOP, 40, max_value=0.5)
    assert isinstance(res, NoBracket) and not res
    assert res.searched_up_to <= 0.5


def test_bracket_and_log():
    p = Params(0.0, 0.0, 1, 1, ControlSpec.all_one())
    log = io.StringIO()
    res = bisect_critical("lambda", p, cp_geometry(1, 200), STOP, 100, tol=0.2, log=log, threads=1)
    assert res and res.hi - res.lo < 0.2 and res.converged
    recs = [json.loads(l) for l in log.getvalue().splitlines()]
    assert len(recs) == len(res.decisions)
    assert recs[-1]["value"] in (res.lo, res.hi)
    assert not res.est_lo.estimate >= 0.05 and res.est_hi.estimate >= 0.05


def test_bad_axis():
    with pytest.raises(ValueError):
        bisect_critical("N", Params(1.0, 1.0), Geometry(1, 2, 1), STOP, 10)


def test_sweep_resumes_and_is_deterministic(tmp_path):
    out = tmp_path / "s.csv"
    kw = dict(phis=[0.5], Ns=[1, 2], controls=[ControlSpec.logistic(3)], d=1, side=6, stopping=STOP,
              replicas=30, seed=5, threads=1)
    first = sweep([0.5, 1.5], out=out, comment="test", **kw)
    text = out.read_text()
    assert text.startswith("# test\n")
    again = sweep([0.5, 1.5, 2.5], out=out, **kw)
    assert again[:4] == [{**r, "ci_lo": pytest.approx(r["ci_lo"]), "ci_hi": pytest.approx(r["ci_hi"])}
                         for r in first]
    rows = list(csv.DictReader(l for l in out.read_text().splitlines() if not l.startswith("#")))
    assert len(rows) == 6 and list(rows[0]) == CSV_FIELDS
    fresh = sweep([0.5, 1.5, 2.5], **kw)
    assert [r["survivors"] for r in fresh] == [r["survivors"] for r in again]


def test_monotonicity_detector():
    base = {"phi": 1.0, "N": 1, "d": 1, "family": "all_one", "kappa": "", "replicas": 100, "seed": 0}
    rows = [{**base, "lambda": 1.0, "survivors": 50, "ci_lo": 0.4, "ci_hi": 0.6},
            {**base, "lambda": 2.0, "survivors": 10, "ci_lo": 0.05, "ci_hi": 0.2}]
    assert len(monotonicity_violations(rows, "lambda")) == 1
    rows[1].update(ci_lo=0.35, ci_hi=0.5)
    assert monotonicity_violations(rows, "lambda") == []


def test_survival_monotone_in_lambda():
    rows = sweep([0.5, 1.5, 3.0], [0.0], [1], [ControlSpec.all_one()], 1, 40, STOP, 150, seed=1)
    assert monotonicity_violations(rows, "lambda") == []
    assert rows[0]["survivors"] <= rows[-1]["survivors"]


def test_brackets_nonincreasing():
    class B:
        def __init__(self, lo, hi):
            self.lo, self.hi = lo, hi

    assert brackets_nonincreasing([B(1.5, 1.6), B(1.0, 1.1), B(1.05, 1.2)]) is True
    assert brackets_nonincreasing([B(1.0, 1.1), B(1.2, 1.3)]) is False


def test_cp_geometry_has_room():
    for N in (1, 2, 4, 8):
        g = cp_geometry(N, 2000)
        assert g.n_sites >= 2000 and g.boundary == "periodic"
