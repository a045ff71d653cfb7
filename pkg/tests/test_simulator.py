import io

import numpy as np
import pytest

from prp.model import ControlSpec, Geometry, Params
from prp.simulator import (ContractViolation, EventKind, LatticeState, Status, Stopping, patch_rates, run,
                           run_coupled, step)


def _state(params, side=3, boundary="periodic", **kw):
    geo = Geometry(params.d, side, params.N, boundary)
    return LatticeState.single(geo, params, **kw)


def test_empty_patch_has_zero_rate():
    st = _state(Params(1.0, 1.0, 1, 3, ControlSpec.logistic(3)))
    far = st.geometry.index((3,))
    r = patch_rates(st, far)
    assert r.total == 0


def test_single_particle_rates():
    c = ControlSpec.logistic(3)
    st = _state(Params(0.7, 1.3, 1, 1, c))
    r = patch_rates(st, st.geometry.origin)
    assert r.death == 1
    assert r.intra == pytest.approx(1.3 * c(1))
    assert r.inter == 0
    right = st.geometry.index((1,))
    assert patch_rates(st, right).inter == pytest.approx(0.7)


def test_multi_site_rates():
    c = ControlSpec.constant("1/2")
    p = Params(2.0, 1.0, 1, 4, c)
    geo = Geometry(1, 2, 4)
    eta = np.zeros((geo.n_patches, 4), dtype=np.int64)
    eta[geo.origin] = [2, 1, 0, 0]
    st = LatticeState(geo, p, eta)
    r = patch_rates(st, geo.origin)
    csum = c(2) + c(1) + 2 * c(0)
    assert r.death == 3
    assert r.intra == pytest.approx(1.0 / 4 * 3 * csum)
    nb = geo.index((1,))
    assert patch_rates(st, nb).inter == pytest.approx(2.0 / 4 * 4 * 3)


def test_pure_death_time_is_exponential():
    st0 = _state(Params(0.0, 0.0, 1, 1, ControlSpec.all_one()), side=1)
    rng = np.random.default_rng(5)
    times = []
    for _ in range(4000):
        st = st0.copy()
        out = run(st, Stopping(t_max=1e9, pop_cap=10), rng)
        assert out.status is Status.Extinct
        times.append(out.time)
    times = np.array(times)
    assert abs(times.mean() - 1.0) < 4 / np.sqrt(len(times))


def test_bcp_never_exceeds_one_per_site():
    p = Params(1.5, 3.0, 1, 3, ControlSpec.delta0())
    st = _state(p, side=4)
    rng = np.random.default_rng(1)
    for _ in range(3000):
        if st.total == 0:
            break
        step(st, rng)
        assert st.eta.max() <= 1
    st.check_caches()


def test_event_frequencies_match_rates():
    c = ControlSpec.logistic(4)
    p = Params(0.8, 1.5, 1, 2, c)
    geo = Geometry(1, 2, 2)
    eta = np.zeros((geo.n_patches, 2), dtype=np.int64)
    eta[geo.origin] = [2, 1]
    st = LatticeState(geo, p, eta)
    rates = [patch_rates(st, x) for x in range(geo.n_patches)]
    total = sum(r.total for r in rates)
    expect = {EventKind.Death: sum(r.death for r in rates) / total,
              EventKind.IntraBirth: sum(r.intra for r in rates) / total,
              EventKind.InterBirth: sum(r.inter for r in rates) / total}
    rng = np.random.default_rng(7)
    n = 30_000
    counts = {k: 0 for k in EventKind}
    dts = []
    for _ in range(n):
        s = st.copy()
        kind, dt = step(s, rng)
        counts[kind] += 1
        dts.append(dt)
    for k, pk in expect.items():
        assert abs(counts[k] / n - pk) < 3.5 * np.sqrt(pk * (1 - pk) / n)
    assert abs(np.mean(dts) - 1 / total) < 4 / total / np.sqrt(n)


@pytest.mark.parametrize("uniformized", [False, True])
def test_caches_stay_coherent(uniformized):
    p = Params(1.2, 1.7, 2, 3, ControlSpec.logistic(3))
    st = _state(p, side=3, boundary="absorbing", uniformized=uniformized)
    rng = np.random.default_rng(2)
    for i in range(2000):
        if st.total == 0:
            break
        step(st, rng)
        if i % 200 == 0:
            st.check_caches()
    st.check_caches()


def test_compiled_run_keeps_caches():
    p = Params(1.0, 1.0, 1, 2, ControlSpec.indicator(3))
    st = _state(p, side=5)
    run(st, Stopping(t_max=5.0, pop_cap=500), np.random.default_rng(0))
    st.check_caches()


def test_run_is_deterministic():
    p = Params(1.0, 1.2, 1, 2, ControlSpec.logistic(3))
    a = run(_state(p, side=6), Stopping(20.0, 300), np.random.default_rng(42))
    b = run(_state(p, side=6), Stopping(20.0, 300), np.random.default_rng(42))
    assert a == b


def test_contact_process_ignores_control_when_phi_zero():
    geo = Geometry(1, 6, 2)
    outs = []
    for c in (ControlSpec.all_one(), ControlSpec.delta0(), ControlSpec.logistic(2)):
        st = LatticeState.single(geo, Params(1.4, 0.0, 1, 2, c))
        outs.append(run(st, Stopping(10.0, 200), np.random.default_rng(9)))
    assert outs[0] == outs[1] == outs[2]


def test_extinct_state_raises():
    geo = Geometry(1, 2, 1)
    st = LatticeState.empty_state(geo, Params(1.0, 1.0))
    with pytest.raises(ContractViolation):
        step(st, np.random.default_rng(0))
    assert run(st, Stopping(), np.random.default_rng(0)).status is Status.Extinct


def test_event_budget():
    st = _state(Params(2.0, 2.0, 1, 2, ControlSpec.all_one()), side=10)
    with pytest.raises(ContractViolation, match="budget"):
        run(st, Stopping(1e9, 10 ** 6), np.random.default_rng(0), max_events=50)


def test_event_log_csv():
    st = _state(Params(1.0, 1.0, 1, 2, ControlSpec.logistic(3)))
    buf = io.StringIO()
    out = run(st, Stopping(3.0, 100), np.random.default_rng(4), log=buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == out.events
    times = [float(l.split(",")[0]) for l in lines]
    assert times == sorted(times)
    assert all(l.split(",")[1] in EventKind.__members__ for l in lines)
    if lines:
        assert int(lines[-1].split(",")[-1]) == out.population


def test_pop_cap_stops():
    st = _state(Params(3.0, 3.0, 1, 4, ControlSpec.all_one()), side=10)
    out = run(st, Stopping(1e6, 50), np.random.default_rng(0))
    assert out.status is Status.PopulationCapReached and out.population >= 50


def test_indicator_bounds_occupancy():
    kappa = 3
    st = _state(Params(1.0, 5.0, 1, 2, ControlSpec.indicator(kappa)), side=3)
    rng = np.random.default_rng(3)
    for _ in range(3000):
        if st.total == 0:
            break
        step(st, rng)
        # births on a site need c(eta) > 0, so no site exceeds kappa
        assert st.eta.max() <= kappa


def _init(geo):
    eta = np.zeros((geo.n_patches, geo.N), dtype=np.int64)
    eta[geo.origin, 0] = 1
    return eta


def test_coupling_identical_params_agree():
    p = Params(1.0, 1.0, 1, 2, ControlSpec.logistic(3))
    geo = Geometry(1, 4, 2)
    rep = run_coupled(p, p, geo, _init(geo), _init(geo), Stopping(5.0, 200), np.random.default_rng(0))
    assert rep.ok and rep.mode == "sitewise"
    assert rep.outcome_lo in ("Extinct", "Alive")


@pytest.mark.parametrize("lo,hi", [
    (Params(0.5, 1.0, 1, 2, ControlSpec.logistic(3)), Params(1.5, 1.0, 1, 2, ControlSpec.logistic(3))),
    (Params(1.0, 0.5, 1, 2, ControlSpec.indicator(2)), Params(1.0, 2.0, 1, 2, ControlSpec.all_one())),
    (Params(1.0, 1.0, 1, 1, ControlSpec.delta0()), Params(1.0, 1.0, 1, 3, ControlSpec.delta0())),
])
def test_coupling_preserves_order(lo, hi):
    geo = Geometry(1, 4, hi.N)
    geo_lo = Geometry(1, 4, lo.N)
    for seed in range(5):
        rep = run_coupled(lo, hi, geo, _init(geo_lo), _init(geo), Stopping(5.0, 150),
                          np.random.default_rng(seed))
        assert rep.ok, rep.first_violation


def test_coupling_rejects_bad_order():
    geo = Geometry(1, 2, 1)
    lo = Params(2.0, 1.0)
    hi = Params(1.0, 1.0)
    with pytest.raises(ValueError, match="ordering"):
        run_coupled(lo, hi, geo, _init(geo), _init(geo), Stopping(), np.random.default_rng(0))


def test_geometry_mismatch_rejected():
    with pytest.raises(ValueError):
        LatticeState(Geometry(1, 2, 3), Params(1.0, 1.0, 1, 2))


def test_transient_single_patch_reaches_cap():
    # lambda = 0: only the origin patch matters, and its walk escapes with positive probability
    p = Params(0.0, 2.0, 1, 1, ControlSpec.quadratic_ratio(2))
    geo = Geometry(1, 1, 1)
    rng = np.random.default_rng(8)
    statuses = [run(LatticeState.single(geo, p), Stopping(t_max=1e7, pop_cap=40), rng).status
                for _ in range(200)]
    hits = statuses.count(Status.PopulationCapReached)
    assert hits + statuses.count(Status.Extinct) == 200
    assert 20 < hits < 110
