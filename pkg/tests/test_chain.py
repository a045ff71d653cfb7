import itertools
from fractions import Fraction

import numpy as np
import pytest

from prp.chain import (ChainClass, classify, embedded_step_distribution, escape_probability,
                       escape_probability_limit, expected_absorption_time, min_mean_control,
                       min_mean_control_bruteforce, reversible_measure, sample_trial_vector,
                       simulate_absorption_times, subcritical_lambda_bound, total_mass, trial_vector_pmf)
from prp.model import ControlSpec


def test_step_examples():
    phi = Fraction(3, 2)
    dist = embedded_step_distribution(phi, ControlSpec.all_one(), 1, (0,))
    assert dist[(1,)] == phi / (1 + phi)
    assert dist[(0,)] == 1 / (1 + phi)
    dist = embedded_step_distribution(phi, ControlSpec.delta0(), 1, (1,))
    assert (2,) not in dist
    assert dist[(0,)] == 1 / (1 + phi)
    assert dist[(1,)] == phi / (1 + phi)


def test_absorbing_zero():
    assert embedded_step_distribution(1.0, ControlSpec.all_one(), 2, (0, 0), boundary="absorb") == {(0, 0): 1.0}


@pytest.mark.parametrize("c", [ControlSpec.logistic(3), ControlSpec.constant("2/3"), ControlSpec.all_one()],
                         ids=lambda c: c.label())
def test_step_normalizes(c):
    rng = np.random.default_rng(3)
    for _ in range(30):
        N = int(rng.integers(1, 4))
        s = tuple(int(v) for v in rng.integers(0, 6, size=N))
        dist = embedded_step_distribution(Fraction(5, 4), c, N, s)
        assert sum(dist.values()) == 1
        assert all(p >= 0 for p in dist.values())


def test_classify_examples():
    assert classify(2, ControlSpec.quadratic_ratio(2)).kind is ChainClass.TRANSIENT
    assert classify(5, ControlSpec.indicator(3)).kind is ChainClass.POSITIVE_RECURRENT
    assert classify(0.5, ControlSpec.all_one()).kind is ChainClass.POSITIVE_RECURRENT
    assert classify(3, ControlSpec.constant("1/2")).kind is ChainClass.TRANSIENT
    assert classify(1, ControlSpec.all_one()).kind is ChainClass.INCONCLUSIVE
    assert classify(1.5, ControlSpec.quadratic_ratio(2)).kind is ChainClass.POSITIVE_RECURRENT


def test_reversible_measure_examples():
    phi = Fraction(7, 3)
    assert reversible_measure(phi, ControlSpec.logistic(4), (0, 0, 0)) == 1
    assert reversible_measure(phi, ControlSpec.all_one(), (3,)) == phi ** 3


def test_total_mass_examples():
    for phi in (0.5, 1.0, 3.0):
        assert total_mass(phi, ControlSpec.delta0(), 3) == pytest.approx((1 + phi) ** 3, rel=1e-14)
    assert total_mass(0.5, ControlSpec.all_one(), 2) == pytest.approx(4.0, rel=1e-14)
    assert total_mass(1.0, ControlSpec.all_one(), 2) == float("inf")


def test_absorption_closed_forms():
    for phi in (0.3, 1.0, 2.5):
        assert expected_absorption_time(phi, ControlSpec.delta0(), 1).value == pytest.approx(1 + phi, rel=1e-12)
        assert expected_absorption_time(phi, ControlSpec.indicator(2), 1).value == pytest.approx((1 + phi) ** 2,
                                                                                                  rel=1e-12)
    assert expected_absorption_time(0, ControlSpec.logistic(3), 1).value == pytest.approx(1.0)


def test_absorption_refuses_transient():
    with pytest.raises(ValueError):
        expected_absorption_time(2, ControlSpec.quadratic_ratio(2), 1)


def test_absorption_sensitivity_small():
    tau = expected_absorption_time(0.5, ControlSpec.all_one(), 2)
    assert tau.sensitivity < 1e-6 * tau.value


def test_absorption_vs_monte_carlo():
    rng = np.random.default_rng(11)
    c = ControlSpec.logistic(3)
    tau = expected_absorption_time(1.0, c, 2)
    samples = simulate_absorption_times(1.0, c, 2, (1, 0), 20_000, rng)
    se = samples.std() / np.sqrt(len(samples))
    assert abs(samples.mean() - tau.value) < 4 * se


def test_trial_vector_examples():
    assert trial_vector_pmf(1, 1, 1, (0, 0)) == pytest.approx(0.5)
    total = sum(trial_vector_pmf(0.7, 0.4, 1, (a, b)) for a in range(120) for b in range(120))
    assert total == pytest.approx(1.0, abs=1e-10)
    assert trial_vector_pmf(0, 1, 2, (0, 0, 0, 0)) == 1.0


def test_trial_vector_sampler_shape():
    rng = np.random.default_rng(0)
    y = sample_trial_vector(0.5, 2.0, 2, rng, size=1000)
    assert y.shape == (1000, 4) and (y >= 0).all()
    assert sample_trial_vector(0.5, 2.0, 1, rng).shape == (2,)


def test_subcritical_bound_examples():
    assert subcritical_lambda_bound(1.3, ControlSpec.delta0(), 1, 2) == pytest.approx(1 / 4)
    assert subcritical_lambda_bound(0, ControlSpec.logistic(3), 1, 1) == pytest.approx(1 / 2)
    assert subcritical_lambda_bound(1, ControlSpec.indicator(2), 1, 1) == pytest.approx(1 / 4)


def test_min_mean_control_examples():
    assert min_mean_control(ControlSpec.delta0(), 10, 3) == Fraction(7, 10)
    assert min_mean_control(ControlSpec.logistic(3), 4, 0) == 1
    assert min_mean_control(ControlSpec.logistic(2), 2, 2) == Fraction(1, 2)
    assert min_mean_control_bruteforce(ControlSpec.logistic(2), 2, 2) == Fraction(1, 2)


def test_escape_probability_monotone_in_height():
    c = ControlSpec.quadratic_ratio(2)
    vals = [escape_probability(2, c, H) for H in (16, 64, 256)]
    assert vals[0] > vals[1] > vals[2] > 0
    p, H = escape_probability_limit(2, c)
    # closed form of the transient walk: P(escape) = 1 / sum_n 1/(2^n c!(n)) = 1 / (9 (pi^2/6 - 1.25))
    assert p == pytest.approx(1 / (9 * (np.pi ** 2 / 6 - 1.25)), abs=2e-4)


def test_detailed_balance_small_exact():
    phi = Fraction(2)
    c = ControlSpec.logistic(3)
    for s in itertools.product(range(4), repeat=2):
        for t, p in embedded_step_distribution(phi, c, 2, s).items():
            if t != s:
                back = embedded_step_distribution(phi, c, 2, t)[s]
                assert reversible_measure(phi, c, s) * p == reversible_measure(phi, c, t) * back
