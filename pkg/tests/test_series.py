import math
from fractions import Fraction

import pytest

from prp.model import ControlSpec
from prp.series import (Inconclusive, control_series, exact_partial, geometric_tail_mass,
                        reciprocal_series_converges)


def test_geometric_closed_form():
    s = control_series(0.5, ControlSpec.all_one())
    assert s.value == pytest.approx(2.0, rel=1e-14)
    assert s.tail_bound <= 1e-15 * s.value


def test_constant_closed_form():
    # 1 + sum_{n>=1} phi^n p^n = 1 + phi p / (1 - phi p)
    s = control_series(1.5, ControlSpec.constant("1/2"))
    assert s.value == pytest.approx(1 + 0.75 / 0.25, rel=1e-13)


def test_finite_support_is_exact():
    s = control_series(3.0, ControlSpec.indicator(3))
    assert s.value == 1 + 3 + 9
    assert s.tail_bound == 0


def test_divergence_is_structural():
    assert control_series(1.0, ControlSpec.all_one()).divergent
    assert control_series(2, ControlSpec.quadratic_ratio(2)).divergent
    assert not control_series(1.9, ControlSpec.quadratic_ratio(2)).divergent


def test_certified_value_matches_exact_partial():
    c = ControlSpec.table([1, "9/10", "4/5"], "1/2")
    s = control_series(Fraction(3, 2), c)
    ref = exact_partial(Fraction(3, 2), c, 400)
    assert abs(s.value - float(ref)) <= s.tail_bound + 1e-14 * s.value


def test_budget_exhaustion_is_inconclusive():
    res = control_series(0.999999, ControlSpec.all_one(), budget=10)
    assert isinstance(res, Inconclusive) and not res


def test_reciprocal_series():
    assert reciprocal_series_converges(2, ControlSpec.quadratic_ratio(2)) is True
    assert reciprocal_series_converges(3, ControlSpec.constant("1/2")) is True
    assert reciprocal_series_converges(1, ControlSpec.constant("1/2")) is False
    assert reciprocal_series_converges(1, ControlSpec.all_one()) is None
    assert reciprocal_series_converges(5, ControlSpec.indicator(2)) is False


def test_tail_mass_bound():
    c = ControlSpec.constant("1/2")
    phi = 1.0
    exact = sum(phi ** n * 0.5 ** (n - 1) for n in range(5, 200))
    assert geometric_tail_mass(phi, c, 5) == pytest.approx(exact, rel=1e-12)
    assert geometric_tail_mass(2.0, ControlSpec.all_one(), 3) == math.inf
    assert geometric_tail_mass(2.0, ControlSpec.indicator(2), 4) == 0.0
