import math
from fractions import Fraction

import numpy as np
import pytest

from prp.brw import (brw_expectation, brw_expectation_field, brw_expectation_ode, lazy_walk_prob, path_counts,
                     poisson_tail, simple_walk_counts)
from prp.series import NumericalError


def test_path_counts_small_cases():
    t = path_counts(1, 3)
    assert t(0, 0, (0,)) == 1
    assert t(1, 1, (0,)) == 1
    assert t(1, 0, (1,)) == 1 and t(1, 0, (-1,)) == 1
    # two steps: one loop and one move in either order
    assert t(2, 1, (1,)) == 2
    assert t(2, 0, (0,)) == 2


def test_simple_walk_counts():
    assert simple_walk_counts(1, 4, (0,)) == math.comb(4, 2)
    assert simple_walk_counts(2, 2, (0, 0)) == 4
    assert simple_walk_counts(1, 3, (0,)) == 0


def test_lazy_walk_exact_rationals():
    p = lazy_walk_prob(Fraction(1), Fraction(1), 1, 2, (0,))
    # stay twice (1/9) or move away and back (2/9)
    assert p == Fraction(1, 3)


def test_field_t_zero_is_delta():
    fld = brw_expectation_field(1.0, 1.0, 1, 0.0)
    assert fld.at((0,)) == 1.0
    assert fld.mass == 1.0


def test_mass_formula_d2():
    fld = brw_expectation_field(0.5, 0.25, 2, 1.5)
    assert fld.mass == pytest.approx(math.exp((0.5 + 1.0 - 1) * 1.5), rel=1e-10)


def test_symmetry():
    fld = brw_expectation_field(1.0, 0.7, 2, 1.0)
    v = fld.values
    np.testing.assert_allclose(v, v[::-1, :], rtol=1e-13)
    np.testing.assert_allclose(v, v.T, rtol=1e-13)


def test_point_value_outside_box_is_zero():
    assert brw_expectation(1.0, 1.0, 1, (10_000,), 0.5) == 0.0


def test_series_vs_ode_small():
    fld = brw_expectation_field(0.8, 0.6, 1, 1.0, R=15)
    ode = brw_expectation_ode(0.8, 0.6, 1, 15, 1.0)
    for x in range(-7, 8):
        assert fld.at((x,)) == pytest.approx(ode.at((x,)), rel=1e-8)


def test_tail_check():
    assert poisson_tail(1, 1, 1, 3, 60) < 1e-12
    with pytest.raises(NumericalError):
        brw_expectation_field(1.0, 1.0, 1, 3.0, n_max=5)


def test_ode_boundary_check():
    with pytest.raises(NumericalError):
        brw_expectation_ode(1.0, 1.0, 1, 3, 3.0)
