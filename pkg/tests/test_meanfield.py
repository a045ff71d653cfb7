import math
from fractions import Fraction

import numpy as np
import pytest

from prp.meanfield import (Logistic, MeanFieldProfile, NoEndemicEquilibrium, SelfReg, exact_u0_logistic,
                           integrate_meanfield, meanfield_rhs, stationary_profile, u0_limit, u0_logistic,
                           u0_selfreg)
from prp.model import ControlSpec
from prp.series import NumericalError


def test_small_logistic_profile():
    prof = stationary_profile(Logistic(2), 1, 1)
    assert isinstance(prof, MeanFieldProfile)
    np.testing.assert_allclose(prof.u, [2 / 3, 4 / 15, 1 / 15], rtol=1e-14)
    assert prof.mass == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("lam,phi,kappa", [(1, 1, 2), (0.5, 2, 7), (3, "1/3", 5), (2, 0, 4)])
def test_float_u0_matches_rational(lam, phi, kappa):
    ref = exact_u0_logistic(lam, phi, kappa)
    assert u0_logistic(lam, float(Fraction(phi)), kappa) == pytest.approx(float(ref), rel=1e-13)


def test_large_kappa_no_overflow():
    for kappa in (10 ** 4, 10 ** 5):
        u = u0_logistic(1.0, 1.0, kappa)
        assert 0 < u < 1 and math.isfinite(u)
    # phi > 1 drives u0 below the smallest double; it must underflow cleanly, not overflow
    assert u0_logistic(1.0, 3.0, 10 ** 4) == 0.0
    assert 0 < u0_logistic(1.0, 3.0, 200) < 1e-20


def test_no_endemic_equilibrium():
    res = stationary_profile(Logistic(3), 0.2, 0.1)
    assert isinstance(res, NoEndemicEquilibrium) and not res
    assert res.u0 >= 1


def test_u0_limit():
    assert u0_limit("logistic", 1, 0.5) == 0.5
    assert u0_limit("logistic", 1, 2) == 0.0
    with pytest.raises(ValueError):
        u0_logistic(0, 1, 3)


def test_selfreg_matches_logistic_control():
    # the selfreg formula with the logistic control reproduces the logistic u0
    c = ControlSpec.logistic(6)
    assert u0_selfreg(1.3, 0.7, c) == pytest.approx(u0_logistic(1.3, 0.7, 6), rel=1e-13)


def test_selfreg_divergent_gives_zero():
    assert u0_selfreg(1, 1, ControlSpec.all_one()) == 0.0
    assert u0_selfreg(1, 0.5, ControlSpec.all_one()) == pytest.approx(0.5, rel=1e-14)


@pytest.mark.parametrize("flavor", [Logistic(5), SelfReg(ControlSpec.constant("1/2")),
                                    SelfReg(ControlSpec.indicator(4))], ids=str)
def test_stationary_profile_is_fixed_point(flavor):
    prof = stationary_profile(flavor, 1.5, 1.2)
    r = meanfield_rhs(flavor, 1.5, 1.2, prof.u)
    # selfreg profiles are cut where the weights drop below 1e-12
    assert np.abs(r).max() < 1e-10


def test_integration_converges_to_profile():
    flavor = Logistic(4)
    prof = stationary_profile(flavor, 2.0, 1.0)
    snaps = integrate_meanfield(flavor, 2.0, 1.0, [0.5, 0.5], 60.0, dt=0.01)
    np.testing.assert_allclose(snaps[-1].u, prof.u, atol=1e-8)
    assert abs(snaps[-1].extra["mass_drift"]) < 1e-12


def test_truncation_leak_is_reported():
    flavor = SelfReg(ControlSpec.constant("9/10"))
    with pytest.raises(NumericalError, match="leak"):
        integrate_meanfield(flavor, 1.0, 1.0, [0.0, 1.0], 20.0, dt=0.01, K=3)


def test_bad_initial_mass():
    with pytest.raises(ValueError):
        integrate_meanfield(Logistic(3), 1, 1, [0.5, 0.2], 1.0)
