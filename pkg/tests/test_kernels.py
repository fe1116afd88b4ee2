import math

import numpy as np
import pytest

from lowtfr.kernels import (
    AnnualParams,
    Phase2Params,
    Phase3Params,
    VarianceParams,
    annual_decrement_mean,
    double_logistic_decrement,
    error_sd,
    phase2_loglik,
    phase2_step_mean,
    phase3_loglik,
    phase3_step_mean,
)

from oracles import (
    decrement_mp,
    gauss_logpdf,
    phase2_loglik_ref,
    phase3_loglik_ref,
)

UNIT = Phase2Params(1.0, 1.0, 1.0, 1.0, 1.0)


@pytest.mark.parametrize("f", [2.5, 1.5])
def test_decrement_exact_rational_points(f):
    assert abs(double_logistic_decrement(f, UNIT) - 20 / 41) < 1e-12


def test_decrement_matches_high_precision_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d1, d2, d3, d4 = rng.uniform(0.2, 2.0, 4)
        d = rng.uniform(0.2, 2.5)
        f = rng.uniform(0.5, 8.0)
        p = Phase2Params(d1, d2, d3, d4, d)
        assert double_logistic_decrement(f, p) == pytest.approx(float(decrement_mp(f, d, d1, d2, d3, d4)),
                                                                abs=1e-13)


def test_decrement_vanishes_at_high_fertility():
    g = double_logistic_decrement(10.0, UNIT)
    assert 0 < g < 1e-6
    assert g == pytest.approx(float(decrement_mp(10, 1, 1, 1, 1, 1)), rel=1e-9)


def test_step_mean_examples():
    assert phase2_step_mean(2.5, UNIT) == pytest.approx(2.5 - 20 / 41, abs=1e-12)
    tiny = Phase2Params(1.0, 1.0, 1.0, 1.0, 1e-12)
    assert abs(phase2_step_mean(3.0, tiny) - 3.0) < 1e-12
    # g(0) is 1/730 less a term of order 1e-5 for unit widths
    g0 = float(decrement_mp(0, 1, 1, 1, 1, 1))
    assert abs(g0 - 1 / 730) < 2e-5
    assert phase2_step_mean(0.0, UNIT) == pytest.approx(-g0, abs=1e-14)


def test_phase2_params_must_be_positive():
    with pytest.raises(ValueError):
        Phase2Params(1.0, 0.0, 1.0, 1.0, 1.0)


def test_error_sd_examples():
    v = VarianceParams(sigma0=0.1, S=3.5, a=0.01, b=0.02, c0=1.5)
    assert error_sd(3.5, 2000, v) == pytest.approx(0.1)
    assert error_sd(3.5, 1960, v) == pytest.approx(0.15)
    clamp = VarianceParams(sigma0=0.1, S=2.0, a=0.5, b=0.0, c0=1.0, sd_floor=0.01)
    assert error_sd(5.0, 2000, clamp) == pytest.approx(0.01)


def test_error_sd_boundary_year():
    v = VarianceParams(c0=2.0)
    assert error_sd(3.5, 1974, v) == pytest.approx(2 * error_sd(3.5, 1975, v))


def test_variance_params_validation():
    with pytest.raises(ValueError):
        VarianceParams(c0=0.9)
    with pytest.raises(ValueError):
        VarianceParams(sd_floor=0.0)


def test_phase2_loglik_zero_residual():
    v = VarianceParams(sigma0=0.1, S=2.5, a=0.0, b=0.0, c0=1.0)
    f1 = float(phase2_step_mean(2.5, UNIT))
    ll = phase2_loglik([(2000, 2.5), (2005, f1)], UNIT, v)
    assert ll == pytest.approx(math.log(1 / (0.1 * math.sqrt(2 * math.pi))), abs=1e-12)


def test_phase2_loglik_monotone_in_residual():
    v = VarianceParams()
    mean = float(phase2_step_mean(3.0, UNIT))
    near = phase2_loglik([(2000, 3.0), (2005, mean + 0.05)], UNIT, v)
    far = phase2_loglik([(2000, 3.0), (2005, mean + 0.10)], UNIT, v)
    assert far < near


def test_phase2_loglik_hand_summed():
    params = (0.8, 1.4, 1.6, 1.1, 0.9)
    var = (0.15, 3.2, 0.03, 0.04, 1.3, 0.01)
    pairs = [(1970, 5.1), (1975, 4.6), (1980, 3.9)]
    ll = phase2_loglik(pairs, Phase2Params(*params), VarianceParams(*var))
    assert ll == pytest.approx(phase2_loglik_ref(pairs, params, var), abs=1e-10)


def test_loglik_requires_two_points():
    with pytest.raises(ValueError):
        phase2_loglik([(2000, 2.0)], UNIT, VarianceParams())
    with pytest.raises(ValueError):
        phase3_loglik([(2000, 2.0)], Phase3Params(1.8, 0.8, 0.1))


def test_phase3_step_mean_examples():
    q = Phase3Params(1.7, 0.9, 0.1)
    assert phase3_step_mean(1.7, q) == pytest.approx(1.7)
    assert phase3_step_mean(1.0, q) == pytest.approx(1.07)
    assert phase3_step_mean(0.4, Phase3Params(1.7, 0.0, 0.1)) == pytest.approx(1.7)


def test_phase3_loglik_examples():
    q = Phase3Params(1.7, 0.9, 0.2)
    assert phase3_loglik([(2000, 1.0), (2005, 1.07)], q) == pytest.approx(gauss_logpdf(0, 0, 0.2))
    near = phase3_loglik([(2000, 1.0), (2005, 1.10)], q)
    far = phase3_loglik([(2000, 1.0), (2005, 1.13)], q)
    assert far < near
    vals = [1.2, 1.35, 1.3, 1.5]
    pairs = list(zip(range(2000, 2020, 5), vals))
    assert phase3_loglik(pairs, q) == pytest.approx(phase3_loglik_ref(vals, 1.7, 0.9, 0.2), abs=1e-12)


def test_annual_decrement_reduces_without_autocorrelation():
    p = Phase2Params(0.4, 0.6, 0.5, 0.4, 0.2)
    got = annual_decrement_mean(2.0, 0.05, p, AnnualParams(0.0))
    assert got == pytest.approx(double_logistic_decrement(1.95, p))


def test_annual_decrement_without_carried_distortion():
    p = Phase2Params(0.4, 0.6, 0.5, 0.4, 0.2)
    g_prev = float(double_logistic_decrement(2.0, p))
    got = annual_decrement_mean(2.0, g_prev, p, AnnualParams(0.7))
    assert got == pytest.approx(double_logistic_decrement(2.0 - g_prev, p))


def test_annual_decrement_direct_formula():
    p = Phase2Params(0.4, 0.6, 0.5, 0.4, 0.2)
    g_prev = float(double_logistic_decrement(2.0, p))
    got = annual_decrement_mean(2.0, g_prev + 0.2, p, AnnualParams(0.5))
    assert got == pytest.approx(double_logistic_decrement(2.0 - g_prev - 0.2, p) + 0.1)


def test_annual_loglik_uses_carried_residual():
    p = Phase2Params(0.4, 0.6, 0.5, 0.4, 0.2)
    v = VarianceParams(sigma0=0.05, S=2.0, a=0.0, b=0.0, c0=1.0)
    a = AnnualParams(0.5)
    f0, dec0 = 2.0, float(double_logistic_decrement(2.0, p)) + 0.04
    f1 = f0 - dec0
    f2 = f1 - float(annual_decrement_mean(f0, dec0, p, a))
    ll = phase2_loglik([(2000, f0), (2001, f1), (2002, f2)], p, v, a)
    expected = gauss_logpdf(0.04, 0, 0.05) + gauss_logpdf(0.0, 0, 0.05)
    assert ll == pytest.approx(expected, abs=1e-10)


def test_annual_params_range():
    with pytest.raises(ValueError):
        AnnualParams(1.0)
