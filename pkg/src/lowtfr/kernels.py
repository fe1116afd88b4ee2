"""Model kernels: the double-logistic decrement, the error scale and the
one-step Phase II / Phase III densities.

Every function broadcasts over numpy arrays so the samplers can evaluate
all countries' transitions in one call.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np
from scipy.special import expit

LN9 = np.log(9.0)
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
PRE_TRANSITION_YEAR = 1975


@dataclass(frozen=True)
class Phase2Params:
    delta1: float
    delta2: float
    delta3: float
    delta4: float
    d: float

    def __post_init__(self):
        if min(astuple(self)) <= 0:
            raise ValueError(f"all Phase II parameters must be positive: {self}")

    @property
    def start_level(self) -> float:
        return self.delta1 + self.delta2 + self.delta3 + self.delta4


@dataclass(frozen=True)
class VarianceParams:
    sigma0: float = 0.1
    S: float = 3.5
    a: float = 0.01
    b: float = 0.02
    c0: float = 1.25
    sd_floor: float = 0.01

    def __post_init__(self):
        if self.sigma0 <= 0 or self.a < 0 or self.b < 0 or self.c0 < 1 or self.sd_floor <= 0:
            raise ValueError(f"invalid variance parameters: {self}")


@dataclass(frozen=True)
class Phase3Params:
    mu: float
    rho: float
    sigma_eps: float

    def __post_init__(self):
        if self.mu < 0 or self.rho < 0 or self.sigma_eps < 0:
            raise ValueError(f"invalid Phase III parameters: {self}")


@dataclass(frozen=True)
class AnnualParams:
    phi: float = 0.0

    def __post_init__(self):
        if not 0 <= self.phi < 1:
            raise ValueError(f"phi must lie in [0, 1), got {self.phi}")


def decrement(f, d, delta1, delta2, delta3, delta4):
    """Array form of the double-logistic decrement."""
    f = np.asarray(f, dtype=float)
    k = 2.0 * LN9
    first = -d * expit(k * (f - (delta2 + delta3 + delta4) + 0.5 * delta1) / delta1)
    second = d * expit(k * (f - delta4 - 0.5 * delta3) / delta3)
    return first + second


def double_logistic_decrement(f, p: Phase2Params):
    """Expected five-year TFR decline at level ``f``.

    The sum of a falling and a rising logistic in ``f``: close to zero at
    very high and very low fertility and close to ``p.d`` across the
    middle of the transition.
    """
    return decrement(f, p.d, p.delta1, p.delta2, p.delta3, p.delta4)


def phase2_step_mean(f, p: Phase2Params):
    return np.asarray(f, dtype=float) - double_logistic_decrement(f, p)


def sd_scale(f, year, sigma0, S, a, b, c0, sd_floor):
    f = np.asarray(f, dtype=float)
    above = sigma0 - a * (f - S)
    below = sigma0 - b * (S - f)
    sd = np.maximum(sd_floor, np.where(f > S, above, below))
    return np.where(np.asarray(year) < PRE_TRANSITION_YEAR, c0, 1.0) * sd


def error_sd(f, period_start, v: VarianceParams):
    """Standard deviation of the Phase II distortion.

    Piecewise linear in the TFR level with its peak ``sigma0`` at ``v.S``,
    floored at ``v.sd_floor`` and inflated by ``v.c0`` for periods that
    start before 1975.
    """
    return sd_scale(f, period_start, v.sigma0, v.S, v.a, v.b, v.c0, v.sd_floor)


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x) - mean) / sd
    return -0.5 * z * z - np.log(sd) - LOG_SQRT_2PI


def _segment_arrays(segment):
    """Accept a TfrSeries slice, a sequence of (year, tfr) pairs, or Observations."""
    years, values = [], []
    for item in segment:
        if hasattr(item, "tfr"):
            years.append(item.period_start)
            values.append(item.tfr)
        else:
            y, v = item
            years.append(y)
            values.append(v)
    if len(values) < 2:
        raise ValueError("a segment needs at least two observations")
    return np.asarray(years), np.asarray(values, dtype=float)


def phase2_loglik(segment, p: Phase2Params, v: VarianceParams, annual: AnnualParams | None = None):
    """Gaussian log-likelihood of the Phase II transitions in ``segment``.

    With ``annual`` given, distortions of consecutive decrements follow an
    AR(1) with coefficient ``annual.phi``; the first transition carries no
    previous distortion.
    """
    years, f = _segment_arrays(segment)
    f_now, f_next = f[:-1], f[1:]
    g = double_logistic_decrement(f_now, p)
    resid = (f_now - f_next) - g
    if annual is not None and annual.phi:
        resid = resid - annual.phi * np.concatenate([[0.0], resid[:-1]])
    sd = error_sd(f_now, years[:-1], v)
    return float(np.sum(normal_logpdf(resid, 0.0, sd)))


def phase3_step_mean(f, q: Phase3Params):
    return q.mu + q.rho * (np.asarray(f, dtype=float) - q.mu)


def phase3_loglik(segment, q: Phase3Params):
    _, f = _segment_arrays(segment)
    mean = phase3_step_mean(f[:-1], q)
    return float(np.sum(normal_logpdf(f[1:], mean, q.sigma_eps)))


def annual_decrement_mean(prev_f, prev_decrement, p: Phase2Params, a: AnnualParams):
    """Expected decrement for the year following a decrement of ``prev_decrement``.

    Decrements are positive for declines, so the current level is
    ``prev_f - prev_decrement``.
    """
    f_now = np.asarray(prev_f, dtype=float) - prev_decrement
    carried = prev_decrement - double_logistic_decrement(prev_f, p)
    return double_logistic_decrement(f_now, p) + a.phi * carried
