"""Posterior-predictive TFR trajectories and quantile fans."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .data import ANNUAL, TfrSeries
from .diagnostics import gelman_rubin
from .kernels import AnnualParams, Phase2Params, Phase3Params, VarianceParams, decrement, sd_scale
from .mcmc import (
    ChainSet,
    phase2_params_arrays,
    pool_level_names,
    predictive_draws,
    variance_arrays,
)
from .phases import DEFAULT_PHASE3_THRESHOLD, PhaseSegmentation

logger = logging.getLogger(__name__)

TFR_FLOOR = 0.5
FLOOR_ATTEMPTS = 50
DEFAULT_LEVELS = (0.025, 0.10, 0.50, 0.90, 0.975)
MIN_TRAJECTORIES = 100


class ProjectionError(RuntimeError):
    pass


class ConvergenceError(ProjectionError):
    """Chains failed the R-hat gate and no override was given."""


@dataclass(frozen=True)
class PosteriorDraw:
    """Everything needed to simulate one trajectory of one country."""

    phase2: Phase2Params
    variance: VarianceParams
    phase3: Phase3Params
    annual: AnnualParams | None = None
    index: int = 0


@dataclass
class Trajectory:
    country_id: str
    years: np.ndarray
    values: np.ndarray
    phase_at: np.ndarray
    draw_index: int


@dataclass
class ProjectionResult:
    country_id: str
    years: np.ndarray
    levels: tuple
    fan: np.ndarray  # shape (len(levels), len(years))
    n_trajectories: int
    config: dict = field(default_factory=dict)
    trajectories: np.ndarray | None = None
    phases: np.ndarray | None = None

    def quantile(self, level: float) -> np.ndarray:
        return self.fan[self.levels.index(level)]

    def interval(self, year: int, lower=0.025, upper=0.975):
        j = int(np.flatnonzero(self.years == year)[0])
        return float(self.quantile(lower)[j]), float(self.quantile(upper)[j])

    def at(self, year: int, level=0.5) -> float:
        j = int(np.flatnonzero(self.years == year)[0])
        return float(self.quantile(level)[j])


def horizon_to(series_last_year: int, step: int, end_year: int) -> int:
    """Number of periods after ``series_last_year`` that end no later than ``end_year``."""
    return max(0, (end_year - step - series_last_year) // step)


def _draw_arrays(draw: PosteriorDraw) -> dict:
    p, v, q = draw.phase2, draw.variance, draw.phase3
    return {
        "d": np.array([p.d]), "delta1": np.array([p.delta1]), "delta2": np.array([p.delta2]),
        "delta3": np.array([p.delta3]), "delta4": np.array([p.delta4]),
        "var": tuple(np.array([x]) for x in (v.sigma0, v.S, v.a, v.b, v.c0)),
        "sd_floor": v.sd_floor,
        "phi": np.array([draw.annual.phi if draw.annual else 0.0]),
        "mu": np.array([q.mu]), "rho": np.array([q.rho]), "sigma_eps": np.array([q.sigma_eps]),
    }


def simulate_trajectories(series: TfrSeries, seg: PhaseSegmentation, params: dict, horizon: int,
                          rng, threshold: float = DEFAULT_PHASE3_THRESHOLD, floor: float = TFR_FLOOR):
    """Vectorised forward simulation; one trajectory per entry of the parameter arrays.

    Returns ``(values, phases)`` both of shape (n, horizon); phases hold 2 or 3.
    """
    if horizon <= 0:
        raise ProjectionError("horizon must be at least one period")
    obs = series.values
    step = series.step
    annual = series.mode == ANNUAL
    n = len(params["d"])
    d, d1, d2, d3, d4 = (params[k] for k in ("d", "delta1", "delta2", "delta3", "delta4"))
    sigma0, S, a, b, c0 = params["var"]
    sd_floor = params["sd_floor"]
    phi = params.get("phi", np.zeros(n))
    mu, rho, sig_eps = params["mu"], params["rho"], params["sigma_eps"]

    def g(f):
        return decrement(f, d, d1, d2, d3, d4)

    n_obs = len(obs)
    f = np.full(n, obs[-1])
    f_prev = np.full(n, obs[-2]) if n_obs >= 2 else None
    prev_dec = np.full(n, obs[-2] - obs[-1]) if n_obs >= 2 else None
    in_p3 = np.full(n, seg.phase3_start_index is not None) | (f < d4)

    # annual mode decides Phase III entry on five-year block means
    history = np.tile(obs, (n, 1)) if annual else None

    values = np.empty((n, horizon))
    phases = np.empty((n, horizon), dtype=int)
    last_year = int(series.years[-1])
    for k in range(horizon):
        year = last_year + k * step
        if annual and prev_dec is not None:
            carried = prev_dec - g(f + prev_dec)
            dec_mean = g(f) + phi * carried
        else:
            dec_mean = g(f)
        mean2 = f - dec_mean
        sd2 = sd_scale(f, year, sigma0, S, a, b, c0, sd_floor)
        mean3 = mu + rho * (f - mu)
        mean = np.where(in_p3, mean3, mean2)
        sd = np.where(in_p3, sig_eps, sd2)

        new = mean + sd * rng.standard_normal(n)
        low = new < floor
        for _ in range(FLOOR_ATTEMPTS):
            if not low.any():
                break
            new[low] = mean[low] + sd[low] * rng.standard_normal(int(low.sum()))
            low = new < floor
        new = np.maximum(new, floor)

        # phase switching for trajectories still in Phase II
        enter = new < d4
        if annual:
            history = np.concatenate([history, new[:, None]], axis=1)
            length = history.shape[1]
            if length % 5 == 0 and length >= 15:
                blocks = history[:, :length].reshape(n, -1, 5).mean(axis=2)
                m = blocks.shape[1] - 3
                if 5 * m >= seg.phase2_start_index:
                    x, y, z = blocks[:, -3], blocks[:, -2], blocks[:, -1]
                    enter |= (x < y) & (y < z) & (z < threshold)
        elif f_prev is not None and n_obs + k - 2 >= seg.phase2_start_index:
            enter |= (f_prev < f) & (f < new) & (new < threshold)
        in_p3 = in_p3 | enter

        values[:, k] = new
        phases[:, k] = np.where(in_p3, 3, 2)
        prev_dec = f - new
        f_prev, f = f, new
    return values, phases


def simulate_trajectory(series: TfrSeries, seg: PhaseSegmentation, draw: PosteriorDraw, horizon: int,
                        rng, threshold: float = DEFAULT_PHASE3_THRESHOLD, floor: float = TFR_FLOOR) -> Trajectory:
    """Simulate one future path of ``series`` under a single posterior draw.

    The path continues the Phase II decline with heteroscedastic noise until
    either the recovery rule fires on the observed-plus-simulated values or
    the level drops below ``delta4``; from then on it follows the Phase III
    autoregression.
    """
    values, phases = simulate_trajectories(series, seg, _draw_arrays(draw), horizon, rng, threshold, floor)
    years = series.years[-1] + series.step * np.arange(1, horizon + 1)
    return Trajectory(series.country_id, years, values[0], phases[0], draw.index)


def check_convergence(chainsets, bound: float = 1.1) -> dict:
    """R-hat of every pool-level coordinate; raises ConvergenceError above ``bound``."""
    out = {}
    for cs in chainsets:
        out.update({f"{cs.kind}.{k}": v for k, v in gelman_rubin(cs, pool_level_names(cs)).items()})
    bad = {k: v for k, v in out.items() if np.isfinite(v) and v >= bound or v == np.inf}
    if bad:
        raise ConvergenceError(f"R-hat above {bound}: {bad}")
    return out


def country_params(cid: str, phase2: ChainSet, phase3: ChainSet, idx: np.ndarray, rng) -> dict:
    """Parameter arrays for the draws ``idx`` of one country."""
    if f"d[{cid}]" not in phase2._index:
        raise ProjectionError(f"no Phase II parameter block for {cid}")
    p2 = [a[idx % len(a)] for a in phase2_params_arrays(phase2, cid)]
    var, floor = variance_arrays(phase2)
    var = tuple(v[idx % len(v)] for v in var)
    phi = phase2.flat("phi")[idx % phase2.n_draws] if phase2.has("phi") else np.zeros(len(idx))
    j = idx % phase3.n_draws
    if phase3.has(f"mu[{cid}]"):
        mu = phase3.flat(f"mu[{cid}]")[j]
        rho = phase3.flat(f"rho[{cid}]")[j]
    else:
        mu, rho = predictive_draws(phase3.flat("mu_bar")[j], phase3.flat("sigma_mu")[j],
                                   phase3.flat("rho_bar")[j], phase3.flat("sigma_rho")[j], rng)
    return {
        "d": p2[0], "delta1": p2[1], "delta2": p2[2], "delta3": p2[3], "delta4": p2[4],
        "var": var, "sd_floor": floor, "phi": phi,
        "mu": np.asarray(mu), "rho": np.asarray(rho), "sigma_eps": phase3.flat("sigma_eps")[j],
    }


def project(store, segments: dict, phase2: ChainSet, phase3: ChainSet, horizon: int,
            n_trajectories: int = 2000, levels=DEFAULT_LEVELS, seed: int = 1,
            countries=None, rhat_bound: float = 1.1, force: bool = False,
            threshold: float = DEFAULT_PHASE3_THRESHOLD, min_trajectories: int = MIN_TRAJECTORIES,
            strict: bool = False, keep_trajectories: bool = False) -> dict:
    """Quantile fans for each country over ``horizon`` future periods.

    Trajectory ``i`` uses recorded draw ``i mod n_draws``. Quantiles use
    linear interpolation between order statistics (Hyndman-Fan type 7).
    Each country draws from its own labelled random stream, so results do
    not depend on which other countries are projected.
    """
    if n_trajectories < min_trajectories:
        msg = f"{n_trajectories} trajectories is below the recommended minimum {min_trajectories}"
        if strict:
            raise ProjectionError(msg)
        logger.warning(msg)
    rhat = None
    if force:
        try:
            rhat = check_convergence([phase2, phase3], rhat_bound)
        except ConvergenceError as exc:
            logger.warning("projecting despite failed diagnostics: %s", exc)
    else:
        rhat = check_convergence([phase2, phase3], rhat_bound)

    levels = tuple(levels)
    if countries is None:
        countries = phase2.countries
    results = {}
    idx = np.arange(n_trajectories)
    for cid in countries:
        series = store[cid]
        rng = rngmod.stream(seed, f"project/{cid}")
        params = country_params(cid, phase2, phase3, idx, rng)
        values, phases = simulate_trajectories(series, segments[cid], params, horizon, rng, threshold)
        fan = np.quantile(values, levels, axis=0, method="linear")
        years = series.years[-1] + series.step * np.arange(1, horizon + 1)
        results[cid] = ProjectionResult(
            cid, years, levels, fan, n_trajectories,
            {"seed": seed, "horizon": horizon, "rhat": rhat, "forced": force, "threshold": threshold},
            values if keep_trajectories else None, phases if keep_trajectories else None,
        )
    return results


def fan_csv(result: ProjectionResult) -> str:
    cols = ["period_start"] + [f"q{_level_label(l)}" for l in result.levels]
    lines = [",".join(cols)]
    for j, y in enumerate(result.years):
        lines.append(",".join([str(int(y))] + [f"{result.fan[i, j]:.6f}" for i in range(len(result.levels))]))
    return "\n".join(lines) + "\n"


def _level_label(level: float) -> str:
    # 0.025 -> 025, 0.1 -> 10, 0.5 -> 50, 0.975 -> 975
    s = f"{level:.3f}".split(".")[1].rstrip("0")
    return s if len(s) >= 2 else s + "0"
