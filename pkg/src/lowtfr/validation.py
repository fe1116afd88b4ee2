"""Goodness of fit of the Phase II model, hold-out validation and synthetic data."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngmod
from .data import ANNUAL, FIVE_YEAR, DataError, DataStore, TfrSeries, period_length
from .kernels import (
    AnnualParams,
    Phase2Params,
    Phase3Params,
    VarianceParams,
    decrement,
    double_logistic_decrement,
    error_sd,
    phase3_step_mean,
    sd_scale,
)
from .mcmc import ChainSet, Phase3Hyper, phase2_params_arrays, predictive_country_draw, variance_arrays
from .phases import DEFAULT_PHASE3_THRESHOLD, find_recovery_start
from .pipeline import PipelineConfig, fit
from .projection import horizon_to, project


class ValidationError(ValueError):
    pass


def _paired(observed, other):
    observed = np.asarray(observed, dtype=float)
    other = np.asarray(other, dtype=float)
    if len(observed) == 0:
        raise ValidationError("empty input")
    if len(observed) != len(other):
        raise ValidationError(f"length mismatch: {len(observed)} vs {len(other)}")
    return observed, other


def coverage(observed, intervals) -> float:
    """Share of observations inside their closed (lo, hi) interval."""
    observed = np.asarray(observed, dtype=float)
    intervals = np.asarray(intervals, dtype=float).reshape(-1, 2)
    observed, _ = _paired(observed, intervals[:, 0])
    inside = (intervals[:, 0] <= observed) & (observed <= intervals[:, 1])
    return float(inside.mean())


def rmse(observed, predicted) -> float:
    o, p = _paired(observed, predicted)
    return float(np.sqrt(np.mean((o - p) ** 2)))


def mae(observed, predicted) -> float:
    o, p = _paired(observed, predicted)
    return float(np.mean(np.abs(o - p)))


@dataclass
class FitRecord:
    country_id: str
    period_start: int
    previous: float
    observed: float
    predicted: float
    lower: float
    upper: float

    @property
    def inside(self) -> bool:
        return self.lower <= self.observed <= self.upper


@dataclass
class FitReport:
    window: str
    coverage: dict
    counts: dict
    total_coverage: float
    total_rmse: float
    total_mae: float
    records: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "total_coverage": self.total_coverage,
            "total_rmse": self.total_rmse,
            "total_mae": self.total_mae,
            "coverage": self.coverage,
            "counts": self.counts,
            "records": [dict(asdict(r), inside=r.inside) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self, highlight=("PRI", "KOR", "CUB"), names=None) -> str:
        names = names or {}
        rows = [
            ("Total Coverage 95%", f"{100 * self.total_coverage:.0f}%"),
            ("Total Root Mean Square Error (RMSE)", f"{self.total_rmse:.4f}"),
            ("Total Mean Absolute Error (MAE)", f"{self.total_mae:.4f}"),
        ]
        for cid in highlight:
            if cid in self.coverage:
                rows.append((f"{names.get(cid, cid)} 95% Coverage", f"{100 * self.coverage[cid]:.0f}%"))
        width = max(len(r[0]) for r in rows) + 2
        title = f"Goodness of fit of the double logistic function ({self.window})"
        out = [title, "-" * len(title)]
        out += [f"{label:<{width}}{value}" for label, value in rows]
        return "\n".join(out) + "\n"


def fit_diagnostics(store: DataStore, chains: ChainSet, window=(1950, 2020), seed: int = 1,
                    level: float = 0.95) -> FitReport:
    """One-step-ahead posterior predictive check of every Phase II transition in ``window``.

    For a transition f_t -> f_{t+1}, each recorded draw contributes its step
    mean plus one Gaussian distortion; the central ``level`` interval of
    those predictive values is compared with the observation, and the median
    of the step means is the point prediction.
    """
    start, end = window
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    var, sd_floor = variance_arrays(chains)
    phi = chains.flat("phi") if chains.has("phi") else None
    records = []
    for cid in chains.countries:
        s = store[cid]
        step = s.step
        vals, years = s.values, s.years
        p2, p3 = chains.meta["segments"][cid]
        last = p3 if p3 is not None else len(vals) - 1
        d, d1, d2, d3, d4 = phase2_params_arrays(chains, cid)
        rng = rngmod.stream(seed, f"fit/{cid}")
        for t in range(p2, last):
            if years[t] < start or years[t + 1] + step > end:
                continue
            f = vals[t]
            g = decrement(f, d, d1, d2, d3, d4)
            if phi is not None and t > p2:
                prev_resid = (vals[t - 1] - f) - decrement(vals[t - 1], d, d1, d2, d3, d4)
                g = g + phi * prev_resid
            mean = f - g
            sd = sd_scale(f, years[t], *var, sd_floor)
            pred = mean + sd * rng.standard_normal(len(mean))
            lo, hi = np.quantile(pred, (lo_q, hi_q))
            records.append(FitRecord(cid, int(years[t]), float(f), float(vals[t + 1]),
                                     float(np.median(mean)), float(lo), float(hi)))
    if not records:
        raise ValidationError(f"no Phase II transitions inside window {window}")
    return summarize_records(records, f"{start}-{end}")


def summarize_records(records, window: str) -> FitReport:
    by_country: dict = {}
    for r in records:
        by_country.setdefault(r.country_id, []).append(r)
    cov = {c: float(np.mean([r.inside for r in rs])) for c, rs in by_country.items()}
    counts = {c: len(rs) for c, rs in by_country.items()}
    obs = [r.observed for r in records]
    pred = [r.predicted for r in records]
    total_cov = coverage(obs, [(r.lower, r.upper) for r in records])
    return FitReport(window, cov, counts, total_cov, rmse(obs, pred), mae(obs, pred), list(records))


# --------------------------------------------------------------------------
# hold-out validation

@dataclass
class HoldoutRow:
    period_start: int
    observed: float
    q025: float
    q50: float
    q975: float

    @property
    def inside(self) -> bool:
        return self.q025 <= self.observed <= self.q975


@dataclass
class HoldoutReport:
    cutoff: int
    rows: dict  # country -> list[HoldoutRow]
    groups: dict  # country -> {label: all rows inside}
    coverage: dict  # country -> share of held-out periods inside
    pool: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    fans: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "pool": self.pool,
            "config": self.config,
            "coverage": self.coverage,
            "groups": self.groups,
            "rows": {c: [dict(asdict(r), inside=r.inside) for r in rs] for c, rs in self.rows.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        out = [f"Hold-out validation, estimation data up to {self.cutoff}"]
        for cid, rows in self.rows.items():
            out.append(f"\n{cid}  (coverage {100 * self.coverage[cid]:.0f}%)")
            out.append(f"{'period':>8} {'observed':>9} {'2.5%':>7} {'50%':>7} {'97.5%':>7}  inside")
            for r in rows:
                out.append(f"{r.period_start:>8} {r.observed:>9.2f} {r.q025:>7.2f} {r.q50:>7.2f} "
                           f"{r.q975:>7.2f}  {'yes' if r.inside else 'NO'}")
            for label, ok in self.groups[cid].items():
                out.append(f"  {label}: {'inside' if ok else 'outside'} the 95% interval")
        return "\n".join(out) + "\n"


def decade_label(period_start: int, step: int) -> str:
    end = period_start + step
    first = ((end - 1) // 10) * 10 + 1
    return f"{first}-{first + 9}"


def cross_validate(store: DataStore, cutoff: int, config: PipelineConfig, countries=None) -> HoldoutReport:
    """Estimate on periods ending by ``cutoff`` and score the later ones.

    Only the truncated store is handed to estimation and projection, so no
    observation after the cutoff can influence the fans.
    """
    step = period_length(store.mode)
    first = min(int(s.years[0]) for s in store.series.values())
    last = max(int(s.years[-1]) for s in store.series.values())
    if cutoff - step < first or cutoff > last:
        raise ValidationError(f"cutoff {cutoff} outside the observed range {first}-{last + step}")
    train = store.truncate(cutoff - step)
    result = fit(train, config)
    if countries is None:
        countries = sorted(result.pool.ids)
    horizon = max(len(store[c]) - len(train[c]) for c in countries)
    if horizon < 2:
        raise ValidationError("need at least two observed periods after the cutoff")
    fans = project(train, result.segments, result.phase2, result.phase3, horizon,
                   n_trajectories=config.trajectories, seed=config.seed, countries=countries,
                   rhat_bound=config.rhat_bound, force=config.force,
                   threshold=config.phase3_threshold)
    rows, groups, cov = {}, {}, {}
    for cid in countries:
        fan = fans[cid]
        held = [o for o in store[cid].observations if o.period_start >= cutoff]
        rs = []
        for o in held:
            if o.period_start not in fan.years:
                continue
            rs.append(HoldoutRow(o.period_start, o.tfr, fan.at(o.period_start, 0.025),
                                 fan.at(o.period_start, 0.5), fan.at(o.period_start, 0.975)))
        rows[cid] = rs
        g: dict = {}
        for r in rs:
            label = decade_label(r.period_start, step)
            g[label] = g.get(label, True) and r.inside
        groups[cid] = g
        cov[cid] = float(np.mean([r.inside for r in rs])) if rs else float("nan")
    return HoldoutReport(cutoff, rows, groups, cov, sorted(result.pool.ids), config.echo(), fans)


# --------------------------------------------------------------------------
# synthetic panels

@dataclass
class SyntheticTruth:
    """Ground truth for :func:`generate_synthetic`.

    Leave ``phase2`` as None for panels that are in Phase III from the
    first period.
    """

    phase3_hyper: Phase3Hyper
    phase2: Phase2Params | None = None
    variance: VarianceParams = field(default_factory=VarianceParams)
    start_level: float | None = None
    phi: float = 0.0
    threshold: float = DEFAULT_PHASE3_THRESHOLD


def generate_synthetic(truth: SyntheticTruth, n_countries: int, n_periods: int, seed: int,
                       start_year: int = 1950, mode: str = FIVE_YEAR):
    """Forward-simulate a panel from the model; returns ``(store, manifest)``.

    The manifest records each country's (mu, rho) and the index where it
    entered Phase III.
    """
    step = period_length(mode)
    series, countries = {}, {}
    for c in range(n_countries):
        cid = f"S{c:03d}"
        rng = rngmod.stream(seed, f"synthetic/{cid}")
        q = predictive_country_draw(truth.phase3_hyper, rng)
        p = truth.phase2
        f0 = truth.start_level if truth.start_level is not None else (p.start_level if p else q.mu)
        values = [f0]
        in_p3 = p is None
        entry = 0 if in_p3 else None
        prev_resid = 0.0
        for t in range(n_periods - 1):
            f = values[-1]
            year = start_year + t * step
            if in_p3:
                new = float(phase3_step_mean(f, q) + q.sigma_eps * rng.standard_normal())
            else:
                g = float(double_logistic_decrement(f, p))
                sd = float(error_sd(f, year, truth.variance))
                resid = truth.phi * prev_resid + sd * rng.standard_normal() if mode == ANNUAL else sd * rng.standard_normal()
                new = f - g - resid
                prev_resid = resid
            new = max(new, 0.05)
            values.append(new)
            if not in_p3:
                m = find_recovery_start(values, truth.threshold, max(len(values) - 3, 0))
                if new < p.delta4 or m is not None:
                    in_p3 = True
                    entry = len(values) - 1 if m is None else m
        series[cid] = TfrSeries.from_values(cid, values, start_year, mode=mode)
        countries[cid] = {"mu": q.mu, "rho": q.rho, "phase3_entry": entry}
    manifest = {
        "seed": seed,
        "mode": mode,
        "truth": {
            "phase3_hyper": asdict(truth.phase3_hyper),
            "phase2": None if truth.phase2 is None else asdict(truth.phase2),
            "variance": asdict(truth.variance),
            "phi": truth.phi,
        },
        "countries": countries,
    }
    return DataStore(series, source=f"synthetic(seed={seed})"), manifest
