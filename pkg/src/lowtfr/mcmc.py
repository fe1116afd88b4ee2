"""Metropolis-within-Gibbs estimation of the Phase II and Phase III hierarchies.

Phase II countries carry four unconstrained coordinates

    x_d   -> d        = d_lo + (d_hi - d_lo) * logistic(x_d)
    x_4   -> delta4   = 0.5 + (min(2.5, U - 0.1) - 0.5) * logistic(x_4)
    s1,s2 -> (delta1, delta2, delta3) = softmax(s1, s2, 0) * (U - delta4)

where ``U`` is the observed TFR at the start of the country's decline. Each
coordinate is normal across countries with a pool-level mean (prior
U(-5, 5)) and sd (prior U(0, 2)).

Phase III countries carry (mu_c, rho_c) drawn from normals truncated to
[0, inf) and [0, 1) around pool-level means, with uniform hyperpriors on
the pool-level parameters.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, gammainccinv, gammaincc, log_ndtr, ndtr, ndtri

from . import rng as rngmod
from .data import ANNUAL, CountrySet, DataError, DataStore
from .kernels import Phase3Params, VarianceParams, decrement, normal_logpdf, sd_scale
from .phases import DEFAULT_PHASE3_THRESHOLD, PhaseSegmentation, classify_phases

logger = logging.getLogger(__name__)

PHASE2_COORDS = ("x_d", "x_4", "s1", "s2")
N_COORDS = len(PHASE2_COORDS)
VARIANCE_NAMES = ("sigma0", "S", "a", "b", "c0")
PHASE3_HYPER_NAMES = ("mu_bar", "sigma_mu", "rho_bar", "sigma_rho", "sigma_eps")

HYPER_MEAN_BOUNDS = (-5.0, 5.0)
HYPER_SD_UPPER = 2.0
DELTA4_BOUNDS = (0.5, 2.5)
D_BOUNDS_FIVE_YEAR = (0.25, 2.5)

# uniform priors of the variance function; sigma0's upper bound is mode dependent
VARIANCE_BOUNDS = {"S": (0.5, 8.0), "a": (0.0, 0.5), "b": (0.0, 0.5), "c0": (1.0, 5.0)}
SIGMA0_UPPER = {"five-year": 0.5, "annual": 0.2}

PHASE3_BOUNDS = {
    "mu_bar": (0.0, 2.1),
    "sigma_mu": (0.0, 0.5),
    "rho_bar": (0.0, 1.0),
    "sigma_rho": (0.0, 0.289),
    "sigma_eps": (0.0, 0.5),
}

ACCEPT_TARGET = (0.25, 0.45)


class McmcError(RuntimeError):
    """Raised when a sampler cannot be set up or produces invalid output."""


class ChainFileError(McmcError):
    """Raised for missing, corrupt or tampered chain files."""


@dataclass(frozen=True)
class Phase3Hyper:
    mu_bar: float
    sigma_mu: float
    rho_bar: float
    sigma_rho: float
    sigma_eps: float

    def __post_init__(self):
        for name, (lo, hi) in PHASE3_BOUNDS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")


@dataclass
class McmcConfig:
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 10
    chain_count: int = 3
    seed: int = 20220101
    pool: CountrySet | None = None
    adapt_window: int = 100
    phase3_threshold: float = DEFAULT_PHASE3_THRESHOLD
    variance: VarianceParams | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.iterations <= self.burn_in:
            raise ValueError("iterations must exceed burn_in")
        if self.chain_count < 2:
            raise ValueError("at least two chains are required")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    def echo(self) -> dict:
        out = {
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "chain_count": self.chain_count,
            "seed": self.seed,
            "adapt_window": self.adapt_window,
            "phase3_threshold": self.phase3_threshold,
            "variance": None if self.variance is None else asdict(self.variance),
        }
        if self.pool is not None:
            out["pool"] = {"ids": sorted(self.pool.ids), "criterion": self.pool.criterion}
        return out


@dataclass
class ChainSet:
    """Recorded draws of several chains: ``draws[chain, draw, coordinate]``."""

    kind: str
    names: list
    draws: np.ndarray
    burn_in: int
    thin: int
    seed: int
    acceptance_rates: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ValueError("draws must have shape (chains, draws, len(names))")
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def has(self, name) -> bool:
        return name in self._index

    def column(self, name) -> np.ndarray:
        """Draws of one coordinate, shape (chains, draws)."""
        try:
            return self.draws[:, :, self._index[name]]
        except KeyError:
            raise KeyError(f"{self.kind} chains have no coordinate {name!r}") from None

    def flat(self, name) -> np.ndarray:
        return self.column(name).reshape(-1)

    @property
    def countries(self) -> list:
        return list(self.meta.get("countries", []))


# --------------------------------------------------------------------------
# small samplers

def truncnorm_draw(mean, sd, lo, hi, rng, size=None):
    """Inverse-CDF draw from N(mean, sd^2) truncated to [lo, hi)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    shape = np.broadcast(mean, sd).shape if size is None else size
    u = rng.random(shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = (lo - mean) / sd
        beta = (hi - mean) / sd
        # work in whichever tail keeps the cdf values away from 1
        flip = alpha > 0
        a = np.where(flip, -beta, alpha)
        b = np.where(flip, -alpha, beta)
        pa, pb = ndtr(a), ndtr(b)
        z = ndtri(pa + u * (pb - pa))
        z = np.clip(z, a, b)
        z = np.where(flip, -z, z)
        x = mean + sd * z
    x = np.where(sd > 0, x, np.clip(mean, lo, hi))
    return x if x.shape else float(x)


def sample_sd_uniform_prior(ss, n, upper, rng, current=None):
    """Draw an sd given ``n`` zero-mean normal residuals with sum of squares ``ss``.

    The sd has a U(0, upper) prior, so its square follows an inverse gamma
    with shape (n - 1) / 2 and scale ss / 2 truncated at upper**2.
    """
    if n < 2:
        # shape would be <= 0: fall back to a random-walk step on the sd
        cur = 0.5 * upper if current is None else current
        prop = cur + 0.1 * upper * rng.standard_normal()
        if not 0 < prop < upper:
            return cur

        def lp(s):
            return -n * np.log(s) - ss / (2 * s * s)

        return prop if np.log(rng.random()) < lp(prop) - lp(cur) else cur
    shape = 0.5 * (n - 1)
    scale = 0.5 * max(ss, 1e-300)
    cdf_upper = gammaincc(shape, scale / upper**2)
    if cdf_upper <= 0:
        return upper
    u = rng.random() * cdf_upper
    u = max(u, 1e-300)
    s2 = scale / gammainccinv(shape, u)
    return float(min(np.sqrt(s2), upper))


def log_tn_norm_pos(mean, sd):
    """log P(X >= 0) for X ~ N(mean, sd^2)."""
    return log_ndtr(mean / sd)


def log_tn_norm_unit(mean, sd):
    """log P(0 <= X < 1) for X ~ N(mean, sd^2)."""
    hi = ndtr((1.0 - mean) / sd)
    lo = ndtr(-mean / sd)
    return np.log(np.maximum(hi - lo, 1e-300))


class _Adapter:
    """Random-walk proposal scale (and optionally covariance) for ``n`` parallel blocks.

    Adapts only while ``active``; frozen afterwards.
    """

    def __init__(self, n, dim, init_scale, window, burn_in):
        self.n, self.dim = n, dim
        self.scale = np.full(n, float(init_scale))
        self.chol = np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()
        self.window = window
        self.burn_in = burn_in
        self.acc_window = np.zeros(n)
        self.tries_window = 0
        self.acc_total = np.zeros(n)
        self.tries_total = 0
        self.history = [] if dim > 1 else None
        self.cov_checkpoints = {int(burn_in * 0.4), int(burn_in * 0.7)} if burn_in >= 500 else set()

    def propose(self, x, rng):
        z = rng.standard_normal((self.n, self.dim))
        step = np.einsum("nij,nj->ni", self.chol, z)
        return x + self.scale[:, None] * step

    def record(self, accepted, it, state=None):
        if it < self.burn_in:
            self.acc_window += accepted
            self.tries_window += 1
            if self.history is not None and state is not None and it >= self.burn_in * 0.2:
                self.history.append(np.array(state, copy=True))
            if self.tries_window >= self.window:
                rate = self.acc_window / self.tries_window
                self.scale = np.where(rate < ACCEPT_TARGET[0], self.scale * 0.8, self.scale)
                self.scale = np.where(rate > ACCEPT_TARGET[1], self.scale * 1.25, self.scale)
                self.acc_window[:] = 0
                self.tries_window = 0
            if it in self.cov_checkpoints and self.history is not None and len(self.history) > 50:
                self._update_cov()
        else:
            self.acc_total += accepted
            self.tries_total += 1
            self.history = None

    def _update_cov(self):
        h = np.asarray(self.history)  # (T, n, dim)
        h = h - h.mean(axis=0)
        cov = np.einsum("tni,tnj->nij", h, h) / max(len(h) - 1, 1)
        cov += 1e-8 * np.eye(self.dim)
        new = np.empty_like(self.chol)
        for i in range(self.n):
            try:
                new[i] = np.linalg.cholesky(cov[i])
            except np.linalg.LinAlgError:
                new[i] = self.chol[i]
        self.chol = new * (2.38 / np.sqrt(self.dim))
        self.scale[:] = 1.0

    def rates(self):
        if self.tries_total == 0:
            return np.full(self.n, np.nan)
        return self.acc_total / self.tries_total


# --------------------------------------------------------------------------
# Phase II

def _segments_for(store, ids, segments, threshold):
    out = {}
    for cid in ids:
        if segments is not None and cid in segments:
            out[cid] = segments[cid]
        else:
            out[cid] = classify_phases(store[cid], threshold)
    return out


def _pool_ids(store: DataStore, pool: CountrySet | None):
    if pool is None:
        ids = sorted(store.series)
    else:
        missing = [c for c in pool.ids if c not in store]
        if missing:
            raise McmcError(f"pool countries missing from the data: {sorted(missing)}")
        ids = sorted(pool.ids)
    if not ids:
        raise McmcError("empty pool")
    return ids


class Phase2Model:
    """Flattened Phase II transitions of the pooled countries."""

    def __init__(self, store: DataStore, config: McmcConfig, segments=None):
        self.ids = _pool_ids(store, config.pool)
        self.mode = store.mode
        self.annual = self.mode == ANNUAL
        self.segments = _segments_for(store, self.ids, segments, config.phase3_threshold)
        scale = 0.2 if self.annual else 1.0
        self.d_bounds = (D_BOUNDS_FIVE_YEAR[0] * scale, D_BOUNDS_FIVE_YEAR[1] * scale)
        self.sigma0_upper = SIGMA0_UPPER[self.mode]
        self.fixed_variance = config.variance

        idx, f_now, f_next, year, prev = [], [], [], [], []
        U = []
        for ci, cid in enumerate(self.ids):
            s = store[cid]
            seg = self.segments[cid]
            vals, yrs = s.values, s.years
            end = seg.phase3_start_index if seg.phase3_start_index is not None else len(vals) - 1
            ts = list(range(seg.phase2_start_index, end))
            if not ts:
                raise McmcError(f"{cid}: no Phase II transitions to estimate from")
            U.append(vals[seg.phase2_start_index])
            for k, t in enumerate(ts):
                prev.append(len(idx) - 1 if k > 0 else -1)
                idx.append(ci)
                f_now.append(vals[t])
                f_next.append(vals[t + 1])
                year.append(yrs[t])
        self.idx = np.asarray(idx)
        self.f_now = np.asarray(f_now, dtype=float)
        self.f_next = np.asarray(f_next, dtype=float)
        self.year = np.asarray(year)
        self.prev = np.asarray(prev)
        self.has_prev = self.prev >= 0
        self.prev_safe = np.where(self.has_prev, self.prev, 0)
        self.U = np.asarray(U, dtype=float)
        self.n = len(self.ids)
        self.delta4_upper = np.minimum(DELTA4_BOUNDS[1], self.U - 0.1)
        if np.any(self.delta4_upper <= DELTA4_BOUNDS[0]):
            bad = [c for c, u in zip(self.ids, self.delta4_upper) if u <= DELTA4_BOUNDS[0]]
            raise McmcError(f"transition start level too low for the Phase II model: {bad}")
        self.decline = self.f_now - self.f_next
        self.pre1975 = self.year < 1975

    def transform(self, X):
        """Raw coordinates (n, 4) -> (d, delta1, delta2, delta3, delta4), each shape (n,)."""
        lo, hi = self.d_bounds
        d = lo + (hi - lo) * expit(X[:, 0])
        d4 = DELTA4_BOUNDS[0] + (self.delta4_upper - DELTA4_BOUNDS[0]) * expit(X[:, 1])
        e = np.exp(np.stack([X[:, 2], X[:, 3], np.zeros(len(X))], axis=1))
        shares = e / e.sum(axis=1, keepdims=True)
        rest = (self.U - d4)[:, None] * shares
        return d, rest[:, 0], rest[:, 1], rest[:, 2], d4

    def transition_loglik(self, X, var, phi=0.0):
        d, d1, d2, d3, d4 = self.transform(X)
        i = self.idx
        g = decrement(self.f_now, d[i], d1[i], d2[i], d3[i], d4[i])
        resid = self.decline - g
        if self.annual and phi:
            resid = resid - phi * np.where(self.has_prev, resid[self.prev_safe], 0.0)
        sd = sd_scale(self.f_now, self.year, *var, sd_floor=self.sd_floor)
        return normal_logpdf(resid, 0.0, sd)

    @property
    def sd_floor(self):
        return self.fixed_variance.sd_floor if self.fixed_variance is not None else VarianceParams().sd_floor

    def country_loglik(self, X, var, phi=0.0):
        return np.bincount(self.idx, self.transition_loglik(X, var, phi), minlength=self.n)

    def variance_in_support(self, var):
        sigma0, S, a, b, c0 = var
        if not 0 < sigma0 < self.sigma0_upper:
            return False
        for name, val in zip(("S", "a", "b", "c0"), (S, a, b, c0)):
            lo, hi = VARIANCE_BOUNDS[name]
            if not lo <= val < hi:
                return False
        return True

    def names(self):
        names = []
        for cid in self.ids:
            names += [f"d[{cid}]", f"delta1[{cid}]", f"delta2[{cid}]", f"delta3[{cid}]", f"delta4[{cid}]"]
        names += [f"mean.{c}" for c in PHASE2_COORDS]
        names += [f"sd.{c}" for c in PHASE2_COORDS]
        names += list(VARIANCE_NAMES)
        if self.annual:
            names.append("phi")
        names.append("logpost")
        return names


def _country_prior(X, chi, psi):
    return normal_logpdf(X, chi, psi).sum(axis=1)


def _phase2_chain(model: Phase2Model, config: McmcConfig, chain: int):
    rng = rngmod.stream(config.seed, f"phase2/chain/{chain}")
    n = model.n
    X = 0.3 * rng.standard_normal((n, N_COORDS))
    chi = np.zeros(N_COORDS)
    psi = np.ones(N_COORDS)
    if model.fixed_variance is not None:
        fv = model.fixed_variance
        var = np.array([fv.sigma0, fv.S, fv.a, fv.b, fv.c0])
    else:
        default = VarianceParams()
        var = np.array([min(default.sigma0, 0.5 * model.sigma0_upper), default.S, default.a, default.b, default.c0])
    phi = 0.5 if model.annual else 0.0

    ll_c = model.country_loglik(X, var, phi)
    if not np.all(np.isfinite(ll_c)):
        raise McmcError("non-finite Phase II log-likelihood at initialisation")

    country = _Adapter(n, N_COORDS, 0.5, config.adapt_window, config.burn_in)
    var_ad = _Adapter(1, 5, 0.02, config.adapt_window, config.burn_in)
    var_ad.chol[0] = np.diag([0.01, 0.3, 0.01, 0.01, 0.1])
    var_ad.scale[:] = 1.0
    phi_ad = _Adapter(1, 1, 0.1, config.adapt_window, config.burn_in)
    names = model.names()
    n_keep = (config.iterations - config.burn_in) // config.thin
    out = np.empty((n_keep, len(names)))
    k = 0
    lo_m, hi_m = HYPER_MEAN_BOUNDS

    for it in range(config.iterations):
        # country blocks, updated in parallel since they are conditionally independent
        Xp = country.propose(X, rng)
        ll_p = model.country_loglik(Xp, var, phi)
        log_ratio = ll_p + _country_prior(Xp, chi, psi) - ll_c - _country_prior(X, chi, psi)
        acc = np.log(rng.random(n)) < np.where(np.isfinite(log_ratio), log_ratio, -np.inf)
        X = np.where(acc[:, None], Xp, X)
        ll_c = np.where(acc, ll_p, ll_c)
        country.record(acc.astype(float), it, X)

        # pool-level means and sds (exact conditional draws)
        for j in range(N_COORDS):
            col = X[:, j]
            chi[j] = truncnorm_draw(col.mean(), psi[j] / np.sqrt(n), lo_m, hi_m, rng)
            ss = float(np.sum((col - chi[j]) ** 2))
            psi[j] = sample_sd_uniform_prior(ss, n, HYPER_SD_UPPER, rng, psi[j])

        # variance function
        if model.fixed_variance is None:
            vp = var_ad.propose(var[None, :], rng)[0]
            if model.variance_in_support(vp):
                llv = model.country_loglik(X, vp, phi)
                ratio = llv.sum() - ll_c.sum()
                ok = bool(np.log(rng.random()) < ratio)
            else:
                rng.random()
                ok = False
            if ok:
                var, ll_c = vp, llv
            var_ad.record(np.array([float(ok)]), it, var[None, :])

        if model.annual:
            pp = float(phi_ad.propose(np.array([[phi]]), rng)[0, 0])
            if 0 <= pp < 1:
                llp = model.country_loglik(X, var, pp)
                ok = bool(np.log(rng.random()) < llp.sum() - ll_c.sum())
            else:
                rng.random()
                ok = False
            if ok:
                phi, ll_c = pp, llp
            phi_ad.record(np.array([float(ok)]), it)

        if it >= config.burn_in and (it - config.burn_in) % config.thin == config.thin - 1 and k < n_keep:
            params = np.stack(model.transform(X), axis=1)  # (n, 5)
            logpost = float(ll_c.sum() + _country_prior(X, chi, psi).sum())
            row = [params.reshape(-1), chi, psi, var]
            if model.annual:
                row.append([phi])
            row.append([logpost])
            out[k] = np.concatenate(row)
            k += 1

    rates = {f"phase2.country[{cid}]": float(r) for cid, r in zip(model.ids, country.rates())}
    if model.fixed_variance is None:
        rates["phase2.variance"] = float(var_ad.rates()[0])
    if model.annual:
        rates["phase2.phi"] = float(phi_ad.rates()[0])
    return out, rates


def _run_chains(fn, model, config):
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            results = list(ex.map(fn, [model] * config.chain_count, [config] * config.chain_count,
                                  range(config.chain_count)))
    else:
        results = [fn(model, config, c) for c in range(config.chain_count)]
    draws = np.stack([r[0] for r in results])
    rates = {}
    for key in results[0][1]:
        rates[key] = float(np.mean([r[1][key] for r in results]))
    return draws, rates


def run_phase2_mcmc(store: DataStore, config: McmcConfig, segments=None) -> ChainSet:
    """Sample the Phase II hierarchy for the countries in ``config.pool``.

    ``segments`` optionally overrides the phase classification for some
    countries (mapping country id -> PhaseSegmentation).
    """
    model = Phase2Model(store, config, segments)
    draws, rates = _run_chains(_phase2_chain, model, config)
    if not np.all(np.isfinite(draws)):
        raise McmcError("non-finite values in Phase II draws")
    meta = {
        "countries": model.ids,
        "mode": model.mode,
        "start_levels": dict(zip(model.ids, map(float, model.U))),
        "segments": {c: [s.phase2_start_index, s.phase3_start_index] for c, s in model.segments.items()},
        "variance_fixed": config.variance is not None,
        "sd_floor": model.sd_floor,
        "config": config.echo(),
    }
    return ChainSet("phase2", model.names(), draws, config.burn_in, config.thin, config.seed, rates, meta)


# --------------------------------------------------------------------------
# Phase III

class Phase3Model:
    def __init__(self, store: DataStore, config: McmcConfig, segments=None):
        pool_ids = _pool_ids(store, config.pool)
        segs = _segments_for(store, pool_ids, segments, config.phase3_threshold)
        ids, idx, f_now, f_next, last = [], [], [], [], []
        for cid in pool_ids:
            seg = segs[cid]
            vals = store[cid].values
            if seg.phase3_start_index is None or len(vals) - seg.phase3_start_index < 3:
                continue
            ci = len(ids)
            ids.append(cid)
            for t in range(seg.phase3_start_index, len(vals) - 1):
                idx.append(ci)
                f_now.append(vals[t])
                f_next.append(vals[t + 1])
            last.append(vals[-1])
        if len(ids) < 2:
            raise McmcError(
                f"Phase III hierarchy needs at least 2 countries with Phase III data; found {ids}"
            )
        self.ids = ids
        self.segments = {c: segs[c] for c in ids}
        self.n = len(ids)
        self.idx = np.asarray(idx)
        self.f_now = np.asarray(f_now, dtype=float)
        self.f_next = np.asarray(f_next, dtype=float)
        self.last = np.asarray(last, dtype=float)

    def resid(self, M, R):
        i = self.idx
        return self.f_next - (M[i] + R[i] * (self.f_now - M[i]))

    def country_loglik(self, M, R, sigma_eps):
        r = self.resid(M, R)
        return np.bincount(self.idx, normal_logpdf(r, 0.0, sigma_eps), minlength=self.n)

    def names(self):
        names = []
        for cid in self.ids:
            names += [f"mu[{cid}]", f"rho[{cid}]"]
        names += list(PHASE3_HYPER_NAMES)
        names.append("logpost")
        return names


def _phase3_country_prior(M, R, h):
    mu_bar, sigma_mu, rho_bar, sigma_rho = h
    return (normal_logpdf(M, mu_bar, sigma_mu) - log_tn_norm_pos(mu_bar, sigma_mu)
            + normal_logpdf(R, rho_bar, sigma_rho) - log_tn_norm_unit(rho_bar, sigma_rho))


def _in_box(names, values):
    for name, v in zip(names, values):
        lo, hi = PHASE3_BOUNDS[name]
        if name.startswith("sigma"):
            if not lo < v <= hi:
                return False
        elif not lo <= v <= hi:
            return False
    return True


def _phase3_chain(model: Phase3Model, config: McmcConfig, chain: int):
    rng = rngmod.stream(config.seed, f"phase3/chain/{chain}")
    n = model.n
    M = np.maximum(model.last + 0.05 * rng.standard_normal(n), 0.01)
    R = np.full(n, 0.8)
    h = np.array([float(np.clip(M.mean(), 0.05, 2.05)), 0.25, 0.8, 0.1])
    sigma_eps = 0.1
    ll_c = model.country_loglik(M, R, sigma_eps)
    if not np.all(np.isfinite(ll_c)):
        raise McmcError("non-finite Phase III log-likelihood at initialisation")

    country = _Adapter(n, 2, 0.5, config.adapt_window, config.burn_in)
    country.chol[:] = np.diag([0.1, 0.05])
    mu_ad = _Adapter(1, 2, 1.0, config.adapt_window, config.burn_in)
    mu_ad.chol[0] = np.diag([0.1, 0.05])
    rho_ad = _Adapter(1, 2, 1.0, config.adapt_window, config.burn_in)
    rho_ad.chol[0] = np.diag([0.05, 0.03])

    names = model.names()
    n_keep = (config.iterations - config.burn_in) // config.thin
    out = np.empty((n_keep, len(names)))
    k = 0
    for it in range(config.iterations):
        state = np.stack([M, R], axis=1)
        prop = country.propose(state, rng)
        Mp, Rp = prop[:, 0], prop[:, 1]
        valid = (Mp >= 0) & (Rp >= 0) & (Rp < 1)
        Mp_s = np.where(valid, Mp, M)
        Rp_s = np.where(valid, Rp, R)
        ll_p = model.country_loglik(Mp_s, Rp_s, sigma_eps)
        ratio = ll_p + _phase3_country_prior(Mp_s, Rp_s, h) - ll_c - _phase3_country_prior(M, R, h)
        acc = valid & (np.log(rng.random(n)) < ratio)
        M = np.where(acc, Mp, M)
        R = np.where(acc, Rp, R)
        ll_c = np.where(acc, ll_p, ll_c)
        country.record(acc.astype(float), it, np.stack([M, R], axis=1))

        # pool-level (mu_bar, sigma_mu)
        for ad, slot, names_ in ((mu_ad, (0, 1), ("mu_bar", "sigma_mu")), (rho_ad, (2, 3), ("rho_bar", "sigma_rho"))):
            cur = h[list(slot)]
            pr = ad.propose(cur[None, :], rng)[0]
            if _in_box(names_, pr):
                hp = h.copy()
                hp[list(slot)] = pr
                ratio = _phase3_country_prior(M, R, hp).sum() - _phase3_country_prior(M, R, h).sum()
                ok = bool(np.log(rng.random()) < ratio)
            else:
                rng.random()
                ok = False
            if ok:
                h = hp
            ad.record(np.array([float(ok)]), it, h[list(slot)][None, :])

        r = model.resid(M, R)
        sigma_eps = sample_sd_uniform_prior(float(r @ r), len(r), PHASE3_BOUNDS["sigma_eps"][1], rng, sigma_eps)
        ll_c = model.country_loglik(M, R, sigma_eps)

        if it >= config.burn_in and (it - config.burn_in) % config.thin == config.thin - 1 and k < n_keep:
            logpost = float(ll_c.sum() + _phase3_country_prior(M, R, h).sum())
            out[k] = np.concatenate([np.stack([M, R], axis=1).reshape(-1), h, [sigma_eps, logpost]])
            k += 1

    rates = {f"phase3.country[{cid}]": float(r) for cid, r in zip(model.ids, country.rates())}
    rates["phase3.mu_hyper"] = float(mu_ad.rates()[0])
    rates["phase3.rho_hyper"] = float(rho_ad.rates()[0])
    return out, rates


def run_phase3_mcmc(store: DataStore, config: McmcConfig, segments=None) -> ChainSet:
    """Sample the Phase III hierarchy.

    Only pool countries with a Phase III segment of at least three
    observations get country-level blocks; at least two are required.
    """
    model = Phase3Model(store, config, segments)
    draws, rates = _run_chains(_phase3_chain, model, config)
    if not np.all(np.isfinite(draws)):
        raise McmcError("non-finite values in Phase III draws")
    meta = {
        "countries": model.ids,
        "mode": store.mode,
        "segments": {c: [s.phase2_start_index, s.phase3_start_index] for c, s in model.segments.items()},
        "config": config.echo(),
    }
    return ChainSet("phase3", model.names(), draws, config.burn_in, config.thin, config.seed, rates, meta)


def predictive_country_draw(hyper: Phase3Hyper, rng) -> Phase3Params:
    """(mu_c, rho_c) for a country with no Phase III data of its own."""
    mu, rho = predictive_draws(hyper.mu_bar, hyper.sigma_mu, hyper.rho_bar, hyper.sigma_rho, rng)
    return Phase3Params(float(mu), float(rho), hyper.sigma_eps)


def predictive_draws(mu_bar, sigma_mu, rho_bar, sigma_rho, rng):
    """Vectorised hierarchy-level draws of (mu_c, rho_c)."""
    mu = truncnorm_draw(mu_bar, sigma_mu, 0.0, np.inf, rng)
    rho = truncnorm_draw(rho_bar, sigma_rho, 0.0, 1.0, rng)
    return mu, rho


def pool_level_names(chains: ChainSet) -> list:
    if chains.kind == "phase2":
        names = [f"mean.{c}" for c in PHASE2_COORDS] + [f"sd.{c}" for c in PHASE2_COORDS]
        if not chains.meta.get("variance_fixed"):
            names += list(VARIANCE_NAMES)
        if chains.has("phi"):
            names.append("phi")
        return names
    return list(PHASE3_HYPER_NAMES)


# --------------------------------------------------------------------------
# chain files

def _chain_csv(chains: ChainSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chain", "draw"] + list(chains.names))
    for c in range(chains.draws.shape[0]):
        for i in range(chains.draws.shape[1]):
            w.writerow([c, i] + [repr(float(x)) for x in chains.draws[c, i]])
    return buf.getvalue()


def write_chainset(chains: ChainSet, path, extra: dict | None = None) -> Path:
    """Write ``<path>.csv`` plus a ``<path>.json`` manifest; returns the csv path."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    text = _chain_csv(chains)
    csv_path.write_text(text, encoding="utf-8")
    manifest = {
        "kind": chains.kind,
        "csv": csv_path.name,
        "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
        "seed": chains.seed,
        "burn_in": chains.burn_in,
        "thin": chains.thin,
        "chains": chains.draws.shape[0],
        "draws_per_chain": chains.draws.shape[1],
        "acceptance_rates": chains.acceptance_rates,
        "meta": chains.meta,
    }
    if extra:
        manifest.update(extra)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return csv_path


def read_chainset(path) -> ChainSet:
    path = Path(path)
    csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    for p in (csv_path, json_path):
        if not p.exists():
            raise ChainFileError(f"missing chain file {p}")
    try:
        manifest = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ChainFileError(f"corrupt chain manifest {json_path}: {exc}") from None
    text = csv_path.read_text(encoding="utf-8")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    if digest != manifest.get("sha256"):
        raise ChainFileError(f"digest mismatch for {csv_path}: file was modified or truncated")
    rows = list(csv.reader(io.StringIO(text)))
    names = rows[0][2:]
    n_chains, n_draws = manifest["chains"], manifest["draws_per_chain"]
    body = np.array([[float(x) for x in r[2:]] for r in rows[1:]], dtype=float)
    if body.shape != (n_chains * n_draws, len(names)):
        raise ChainFileError(f"unexpected shape {body.shape} in {csv_path}")
    draws = body.reshape(n_chains, n_draws, len(names))
    return ChainSet(manifest["kind"], names, draws, manifest["burn_in"], manifest["thin"],
                    manifest["seed"], manifest.get("acceptance_rates", {}), manifest.get("meta", {}))


def phase2_params_arrays(chains: ChainSet, cid: str):
    """Flat draw arrays (d, delta1, delta2, delta3, delta4) for one country."""
    return tuple(chains.flat(f"{p}[{cid}]") for p in ("d", "delta1", "delta2", "delta3", "delta4"))


def variance_arrays(chains: ChainSet):
    if chains.meta.get("variance_fixed"):
        v = chains.meta["config"]["variance"]
        n = chains.n_draws
        return tuple(np.full(n, v[k]) for k in VARIANCE_NAMES), v["sd_floor"]
    return tuple(chains.flat(k) for k in VARIANCE_NAMES), chains.meta.get("sd_floor", VarianceParams().sd_floor)
