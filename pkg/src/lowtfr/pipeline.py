"""End-to-end estimation: pool selection, phase classification and both MCMC stages."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .data import CountrySet, DataStore, select_pool
from .kernels import VarianceParams
from .mcmc import ChainSet, McmcConfig, run_phase2_mcmc, run_phase3_mcmc
from .phases import DEFAULT_PHASE3_THRESHOLD, classify_phases


@dataclass
class PipelineConfig:
    pool: str | CountrySet = "all"
    low_threshold: float = 1.5
    low_reference: int | None = None
    # "same": Phase III hierarchy over the pool; "all": over every country with Phase III data
    phase3_pool: str = "same"
    phase3_threshold: float = DEFAULT_PHASE3_THRESHOLD
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 10
    chains: int = 3
    seed: int = 20220101
    variance: VarianceParams | None = None
    trajectories: int = 2000
    rhat_bound: float = 1.1
    force: bool = False
    jobs: int = 1

    def echo(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "low_threshold", "low_reference", "phase3_pool", "phase3_threshold", "iterations",
            "burn_in", "thin", "chains", "seed", "trajectories", "rhat_bound", "force")}
        if isinstance(self.pool, CountrySet):
            out["pool"] = {"ids": sorted(self.pool.ids), "criterion": self.pool.criterion}
        else:
            out["pool"] = self.pool
        out["variance"] = None if self.variance is None else vars(self.variance)
        return out


@dataclass
class FitResult:
    pool: CountrySet
    phase3_pool: CountrySet
    segments: dict
    phase2: ChainSet
    phase3: ChainSet
    config: PipelineConfig = field(repr=False, default=None)


def resolve_pool(store: DataStore, cfg: PipelineConfig) -> CountrySet:
    if isinstance(cfg.pool, CountrySet):
        ids = frozenset(c for c in cfg.pool.ids if c in store)
        return CountrySet(ids, dict(cfg.pool.criterion, fixed=True))
    return select_pool(store, cfg.pool, cfg.low_threshold, cfg.low_reference)


def mcmc_config(cfg: PipelineConfig, pool: CountrySet) -> McmcConfig:
    return McmcConfig(
        iterations=cfg.iterations, burn_in=cfg.burn_in, thin=cfg.thin, chain_count=cfg.chains,
        seed=cfg.seed, pool=pool, phase3_threshold=cfg.phase3_threshold,
        variance=cfg.variance, jobs=cfg.jobs,
    )


def fit(store: DataStore, cfg: PipelineConfig) -> FitResult:
    pool = resolve_pool(store, cfg)
    segments = {cid: classify_phases(s, cfg.phase3_threshold) for cid, s in store.series.items()}
    mc = mcmc_config(cfg, pool)
    phase2 = run_phase2_mcmc(store, mc, segments)
    if cfg.phase3_pool == "same":
        p3_pool = pool
    elif cfg.phase3_pool == "all":
        p3_pool = CountrySet(frozenset(store.series), {"criterion": "all"})
    else:
        raise ValueError(f"phase3_pool must be 'same' or 'all', got {cfg.phase3_pool!r}")
    phase3 = run_phase3_mcmc(store, replace(mc, pool=p3_pool), segments)
    return FitResult(pool, p3_pool, segments, phase2, phase3, cfg)
