"""Cached synthetic-recovery experiments shared by several test modules."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from lowtfr.kernels import Phase2Params, VarianceParams
from lowtfr.mcmc import McmcConfig, Phase3Hyper, run_phase2_mcmc, run_phase3_mcmc
from lowtfr.phases import PhaseSegmentation
from lowtfr.validation import SyntheticTruth, generate_synthetic

REPLICATES = 20
P3_HYPER = Phase3Hyper(1.8, 0.3, 0.7, 0.1, 0.1)
P2_TRUTH = Phase2Params(0.5, 1.5, 1.5, 1.3, 0.9)
# the panel starts on the steep part of the decline, where d is identified
P2_START = P2_TRUTH.start_level - 1.5 * P2_TRUTH.delta1
P2_VARIANCE = VarianceParams(sigma0=0.08, a=0.0, b=0.0, c0=1.0)


@dataclass(frozen=True)
class Phase3Replicate:
    hits: int
    n: int


@dataclass(frozen=True)
class Phase2Replicate:
    truth: float
    mean: float
    sd: float
    lower: float
    upper: float

    @property
    def z(self) -> float:
        return abs(self.mean - self.truth) / self.sd

    @property
    def covered(self) -> bool:
        return self.lower <= self.truth <= self.upper


@lru_cache(maxsize=None)
def phase3_replicate(rep: int) -> Phase3Replicate:
    store, manifest = generate_synthetic(SyntheticTruth(P3_HYPER), 10, 12, seed=100 + rep)
    segs = {c: PhaseSegmentation(0, 0, 2.1) for c in store.ids}
    cfg = McmcConfig(iterations=4000, burn_in=2000, thin=4, chain_count=2, seed=rep)
    cs = run_phase3_mcmc(store, cfg, segs)
    hits = 0
    for c in store.ids:
        lo, hi = np.quantile(cs.flat(f"mu[{c}]"), [0.025, 0.975])
        hits += bool(lo <= manifest["countries"][c]["mu"] <= hi)
    return Phase3Replicate(hits, len(store.ids))


@lru_cache(maxsize=None)
def phase2_replicate(rep: int) -> Phase2Replicate:
    truth = SyntheticTruth(P3_HYPER, phase2=P2_TRUTH, variance=P2_VARIANCE, start_level=P2_START)
    store, _ = generate_synthetic(truth, 1, 12, seed=rep, start_year=1980)
    cfg = McmcConfig(iterations=4000, burn_in=2000, thin=2, chain_count=2, seed=rep, variance=P2_VARIANCE)
    d = run_phase2_mcmc(store, cfg).flat("d[S000]")
    lo, hi = np.quantile(d, [0.025, 0.975])
    return Phase2Replicate(P2_TRUTH.d, float(d.mean()), float(d.std()), float(lo), float(hi))


def calibration():
    """Pooled nominal-95% coverage over all replicates of both experiments."""
    p3 = [phase3_replicate(r) for r in range(REPLICATES)]
    p2 = [phase2_replicate(r) for r in range(REPLICATES)]
    p3_cov = sum(r.hits for r in p3) / sum(r.n for r in p3)
    p2_cov = float(np.mean([r.covered for r in p2]))
    return p3, p2, p3_cov, p2_cov
