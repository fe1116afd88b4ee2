"""Between/within-chain convergence diagnostic."""

import numpy as np


def psrf(chains) -> float:
    """Potential scale reduction factor for one coordinate.

    ``chains`` has shape (n_chains, n_draws). Returns ``nan`` when every
    draw in every chain is identical.
    """
    x = np.asarray(chains, dtype=float)
    m, n = x.shape
    if m < 2 or n < 2:
        raise ValueError("need at least two chains of length two")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return float("nan") if B == 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def gelman_rubin(chains, names=None, min_length: int = 10) -> dict:
    """R-hat for each selected coordinate of a ChainSet.

    ``names`` defaults to every coordinate. Zero-variance coordinates map
    to ``nan`` (not applicable) rather than raising.
    """
    if chains.n_chains < 2:
        raise ValueError("gelman_rubin needs at least two chains")
    if chains.draws.shape[1] < min_length:
        raise ValueError(f"chains shorter than {min_length} recorded draws")
    if names is None:
        names = chains.names
    return {name: psrf(chains.column(name)) for name in names}
