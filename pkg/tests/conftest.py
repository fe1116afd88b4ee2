import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lowtfr.data import load_fixture  # noqa: E402
from lowtfr.mcmc import PHASE2_COORDS, ChainSet  # noqa: E402
from lowtfr.pipeline import PipelineConfig, fit  # noqa: E402


@pytest.fixture(scope="session")
def fixture_store():
    return load_fixture()


@pytest.fixture(scope="session")
def low_fit(fixture_store):
    """Default-settings fit of the TFR <= 1.5 pool."""
    return fit(fixture_store, PipelineConfig(pool="low"))


@pytest.fixture(scope="session")
def all_fit(fixture_store):
    """Default-settings fit over every country of the fixture."""
    return fit(fixture_store, PipelineConfig(pool="all"))


def point_chains(params: dict, n_draws=10):
    """Two-chain ChainSets holding one repeated parameter draw per country.

    ``params`` maps country id to a dict with keys d, delta1..delta4, mu,
    rho and optionally sigma0 (default 0.1); sigma_eps is shared.
    """
    ids = sorted(params)
    names2, row2 = [], []
    for cid in ids:
        for k in ("d", "delta1", "delta2", "delta3", "delta4"):
            names2.append(f"{k}[{cid}]")
            row2.append(params[cid][k])
    first = params[ids[0]]
    names2 += [f"mean.{c}" for c in PHASE2_COORDS] + [f"sd.{c}" for c in PHASE2_COORDS]
    row2 += [0.0] * len(PHASE2_COORDS) + [1.0] * len(PHASE2_COORDS)
    names2 += ["sigma0", "S", "a", "b", "c0", "logpost"]
    row2 += [first.get("sigma0", 0.1), 3.5, 0.0, 0.0, 1.0, 0.0]
    names3, row3 = [], []
    for cid in ids:
        names3 += [f"mu[{cid}]", f"rho[{cid}]"]
        row3 += [params[cid]["mu"], params[cid]["rho"]]
    names3 += ["mu_bar", "sigma_mu", "rho_bar", "sigma_rho", "sigma_eps", "logpost"]
    row3 += [1.8, 0.1, 0.8, 0.1, first.get("sigma_eps", 0.0), 0.0]
    d2 = np.tile(np.asarray(row2, dtype=float), (2, n_draws, 1))
    d3 = np.tile(np.asarray(row3, dtype=float), (2, n_draws, 1))
    meta2 = {"countries": ids, "sd_floor": first.get("sd_floor", 0.01)}
    return (ChainSet("phase2", names2, d2, 0, 1, 0, {}, meta2),
            ChainSet("phase3", names3, d3, 0, 1, 0, {}, {"countries": ids}))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=str):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
