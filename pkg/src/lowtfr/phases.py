"""Fertility-transition phase segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ANNUAL, DataError, TfrSeries, five_year_average

DEFAULT_PHASE3_THRESHOLD = 2.1


@dataclass(frozen=True)
class PhaseSegmentation:
    phase2_start_index: int
    phase3_start_index: int | None
    threshold: float

    def __post_init__(self):
        p3 = self.phase3_start_index
        if p3 is not None and p3 < self.phase2_start_index:
            raise ValueError("phase3 start precedes phase2 start")

    @property
    def phase2_end_index(self) -> int | None:
        """Last index of the Phase II segment (the trough when Phase III exists)."""
        return self.phase3_start_index


def find_recovery_start(values, threshold: float, start: int = 0) -> int | None:
    """Earliest trough ``m >= start`` followed by two increases below ``threshold``."""
    v = np.asarray(values, dtype=float)
    for m in range(max(start, 0), len(v) - 2):
        a, b, c = v[m], v[m + 1], v[m + 2]
        if a < b < c and c < threshold:
            return m
    return None


def classify_values(values, threshold: float = DEFAULT_PHASE3_THRESHOLD) -> PhaseSegmentation:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DataError("cannot classify an empty series")
    p2 = int(np.argmax(v))  # argmax returns the earliest maximum on ties
    p3 = find_recovery_start(v, threshold, p2)
    return PhaseSegmentation(p2, p3, threshold)


def classify_phases(series: TfrSeries, threshold: float = DEFAULT_PHASE3_THRESHOLD) -> PhaseSegmentation:
    """Split a series into its Phase II and (optional) Phase III segments.

    Phase II starts at the global maximum. Phase III starts at the first
    trough after it that is followed by two consecutive increases, all
    three values lying below ``threshold``.

    Annual series are classified on their five-year block means; the
    Phase III trough block maps back to the first year of that block.
    """
    if len(series) == 0:
        raise DataError(f"{series.country_id}: cannot classify an empty series")
    if series.mode != ANNUAL:
        return classify_values(series.values, threshold)

    values = series.values
    p2 = int(np.argmax(values))
    if len(series) < 5:
        return PhaseSegmentation(p2, None, threshold)
    blocks = five_year_average(series).values
    m = find_recovery_start(blocks, threshold, int(np.argmax(blocks)))
    p3 = None if m is None else max(5 * m, p2)
    return PhaseSegmentation(p2, p3, threshold)


def phase2_transitions(seg: PhaseSegmentation, n_obs: int) -> list[int]:
    """Indices ``t`` of Phase II transitions ``t -> t+1``."""
    end = seg.phase3_start_index if seg.phase3_start_index is not None else n_obs - 1
    return list(range(seg.phase2_start_index, end))


def phase3_transitions(seg: PhaseSegmentation, n_obs: int) -> list[int]:
    if seg.phase3_start_index is None:
        return []
    return list(range(seg.phase3_start_index, n_obs - 1))


def classify_store(store, threshold: float = DEFAULT_PHASE3_THRESHOLD) -> dict:
    return {cid: classify_phases(s, threshold) for cid, s in store.series.items()}
