"""TFR panel ingestion, period normalisation and pool selection.

Input files are UTF-8 CSV with the header ``country_id,country_name,year,tfr``
and one row per (country, period start year).
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping

import numpy as np

ANNUAL = "annual"
FIVE_YEAR = "five-year"
MODES = (ANNUAL, FIVE_YEAR)

CSV_HEADER = ("country_id", "country_name", "year", "tfr")

FIXTURE_NAME = "wpp2022_tfr5.csv"


class DataError(ValueError):
    """Raised for malformed or inconsistent TFR input."""


def period_length(mode: str) -> int:
    if mode == ANNUAL:
        return 1
    if mode == FIVE_YEAR:
        return 5
    raise DataError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class Observation:
    period_start: int
    period_length: int
    tfr: float

    def __post_init__(self):
        if self.period_length not in (1, 5):
            raise DataError(f"period_length must be 1 or 5, got {self.period_length}")
        if not (self.tfr > 0 and np.isfinite(self.tfr)):
            raise DataError(f"tfr must be positive, got {self.tfr}")


@dataclass(frozen=True)
class TfrSeries:
    """One country's observed TFR, ordered by period."""

    country_id: str
    country_name: str
    observations: tuple[Observation, ...]
    mode: str

    def __post_init__(self):
        step = period_length(self.mode)
        obs = self.observations
        for o in obs:
            if o.period_length != step:
                raise DataError(
                    f"{self.country_id}: observation at {o.period_start} has "
                    f"period_length {o.period_length}, series mode is {self.mode}"
                )
        for prev, cur in zip(obs, obs[1:]):
            if cur.period_start - prev.period_start != step:
                raise DataError(
                    f"{self.country_id}: gap or disorder between periods "
                    f"{prev.period_start} and {cur.period_start}"
                )

    @classmethod
    def from_values(cls, country_id, values, start_year, mode=FIVE_YEAR, country_name=None):
        step = period_length(mode)
        obs = tuple(
            Observation(int(start_year + i * step), step, float(v)) for i, v in enumerate(values)
        )
        return cls(country_id, country_name or country_id, obs, mode)

    def __len__(self):
        return len(self.observations)

    @property
    def values(self) -> np.ndarray:
        return np.array([o.tfr for o in self.observations], dtype=float)

    @property
    def years(self) -> np.ndarray:
        return np.array([o.period_start for o in self.observations], dtype=int)

    @property
    def step(self) -> int:
        return period_length(self.mode)

    def value_at(self, year: int) -> float | None:
        for o in self.observations:
            if o.period_start == year:
                return o.tfr
        return None

    def truncate(self, last_year: int) -> TfrSeries:
        """Keep observations whose period starts at or before ``last_year``."""
        kept = tuple(o for o in self.observations if o.period_start <= last_year)
        return TfrSeries(self.country_id, self.country_name, kept, self.mode)


@dataclass(frozen=True)
class DataStore:
    series: Mapping[str, TfrSeries]
    source: str = ""
    vintage: int | None = None

    def __post_init__(self):
        modes = {s.mode for s in self.series.values()}
        if len(modes) > 1:
            raise DataError(f"mixed series modes in one store: {sorted(modes)}")
        for key, s in self.series.items():
            if key != s.country_id:
                raise DataError(f"store key {key!r} does not match series id {s.country_id!r}")

    @property
    def mode(self) -> str:
        for s in self.series.values():
            return s.mode
        return FIVE_YEAR

    @property
    def ids(self) -> list[str]:
        return list(self.series)

    def __getitem__(self, country_id: str) -> TfrSeries:
        return self.series[country_id]

    def __contains__(self, country_id) -> bool:
        return country_id in self.series

    def __len__(self):
        return len(self.series)

    def subset(self, ids: Iterable[str]) -> DataStore:
        ids = set(ids)
        return DataStore(
            {k: v for k, v in self.series.items() if k in ids}, self.source, self.vintage
        )

    def truncate(self, last_year: int) -> DataStore:
        """Drop every observation whose period starts after ``last_year``.

        Countries left with no observations are removed.
        """
        out = {}
        for k, s in self.series.items():
            t = s.truncate(last_year)
            if len(t):
                out[k] = t
        return DataStore(out, self.source, self.vintage)

    def digest(self) -> str:
        return hashlib.sha256(serialize_csv(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CountrySet:
    ids: frozenset
    criterion: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(sorted(self.ids))

    def __contains__(self, item):
        return item in self.ids


def parse_tfr_csv(text, mode: str = FIVE_YEAR, source: str = "", vintage=None) -> DataStore:
    """Parse the documented TFR CSV format into a :class:`DataStore`.

    ``text`` may be a string or a text stream. Errors name the offending
    line number (the header is line 1).
    """
    step = period_length(mode)
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: missing header row") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise DataError(f"line 1: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")

    rows: dict[str, dict[int, float]] = {}
    names: dict[str, str] = {}
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DataError(f"line {lineno}: expected 4 fields, got {len(row)}")
        cid, name, year_s, tfr_s = (c.strip() for c in row)
        if not cid:
            raise DataError(f"line {lineno}: empty country_id")
        try:
            year = int(year_s)
            tfr = float(tfr_s)
        except ValueError:
            raise DataError(f"line {lineno}: cannot parse year/tfr from {row!r}") from None
        if not (tfr > 0 and np.isfinite(tfr)):
            raise DataError(f"line {lineno}: non-positive tfr {tfr_s} for {cid} {year}")
        by_year = rows.setdefault(cid, {})
        if year in by_year:
            raise DataError(f"line {lineno}: duplicate period {year} for {cid}")
        if cid in names and names[cid] != name:
            raise DataError(f"line {lineno}: inconsistent country_name for {cid}")
        names[cid] = name
        by_year[year] = tfr

    series = {}
    for cid, by_year in rows.items():
        years = sorted(by_year)
        for a, b in zip(years, years[1:]):
            if b - a != step:
                raise DataError(
                    f"{cid}: periods {a} and {b} are not {step} year(s) apart ({mode} mode)"
                )
        obs = tuple(Observation(y, step, by_year[y]) for y in years)
        series[cid] = TfrSeries(cid, names[cid], obs, mode)
    return DataStore(series, source, vintage)


def _format_tfr(x: float) -> str:
    return repr(float(x))


def serialize_csv(store: DataStore) -> str:
    """Write ``store`` back to the CSV format, byte-stable for equal input."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for cid in sorted(store.series):
        s = store.series[cid]
        for o in s.observations:
            writer.writerow([cid, s.country_name, o.period_start, _format_tfr(o.tfr)])
    return buf.getvalue()


def read_tfr_csv(path, mode: str = FIVE_YEAR) -> DataStore:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_tfr_csv(fh, mode=mode, source=str(path))


def load_fixture() -> DataStore:
    """The bundled five-year TFR panel (WPP-2022-derived, 1950-2020)."""
    text = resources.files("lowtfr.fixtures").joinpath(FIXTURE_NAME).read_text(encoding="utf-8")
    return parse_tfr_csv(text, mode=FIVE_YEAR, source=f"bundled:{FIXTURE_NAME}", vintage=2022)


def fixture_path() -> str:
    return str(resources.files("lowtfr.fixtures").joinpath(FIXTURE_NAME))


def five_year_average(series: TfrSeries) -> TfrSeries:
    """Average consecutive blocks of five annual values.

    Blocks start at the first observation; a trailing partial block is
    dropped.
    """
    if series.mode != ANNUAL:
        raise DataError("five_year_average needs an annual series")
    n_blocks = len(series) // 5
    if n_blocks == 0:
        raise DataError(f"{series.country_id}: need at least 5 annual observations")
    vals = series.values[: n_blocks * 5].reshape(n_blocks, 5).mean(axis=1)
    start = series.observations[0].period_start
    return TfrSeries.from_values(
        series.country_id, vals, start, mode=FIVE_YEAR, country_name=series.country_name
    )


def select_pool(store: DataStore, criterion: str = "all", threshold: float = 1.5,
                reference_period: int | None = None) -> CountrySet:
    """Choose the countries that share a hierarchical distribution.

    ``criterion="all"`` keeps every country. ``criterion="low"`` keeps the
    countries whose TFR at ``reference_period`` is at or below
    ``threshold``; the default reference is the latest period observed in
    the store. Countries without an observation at the reference period
    are skipped.
    """
    if criterion == "all":
        ids = frozenset(store.series)
        record = {"criterion": "all"}
    elif criterion == "low":
        if reference_period is None:
            reference_period = max(int(s.years[-1]) for s in store.series.values())
        ids = set()
        for cid, s in store.series.items():
            v = s.value_at(reference_period)
            if v is not None and v <= threshold:
                ids.add(cid)
        ids = frozenset(ids)
        record = {"criterion": "low", "threshold": threshold, "reference_period": reference_period}
    else:
        raise DataError(f"unknown pool criterion {criterion!r}")
    if not ids:
        raise DataError(f"pool selection {record} produced an empty pool")
    return CountrySet(ids, record)
