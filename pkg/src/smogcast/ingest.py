"""Hourly two-station data: CSV parsing, gap filling, availability, synthesis.

A station table is a dense hourly grid of float columns. Cells that were
missing in the raw file stay visible through ``gap_mask`` even after they
have been filled, so availability accounting is always exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    AllMissingColumnError,
    DuplicateTimestampError,
    MissingColumnError,
    NonHourlyCadenceError,
)

POLLUTANTS = ("NO2", "O3", "PM10", "PM25")

# Canonical column order for the source (A) and target (B) stations.
SOURCE_SCHEMA = ("NO2", "O3", "PM10", "PM25", "AP", "DPT", "MWD", "MWS", "SD", "T")
TARGET_SCHEMA = POLLUTANTS

UNITS = {
    "NO2": "ug/m3",
    "O3": "ug/m3",
    "PM10": "ug/m3",
    "PM25": "ug/m3",
    "AP": "0.1 hPa",
    "DPT": "0.1 C",
    "MWD": "deg",
    "MWS": "0.1 m/s",
    "SD": "0.1 h",
    "T": "0.1 C",
}

_HOUR = timedelta(hours=1)


@dataclass
class SeriesTable:
    """Hour-aligned table of float columns for one station.

    ``values`` is [T, C] float64 with NaN marking unfilled cells and
    ``gap_mask`` is [T, C] bool with True wherever the raw data had no value.
    Timestamps are implicit: row i is ``start + i hours``.
    """

    station_id: str
    start: datetime
    names: tuple[str, ...]
    units: tuple[str, ...]
    values: np.ndarray
    gap_mask: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.gap_mask = np.asarray(self.gap_mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.gap_mask.shape:
            raise ValueError("values and gap_mask must be matching 2-D arrays")
        if self.values.shape[1] != len(self.names) or len(self.names) != len(self.units):
            raise ValueError("column names/units do not match the value matrix")
        if self.values.shape[0] < 1:
            raise ValueError("a table needs at least one row")
        if self.start.minute or self.start.second or self.start.microsecond:
            raise ValueError("start must be hour-aligned")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def columns(self) -> Iterator[tuple[str, np.ndarray, str]]:
        for j, name in enumerate(self.names):
            yield name, self.values[:, j], self.units[j]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def timestamp(self, row: int) -> datetime:
        return self.start + row * _HOUR

    def year_of_row(self) -> np.ndarray:
        """Calendar year per row, as an int array."""
        years = np.empty(len(self), dtype=np.int64)
        t, y = self.start, self.start.year
        next_jan = datetime(y + 1, 1, 1, tzinfo=t.tzinfo)
        for i in range(len(self)):
            while t >= next_jan:
                y += 1
                next_jan = datetime(y + 1, 1, 1, tzinfo=t.tzinfo)
            years[i] = y
            t += _HOUR
        return years


def _parse_timestamp(raw: str) -> datetime:
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError as exc:
        raise NonHourlyCadenceError(f"unparseable timestamp {raw!r}") from exc
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    if ts.minute or ts.second or ts.microsecond:
        raise NonHourlyCadenceError(f"timestamp {raw!r} is not on a whole hour")
    return ts


def parse_csv(path: str | Path, schema: Sequence[str], station_id: str | None = None) -> SeriesTable:
    """Read an hourly CSV into a :class:`SeriesTable`.

    The header must contain ``timestamp`` plus every name in ``schema``.
    Rows may arrive out of order; hours absent from the file become
    all-missing rows so the result is a dense hourly grid. Cells that do
    not parse as numbers become missing cells.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumnError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if "timestamp" not in header:
            raise MissingColumnError(f"{path}: no 'timestamp' column")
        missing = [name for name in schema if name not in header]
        if missing:
            raise MissingColumnError(f"{path}: missing columns {missing}")
        ts_idx = header.index("timestamp")
        col_idx = [header.index(name) for name in schema]

        rows: list[tuple[datetime, list[float]]] = []
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            ts = _parse_timestamp(row[ts_idx])
            vals = []
            for j in col_idx:
                cell = row[j].strip() if j < len(row) else ""
                try:
                    vals.append(float(cell))
                except ValueError:
                    vals.append(math.nan)
            rows.append((ts, vals))

    if not rows:
        raise MissingColumnError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    start = rows[0][0]
    seen = set()
    for ts, _ in rows:
        if ts in seen:
            raise DuplicateTimestampError(f"{path}: duplicate hour {ts.isoformat()}")
        seen.add(ts)

    n_hours = int((rows[-1][0] - start) / _HOUR) + 1
    values = np.full((n_hours, len(schema)), np.nan)
    for ts, vals in rows:
        values[int((ts - start) / _HOUR)] = vals
    gap_mask = np.isnan(values)

    return SeriesTable(
        station_id=station_id or path.stem,
        start=start,
        names=tuple(schema),
        units=tuple(UNITS.get(name, "") for name in schema),
        values=values,
        gap_mask=gap_mask,
    )


def write_csv(table: SeriesTable, path: str | Path, header_comment: str | None = None) -> None:
    """Serialize a table; unfilled cells become empty fields."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(("timestamp",) + table.names)
        for i in range(len(table)):
            ts = table.timestamp(i).strftime("%Y-%m-%dT%H:%M:%SZ")
            cells = [ts] + ["" if math.isnan(v) else repr(float(v)) for v in table.values[i]]
            writer.writerow(cells)


def interpolate(table: SeriesTable) -> SeriesTable:
    """Fill missing cells: linear between observed neighbours, nearest at the ends.

    Observed cells are never touched; ``gap_mask`` keeps recording where the
    original gaps were.
    """
    filled = table.values.copy()
    idx = np.arange(len(table), dtype=np.float64)
    for j, name in enumerate(table.names):
        col = filled[:, j]
        observed = ~np.isnan(col)
        if not observed.any():
            raise AllMissingColumnError(f"column {name!r} has no observed values")
        if observed.all():
            continue
        # np.interp extends with the nearest observed value beyond the ends.
        col[~observed] = np.interp(idx[~observed], idx[observed], col[observed])
    return replace(table, values=filled, gap_mask=table.gap_mask.copy())


def clamp_outliers(
    table: SeriesTable, bounds: dict[str, tuple[float | None, float | None]]
) -> SeriesTable:
    """Turn out-of-range cells back into missing cells.

    ``bounds`` maps column name to (lo, hi); None disables that side. Off by
    default in the pipeline since no rejection rule is published for the data.
    """
    values = table.values.copy()
    mask = table.gap_mask.copy()
    for name, (lo, hi) in bounds.items():
        j = table.names.index(name)
        col = values[:, j]
        bad = np.zeros(len(col), dtype=bool)
        if lo is not None:
            bad |= col < lo
        if hi is not None:
            bad |= col > hi
        bad &= ~np.isnan(col)
        col[bad] = np.nan
        mask[:, j] |= bad
    return replace(table, values=values, gap_mask=mask)


@dataclass
class AvailabilityReport:
    """Available fraction per (column, year), exact."""

    station_id: str
    years: tuple[int, ...]
    names: tuple[str, ...]
    fractions: np.ndarray  # [years, columns], in [0, 1]

    def fraction(self, column: str, year: int) -> float:
        return float(self.fractions[self.years.index(year), self.names.index(column)])

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("year",) + self.names)
            for i, year in enumerate(self.years):
                writer.writerow([year] + [f"{f:.4f}" for f in self.fractions[i]])


def availability(table: SeriesTable) -> AvailabilityReport:
    """Per column-year available fraction: 1 - gaps / cells."""
    years_per_row = table.year_of_row()
    years = tuple(sorted(set(int(y) for y in years_per_row)))
    fractions = np.empty((len(years), len(table.names)))
    for i, year in enumerate(years):
        rows = years_per_row == year
        total = int(rows.sum())
        gaps = table.gap_mask[rows].sum(axis=0)
        fractions[i] = 1.0 - gaps / total
    return AvailabilityReport(table.station_id, years, table.names, fractions)


def synthesize(
    seed: int, hours: int | None = None, chunk_layout: Sequence[int] | None = None
) -> tuple[SeriesTable, SeriesTable]:
    """Deterministic synthetic pair of station tables.

    Station A carries the ten canonical features built from diurnal
    sinusoids plus AR(1) noise, with NO2 and O3 coupled so they
    anticorrelate. Station B carries the four pollutants one hour behind A,
    through a per-pollutant calibration offset plus fresh noise, so a
    spatial mapping exists for models to learn while a bare carry-forward of
    A stays clearly beatable.

    ``chunk_layout`` restarts the noise processes at each chunk boundary,
    giving statistically independent stretches like multi-year extracts.
    """
    if chunk_layout is not None:
        layout = [int(c) for c in chunk_layout]
        if any(c <= 0 for c in layout):
            raise ValueError("chunk lengths must be positive")
        if hours is not None and hours != sum(layout):
            raise ValueError("hours disagrees with sum(chunk_layout)")
        hours = sum(layout)
    if hours is None or hours <= 0:
        raise ValueError("hours must be positive")
    layout = layout if chunk_layout is not None else [hours]

    rng = np.random.default_rng(seed)
    start = datetime(2017, 1, 1, tzinfo=timezone.utc)

    def ar1(n: int, rho: float = 0.9) -> np.ndarray:
        # Unit stationary variance: z_t = rho z_{t-1} + sqrt(1-rho^2) eps_t.
        eps = rng.standard_normal(n) * math.sqrt(1.0 - rho * rho)
        z = np.empty(n)
        state = rng.standard_normal()
        for i in range(n):
            state = rho * state + eps[i]
            z[i] = state
        return z

    a_parts, b_parts = [], []
    offset = 0
    for length in layout:
        t_abs = offset + np.arange(length)
        day = 2.0 * np.pi * (t_abs % 24.0) / 24.0
        week = 2.0 * np.pi * (t_abs % 168.0) / 168.0

        no2 = (
            28.0 + 9.0 * np.sin(day - 2.0 * np.pi * 8.0 / 24.0)
            + 7.0 * np.sin(week) + 7.0 * ar1(length, rho=0.95)
        )
        o3 = (
            55.0 - 0.9 * (no2 - 28.0)
            + 8.0 * np.sin(day - 2.0 * np.pi * 14.0 / 24.0) + 4.0 * ar1(length)
        )
        pm10 = (
            22.0 + 5.0 * np.sin(day - 2.0 * np.pi * 10.0 / 24.0)
            + 6.0 * np.sin(week - 1.0) + 6.0 * ar1(length, rho=0.95)
        )
        pm25 = 6.0 + 0.45 * pm10 + 3.0 * ar1(length)
        ap = 10150.0 + 40.0 * ar1(length, rho=0.98)
        dpt = 60.0 + 25.0 * ar1(length, rho=0.95)
        mwd = (180.0 + 120.0 * ar1(length, rho=0.97) + 10.0 * rng.standard_normal(length)) % 360.0
        mws = np.clip(35.0 + 12.0 * ar1(length), 1.0, None)
        sd = np.clip(6.0 * np.sin(day - 2.0 * np.pi * 6.0 / 24.0), 0.0, None) + 0.5 * rng.random(length)
        temp = 100.0 + 30.0 * np.sin(day - 2.0 * np.pi * 9.0 / 24.0) + 15.0 * ar1(length, rho=0.95)

        for col in (no2, o3, pm10, pm25):
            np.clip(col, 0.2, None, out=col)
        a_chunk = np.column_stack([no2, o3, pm10, pm25, ap, dpt, mwd, mws, sd, temp])

        # B: lagged calibrated copies of A's pollutants plus fresh noise.
        scale = (0.62, 0.70, 0.60, 0.65)
        shift = (2.0, 3.0, 1.5, 1.0)
        sigma = (0.8, 0.9, 0.8, 0.6)
        b_cols = []
        for a_col, sc, sh, sg in zip(a_chunk.T[:4], scale, shift, sigma):
            lagged = np.concatenate([[a_col[0]], a_col[:-1]])
            b_cols.append(np.clip(sc * lagged + sh + sg * rng.standard_normal(length), 0.2, None))
        b_chunk = np.column_stack(b_cols)

        a_parts.append(a_chunk)
        b_parts.append(b_chunk)
        offset += length

    a_values = np.concatenate(a_parts, axis=0)
    b_values = np.concatenate(b_parts, axis=0)
    table_a = SeriesTable(
        station_id="synthA",
        start=start,
        names=SOURCE_SCHEMA,
        units=tuple(UNITS[n] for n in SOURCE_SCHEMA),
        values=a_values,
        gap_mask=np.zeros_like(a_values, dtype=bool),
    )
    table_b = SeriesTable(
        station_id="synthB",
        start=start,
        names=TARGET_SCHEMA,
        units=tuple(UNITS[n] for n in TARGET_SCHEMA),
        values=b_values,
        gap_mask=np.zeros_like(b_values, dtype=bool),
    )
    return table_a, table_b
