import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smogcast import ingest
from smogcast.errors import (
    AllMissingColumnError,
    DuplicateTimestampError,
    MissingColumnError,
    NonHourlyCadenceError,
)
from smogcast.pipeline import pearson_abs

import oracles

SCHEMA = ["NO2", "O3"]


def write_rows(path, rows, header="timestamp,NO2,O3"):
    path.write_text("\n".join([header] + rows) + "\n")
    return path


def test_parse_well_formed(tmp_path):
    path = write_rows(
        tmp_path / "a.csv",
        [
            "2020-01-01T00:00:00Z,10.0,30.0",
            "2020-01-01T01:00:00Z,11.0,31.0",
            "2020-01-01T02:00:00Z,12.0,32.0",
        ],
    )
    table = ingest.parse_csv(path, SCHEMA)
    assert len(table) == 3
    assert not table.gap_mask.any()
    assert table.column("NO2").tolist() == [10.0, 11.0, 12.0]


def test_parse_empty_cell_becomes_gap(tmp_path):
    path = write_rows(
        tmp_path / "a.csv",
        ["2020-01-01T00:00:00Z,,30.0", "2020-01-01T01:00:00Z,11.0,31.0"],
    )
    table = ingest.parse_csv(path, SCHEMA)
    assert table.gap_mask[0, 0] and not table.gap_mask[0, 1]
    assert math.isnan(table.values[0, 0])


def test_parse_shuffled_rows_match_sorted_file(tmp_path):
    rows = [f"2020-01-01T{h:02d}:00:00Z,{10 + h},{30 - h}" for h in range(6)]
    sorted_table = ingest.parse_csv(write_rows(tmp_path / "s.csv", rows), SCHEMA)
    shuffled = [rows[i] for i in (3, 0, 5, 1, 4, 2)]
    shuffled_table = ingest.parse_csv(write_rows(tmp_path / "u.csv", shuffled), SCHEMA)
    np.testing.assert_array_equal(sorted_table.values, shuffled_table.values)
    assert sorted_table.start == shuffled_table.start


def test_parse_missing_hour_becomes_gap_row(tmp_path):
    path = write_rows(
        tmp_path / "a.csv",
        ["2020-01-01T00:00:00Z,1,2", "2020-01-01T02:00:00Z,3,4"],
    )
    table = ingest.parse_csv(path, SCHEMA)
    assert len(table) == 3
    assert table.gap_mask[1].all()


def test_parse_errors(tmp_path):
    with pytest.raises(DuplicateTimestampError):
        ingest.parse_csv(
            write_rows(tmp_path / "d.csv", ["2020-01-01T00:00:00Z,1,2"] * 2), SCHEMA
        )
    with pytest.raises(NonHourlyCadenceError):
        ingest.parse_csv(
            write_rows(tmp_path / "n.csv", ["2020-01-01T00:30:00Z,1,2"]), SCHEMA
        )
    with pytest.raises(MissingColumnError):
        ingest.parse_csv(
            write_rows(tmp_path / "m.csv", ["2020-01-01T00:00:00Z,1"], header="timestamp,NO2"),
            SCHEMA,
        )


def test_parse_serialize_parse_idempotent(tmp_path):
    a, _ = ingest.synthesize(seed=3, hours=50)
    values = a.values.copy()
    values[5, 2] = np.nan
    table = ingest.SeriesTable(
        a.station_id, a.start, a.names, a.units, values, np.isnan(values)
    )
    ingest.write_csv(table, tmp_path / "one.csv")
    once = ingest.parse_csv(tmp_path / "one.csv", list(a.names))
    ingest.write_csv(once, tmp_path / "two.csv")
    twice = ingest.parse_csv(tmp_path / "two.csv", list(a.names))
    np.testing.assert_array_equal(
        np.nan_to_num(once.values, nan=-1), np.nan_to_num(twice.values, nan=-1)
    )
    np.testing.assert_array_equal(once.gap_mask, twice.gap_mask)
    assert once.start == twice.start


def make_table(values):
    values = np.asarray(values, dtype=float)
    from datetime import datetime, timezone

    return ingest.SeriesTable(
        "t",
        datetime(2020, 1, 1, tzinfo=timezone.utc),
        tuple(f"c{j}" for j in range(values.shape[1])),
        ("",) * values.shape[1],
        values,
        np.isnan(values),
    )


def test_interpolate_midpoint():
    table = make_table(np.array([[1.0], [np.nan], [3.0]]))
    assert ingest.interpolate(table).values[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_interpolate_edge_extension():
    table = make_table(np.array([[np.nan], [5.0], [5.0], [np.nan]]))
    assert ingest.interpolate(table).values[:, 0].tolist() == [5.0, 5.0, 5.0, 5.0]


def test_interpolate_matches_oracle(rng):
    values = rng.standard_normal((400, 3)) * 10
    mask = rng.random((400, 3)) < 0.05
    for j in range(3):  # keep at least one observed value per column
        mask[0, j] = False
    values[mask] = np.nan
    table = make_table(values)
    filled = ingest.interpolate(table)
    for j in range(3):
        expected = oracles.linear_refill(values[:, j], ~mask[:, j])
        np.testing.assert_allclose(filled.values[:, j], expected, atol=1e-12, rtol=0)
    # observed cells untouched, gap records preserved
    np.testing.assert_array_equal(filled.values[~mask], values[~mask])
    np.testing.assert_array_equal(filled.gap_mask, mask)


@given(st.lists(st.booleans(), min_size=2, max_size=40).filter(lambda m: not all(m)))
def test_interpolate_never_touches_observed(mask):
    values = np.arange(len(mask), dtype=float).reshape(-1, 1) ** 1.5
    values[np.array(mask), 0] = np.nan
    table = make_table(values)
    filled = ingest.interpolate(table)
    observed = ~np.array(mask)
    np.testing.assert_array_equal(filled.values[observed, 0], values[observed, 0])
    assert not np.isnan(filled.values).any()


def test_interpolate_all_missing_column():
    with pytest.raises(AllMissingColumnError):
        ingest.interpolate(make_table(np.array([[np.nan], [np.nan]])))


def test_availability_complete_table():
    a, _ = ingest.synthesize(seed=0, hours=100)
    report = ingest.availability(a)
    assert (report.fractions == 1.0).all()


def test_availability_published_fraction():
    # A full 8760-hour year with 207 missing NO2 cells reports 97.64%.
    values = np.ones((8760, 2))
    values[:207, 0] = np.nan
    table = make_table(values)
    report = ingest.availability(table)
    assert f"{report.fraction('c0', 2020):.4f}" == "0.9764"
    assert report.fraction("c1", 2020) == 1.0


def test_availability_matches_count_oracle(rng):
    values = rng.standard_normal((8760 + 8784, 2))
    mask = rng.random(values.shape) < 0.03
    values[mask] = np.nan
    table = make_table(values)
    report = ingest.availability(table)
    years = table.year_of_row()
    for year in report.years:
        rows = years == year
        for j, name in enumerate(table.names):
            expected = oracles.availability_fraction(int(mask[rows, j].sum()), int(rows.sum()))
            assert report.fraction(name, year) == expected
            assert 0.0 <= report.fraction(name, year) <= 1.0


def test_synthesize_deterministic():
    a1, b1 = ingest.synthesize(seed=9, hours=300)
    a2, b2 = ingest.synthesize(seed=9, hours=300)
    np.testing.assert_array_equal(a1.values, a2.values)
    np.testing.assert_array_equal(b1.values, b2.values)


def test_synthesize_no2_o3_anticorrelated():
    a, _ = ingest.synthesize(seed=0, hours=1000)
    r_signed = oracles.pearson_signed(a.column("NO2"), a.column("O3"))
    assert r_signed < 0
    assert pearson_abs(a.column("NO2"), a.column("O3")) == pytest.approx(abs(r_signed))


def test_synthesize_rejects_bad_hours():
    with pytest.raises(ValueError):
        ingest.synthesize(seed=0, hours=0)
    with pytest.raises(ValueError):
        ingest.synthesize(seed=0, hours=10, chunk_layout=[4, 4])


def test_synthesize_chunk_layout_and_lagged_mapping():
    a, b = ingest.synthesize(seed=1, chunk_layout=[200, 300])
    assert len(a) == 500 and len(b) == 500
    # B follows A's pollutants with a one-hour lag: correlation with the
    # lagged series beats the simultaneous one.
    no2_a, no2_b = a.column("NO2"), b.column("NO2")
    lagged = pearson_abs(no2_a[:-1], no2_b[1:])
    simultaneous = pearson_abs(no2_a, no2_b)
    assert lagged > simultaneous


def test_clamp_outliers():
    table = make_table(np.array([[1.0, 5.0], [100.0, 6.0], [2.0, -50.0]]))
    clamped = ingest.clamp_outliers(table, {"c0": (0.0, 50.0), "c1": (0.0, None)})
    assert clamped.gap_mask[1, 0] and clamped.gap_mask[2, 1]
    assert math.isnan(clamped.values[1, 0])
    assert not clamped.gap_mask[0].any()
