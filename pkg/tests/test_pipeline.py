import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smogcast import ingest, pipeline
from smogcast.errors import (
    ConstantInputError,
    LayoutMismatchError,
    LengthMismatchError,
    OverlappingAssignmentError,
)

import oracles


# --- splitting -----------------------------------------------------------------

def test_reference_layout_balance():
    spec = pipeline.SplitSpec.reference_layout()
    train, val, test = spec.balance()
    assert abs(train - 0.763) < 0.001
    assert abs(val - 0.119) < 0.001
    assert abs(test - 0.119) < 0.001
    assert sum(spec.total_hours().values()) == 21264


def test_split_whole_series_to_train():
    a, b = ingest.synthesize(seed=0, hours=120)
    spec = pipeline.SplitSpec([pipeline.SplitEntry("train", 0, 120)])
    ds = pipeline.split(a, b, spec)
    assert ds.balance() == (1.0, 0.0, 0.0)
    assert len(ds.train) == 1 and not ds.validation and not ds.test


def test_split_hour_counts_match_summation_oracle(rng):
    a, b = ingest.synthesize(seed=1, hours=600)
    entries, pos = [], 0
    roles = []
    while pos < 560:
        length = int(rng.integers(10, 40))
        role = ["train", "validation", "test"][int(rng.integers(3))]
        entries.append(pipeline.SplitEntry(role, pos, length))
        roles.append((role, length))
        pos += length + int(rng.integers(0, 5))  # occasional unassigned gaps
    ds = pipeline.split(a, b, pipeline.SplitSpec(entries))
    for role in ("train", "validation", "test"):
        expected = sum(length for r, length in roles if r == role)
        assert sum(len(c) for c in ds.role(role)) == expected


def test_split_overlap_rejected():
    a, b = ingest.synthesize(seed=0, hours=100)
    spec = pipeline.SplitSpec(
        [pipeline.SplitEntry("train", 0, 60), pipeline.SplitEntry("test", 50, 20)]
    )
    with pytest.raises(OverlappingAssignmentError):
        pipeline.split(a, b, spec)


def test_split_chunks_never_span_entries():
    a, b = ingest.synthesize(seed=0, hours=100)
    spec = pipeline.SplitSpec(
        [pipeline.SplitEntry("train", 0, 50), pipeline.SplitEntry("train", 50, 50)]
    )
    ds = pipeline.split(a, b, spec)
    assert [len(c) for c in ds.train] == [50, 50]
    assert [c.start for c in ds.train] == [0, 50]


# --- pearson ----------------------------------------------------------------------

def test_pearson_perfect_linear():
    assert pipeline.pearson_abs([1, 2, 3], [2, 4, 6]) == 1.0


def test_pearson_absolute_of_negative():
    assert pipeline.pearson_abs([1, 2, 3], [3, 2, 1]) == 1.0


def test_pearson_matches_direct_oracle(rng):
    for _ in range(100):
        x = rng.standard_normal(60) * rng.uniform(0.1, 50)
        y = rng.standard_normal(60) + 0.3 * x
        expected = abs(oracles.pearson_signed(x, y))
        assert pipeline.pearson_abs(x, y) == pytest.approx(expected, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(ConstantInputError):
        pipeline.pearson_abs([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(LengthMismatchError):
        pipeline.pearson_abs([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(LengthMismatchError):
        pipeline.pearson_abs([1.0], [1.0])


# --- feature selection --------------------------------------------------------------

def _selection_fixture(rng, extra=None):
    t = np.arange(500)
    no2 = np.sin(t / 7) + 0.1 * rng.standard_normal(500)
    cols = {
        "NO2": no2,
        "O3": -no2 + 0.1 * rng.standard_normal(500),
        "PM10": np.cos(t / 9) + 0.1 * rng.standard_normal(500),
        "PM25": np.cos(t / 9) * 0.8 + 0.1 * rng.standard_normal(500),
    }
    if extra:
        cols.update(extra)
    names = list(cols)
    return np.column_stack(list(cols.values())), names


def test_select_features_drops_uncorrelated_noise(rng):
    noise = rng.standard_normal(500)
    values, names = _selection_fixture(rng, {"junk": noise})
    for target in ("NO2", "O3", "PM10", "PM25"):
        j = names.index(target)
        assert abs(oracles.pearson_signed(noise, values[:, j])) < 0.15
    sel = pipeline.select_features(values, names, r_th=0.15)
    assert "junk" in sel.dropped


def test_select_features_keeps_copy_of_target(rng):
    values, names = _selection_fixture(rng, {"echo": np.zeros(500)})
    values[:, names.index("echo")] = values[:, names.index("NO2")]
    sel = pipeline.select_features(values, names)
    assert "echo" in sel.kept
    assert sel.kept[:4] == ("NO2", "O3", "PM10", "PM25")


def test_select_features_scale_invariant(rng):
    cov = 0.5 * np.sin(np.arange(500) / 7) + rng.standard_normal(500)
    values, names = _selection_fixture(rng, {"cov": cov})
    base = pipeline.select_features(values, names)
    rescaled = values.copy()
    rescaled[:, names.index("cov")] = cov * 123.4 - 56.7
    again = pipeline.select_features(rescaled, names)
    assert base.kept == again.kept
    np.testing.assert_allclose(base.r_matrix, again.r_matrix, atol=1e-12)


def test_selection_matrix_shape():
    rng = np.random.default_rng(0)
    values, names = _selection_fixture(rng)
    sel = pipeline.select_features(values, names)
    assert sel.r_matrix.shape == (4, 4)
    np.testing.assert_array_equal(np.diag(sel.r_matrix), 1.0)
    assert ((sel.r_matrix >= 0) & (sel.r_matrix <= 1)).all()
    assert set(sel.kept) | set(sel.dropped) == set(names)


# --- scaler --------------------------------------------------------------------------

def test_scaler_endpoints_and_midpoint():
    params = pipeline.ScalerParams(("a",), np.array([2.0]), np.array([6.0]))
    assert pipeline.apply_scaler(np.array([[2.0]]), params)[0, 0] == 0.0
    assert pipeline.apply_scaler(np.array([[6.0]]), params)[0, 0] == 1.0
    assert pipeline.apply_scaler(np.array([[4.0]]), params)[0, 0] == 0.5


def test_scaler_roundtrip_exact(rng):
    data = rng.standard_normal((200, 5)) * rng.uniform(1, 100, 5) + rng.uniform(-50, 50, 5)
    params = pipeline.fit_scaler(data, [f"f{j}" for j in range(5)])
    back = pipeline.invert_scaler(pipeline.apply_scaler(data, params), params)
    np.testing.assert_allclose(back, data, atol=1e-12, rtol=0)
    scaled = pipeline.apply_scaler(data, params)
    assert scaled.min() == 0.0 and scaled.max() == 1.0


def test_scaler_constant_feature_warns_and_pins():
    data = np.column_stack([np.full(10, 7.0), np.arange(10.0)])
    params = pipeline.fit_scaler(data, ["const", "ramp"])
    assert params.constant.tolist() == [True, False]
    with pytest.warns(UserWarning):
        scaled = pipeline.apply_scaler(data, params)
    assert (scaled[:, 0] == 0.5).all()
    back = pipeline.invert_scaler(scaled, params)
    np.testing.assert_allclose(back, data, atol=1e-12)


def test_scaler_json_roundtrip(rng):
    data = rng.standard_normal((50, 3))
    params = pipeline.fit_scaler(data, ["a", "b", "c"])
    again = pipeline.ScalerParams.from_json(params.to_json())
    assert again.digest() == params.digest()


# --- pair generation ------------------------------------------------------------------

def _chunks(lengths, f_a=3, n_b=2, start0=0):
    rng = np.random.default_rng(0)
    chunks = []
    pos = start0
    for i, length in enumerate(lengths):
        chunks.append(
            pipeline.Chunk(
                a=rng.random((length, f_a)), b=rng.random((length, n_b)), start=pos, chunk_id=i
            )
        )
        pos += length
    return chunks


def test_pairs_none_fit_in_72_hours():
    pairs, stats = pipeline.generate_pairs(_chunks([72]), l_in=72, h=24, dn=24)
    assert pairs == [] and stats.pairs == 0


def test_pairs_starts_for_144_hours():
    pairs, stats = pipeline.generate_pairs(_chunks([144]), l_in=72, h=24, dn=24)
    assert [p.start for p in pairs] == [0, 24, 48]
    assert stats.pairs == 3
    assert oracles.enumerate_windows(144, 72, 24, 24) == [0, 24, 48]


def test_pairs_alignment_and_contents():
    chunks = _chunks([160])
    pairs, _ = pipeline.generate_pairs(chunks, l_in=72, h=24, dn=24)
    offset = pipeline.window_offset(72, 24)
    assert offset == 49
    for p in pairs:
        np.testing.assert_array_equal(p.input, chunks[0].a[p.start : p.start + 72])
        np.testing.assert_array_equal(
            p.target, chunks[0].b[p.start + offset : p.start + offset + 24]
        )
        # final target hour is one past the final input hour
        assert p.start + offset + 23 == p.start + 72


def test_pairs_match_enumeration_oracle(rng):
    for _ in range(40):
        lengths = [int(rng.integers(1, 400)) for _ in range(int(rng.integers(1, 5)))]
        l_in = int(rng.integers(4, 90))
        h = int(rng.integers(1, l_in + 1))
        dn = int(rng.integers(1, 40))
        pairs, stats = pipeline.generate_pairs(_chunks(lengths), l_in=l_in, h=h, dn=dn)
        expected = {
            (i, s): None
            for i, length in enumerate(lengths)
            for s in oracles.enumerate_windows(length, l_in, h, dn)
        }
        assert [(p.chunk_id, p.start) for p in pairs] == list(expected)
        assert stats.pairs == len(expected)
        assert stats.hrs_total == stats.pairs * l_in
        assert stats.n_u == stats.pairs * l_in * 3
        assert stats.n_y == stats.pairs * h * 2
        assert stats.n_total == stats.n_u + stats.n_y


def test_pairs_layout_mismatch():
    a = _chunks([100, 100])
    b = _chunks([100, 90])
    with pytest.raises(LayoutMismatchError):
        pipeline.generate_pairs(a, b)


def test_published_pair_accounting():
    # One chunk sized so the published training-set pair count falls out.
    length = 73 + 24 * 655
    starts = pipeline.valid_starts(length, 72, 24, 24)
    assert len(starts) == 656
    stats = pipeline.PairSetStats(656, 72, 24, 10, 4)
    assert stats.hrs_total == 47232
    assert stats.n_u == 472320
    assert stats.n_y == 62976
    assert stats.n_total == 535296


def test_pair_count_formula_reference():
    # floor((N+1)/dn) on the last index of a 15793-hour series
    assert pipeline.pair_count_formula(15792, 24) == 658  # boundary-free overcount
    assert pipeline.pair_count_formula(23, 24) == 1


@given(st.integers(2, 300), st.integers(1, 30))
def test_pairs_never_read_outside_chunk(length, dn):
    l_in = min(72, length)
    h = max(1, l_in // 3)
    chunks = _chunks([length])
    pairs, _ = pipeline.generate_pairs(chunks, l_in=l_in, h=h, dn=dn)
    offset = pipeline.window_offset(l_in, h)
    for p in pairs:
        assert p.start >= 0
        assert p.start + l_in - 1 <= length - 1 or p.start + offset + h - 1 <= length - 1
        assert p.start + offset + h - 1 <= length - 1
