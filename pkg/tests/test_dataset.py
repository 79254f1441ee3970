from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cartoflow import dataset as ds
from cartoflow.errors import (
    InsufficientHistory,
    NegativeCount,
    NonUniformT,
    OutOfBounds,
    SchemaError,
    ValidationError,
    WindowOutOfRange,
)

DATA = Path(__file__).parent / "data"
HEADER = "station_id,kind,timestamp_hour,count,x_km,y_km\n"


def _csv(tmp_path, body, header=HEADER):
    p = tmp_path / "s.csv"
    p.write_text(header + body)
    return p


def test_ingest_small_fixture():
    recs = ds.ingest_csv(DATA / "stations_small.csv")
    assert len(recs) == 6
    rent = {r.station_id: r for r in ds.select_kind(recs, "rental")}
    np.testing.assert_array_equal(rent["ST-101"].demand, [2, 0, 1, 3, 5, 4])
    np.testing.assert_array_equal(rent["ST-207"].position, [1.7, 1.8])
    assert all(r.T == 6 for r in recs)


def test_csv_roundtrip(tmp_path):
    recs = ds.ingest_csv(DATA / "stations_small.csv")
    ds.write_csv(recs, tmp_path / "out.csv")
    back = ds.ingest_csv(tmp_path / "out.csv")
    for a, b in zip(recs, back):
        assert (a.station_id, a.kind) == (b.station_id, b.kind)
        np.testing.assert_array_equal(a.demand, b.demand)
        np.testing.assert_array_equal(a.position, b.position)


def test_missing_column(tmp_path):
    with pytest.raises(SchemaError):
        ds.ingest_csv(_csv(tmp_path, "a,rental,1,1,0\n", header="station_id,kind,timestamp_hour,count,x_km\n"))


def test_negative_count(tmp_path):
    with pytest.raises(NegativeCount):
        ds.ingest_csv(_csv(tmp_path, "a,rental,1,-1,0,0\n"))


def test_bad_kind(tmp_path):
    with pytest.raises(SchemaError):
        ds.ingest_csv(_csv(tmp_path, "a,borrow,1,1,0,0\n"))


def test_non_uniform_length(tmp_path):
    body = "a,rental,1,1,0,0\na,rental,2,1,0,0\nb,rental,1,3,1,1\n"
    with pytest.raises(NonUniformT):
        ds.ingest_csv(_csv(tmp_path, body))


def test_duplicate_hour(tmp_path):
    with pytest.raises(NonUniformT):
        ds.ingest_csv(_csv(tmp_path, "a,rental,1,1,0,0\na,rental,1,2,0,0\n"))


def test_station_moving(tmp_path):
    with pytest.raises(SchemaError):
        ds.ingest_csv(_csv(tmp_path, "a,rental,1,1,0,0\na,rental,2,1,0,1\n"))


def test_cell_index_convention():
    g = ds.GridSpec(rows=2, cols=3, cell_size=1.0)
    pts = [[0.5, 0.5], [2.5, 0.5], [0.5, 1.5], [1.0, 0.0], [3.0, 2.0]]
    # row-major from the bottom, half-open bins, far edges folded in
    np.testing.assert_array_equal(g.cell_index(pts), [0, 2, 3, 1, 5])
    with pytest.raises(OutOfBounds):
        g.cell_index([[3.5, 0.5]])


def test_grid_spec_validation():
    with pytest.raises(ValidationError):
        ds.GridSpec(0, 2, 1.0)
    with pytest.raises(ValidationError):
        ds.GridSpec(2, 2, -1.0)


def test_covering_grid_extent():
    g = ds.GridSpec.covering((1.0, 2.0, 4.0, 8.0), 3, 2)
    assert g.extent == pytest.approx((1.0, 2.0, 4.0, 8.0))
    assert g.cell_size == pytest.approx(1.5) and g.dy == pytest.approx(2.0)


def test_bin_small_fixture_by_hand():
    recs = ds.select_kind(ds.ingest_csv(DATA / "stations_small.csv"), "rental")
    series = ds.bin_to_grid(recs, ds.GridSpec(2, 2, 1.0))
    # ST-101 -> cell 0, ST-102 -> cell 1, ST-207 -> cell 3
    np.testing.assert_array_equal(series.X[0], [2, 0, 1, 3, 5, 4])
    np.testing.assert_array_equal(series.X[1], [1, 1, 0, 0, 2, 3])
    np.testing.assert_array_equal(series.X[2], 0)
    np.testing.assert_array_equal(series.X[3], [0, 2, 2, 1, 0, 1])
    np.testing.assert_array_equal(series.empty_cells(), [2])
    np.testing.assert_array_equal(series.at(5), [5, 2, 0, 0])


def test_bin_with_layout_coordinates():
    recs = ds.select_kind(ds.ingest_csv(DATA / "stations_small.csv"), "rental")
    moved = np.array([[0.2, 0.2], [0.3, 0.3], [1.5, 1.5]])
    series = ds.bin_to_grid(recs, ds.GridSpec(2, 2, 1.0), moved)
    np.testing.assert_array_equal(series.cell_of_station, [0, 0, 3])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_binning_conserves_demand(n, rows, cols, seed):
    rng = np.random.default_rng(seed)
    recs = [ds.StationRecord(f"s{j}", rng.uniform(0, 1, 2) * [cols, rows], rng.poisson(2.0, 7))
            for j in range(n)]
    series = ds.bin_to_grid(recs, ds.GridSpec(rows, cols, 1.0))
    np.testing.assert_array_equal(series.X.sum(axis=0), sum(r.demand for r in recs))
    members = np.sort(np.concatenate(series.membership))
    np.testing.assert_array_equal(members, np.arange(n))


def test_grid_series_roundtrip(tmp_path):
    recs = ds.select_kind(ds.ingest_csv(DATA / "stations_small.csv"), "return")
    series = ds.bin_to_grid(recs, ds.GridSpec(2, 2, 1.0))
    ds.write_grid_series(series, tmp_path / "g.csv")
    back = ds.read_grid_series(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.X, series.X)
    assert back.grid == series.grid
    for a, b in zip(back.membership, series.membership):
        np.testing.assert_array_equal(a, b)


def test_resolution_history_and_first_pivot():
    cfg = ds.ResolutionConfig()
    assert cfg.history == 336
    assert cfg.first_pivot() == 336
    with pytest.raises(ValidationError):
        ds.ResolutionConfig(dt_d=12)


def test_build_sequence_by_hand():
    X = np.arange(1, 401)[None, :]  # hour t holds value t
    cfg = ds.ResolutionConfig()
    np.testing.assert_array_equal(ds.build_sequence(X, 0, 340, "h", cfg), [340, 339, 338])
    np.testing.assert_array_equal(ds.build_sequence(X, 0, 340, "d", cfg), [317, 293, 269])
    np.testing.assert_array_equal(ds.build_sequence(X, 0, 340, "w", cfg), [173, 5])
    with pytest.raises(WindowOutOfRange):
        ds.build_sequence(X, 0, 335, "w", cfg)


def test_make_triplet_agrees_with_build_sequence():
    rng = np.random.default_rng(0)
    X = rng.poisson(3.0, (4, 400))
    cfg = ds.ResolutionConfig()
    trip = ds.make_triplet(X, [336, 350, 399], cfg)
    for b, t in enumerate(trip.pivot_times):
        for i in range(4):
            for r in ds.RESOLUTIONS:
                np.testing.assert_array_equal(trip[r][b, i], ds.build_sequence(X, i, t, r, cfg))
        np.testing.assert_array_equal(trip.target[b], X[:, t])
    with pytest.raises(InsufficientHistory):
        ds.make_triplet(X, [400], cfg)


def test_sample_batch_is_seeded_and_distinct():
    X = np.random.default_rng(1).poisson(2.0, (3, 500))
    cfg = ds.ResolutionConfig()
    a = ds.sample_batch(X, cfg, 16, 7)
    b = ds.sample_batch(X, cfg, 16, 7)
    np.testing.assert_array_equal(a.pivot_times, b.pivot_times)
    assert len(set(a.pivot_times)) == 16
    with pytest.raises(InsufficientHistory):
        ds.sample_batch(X[:, :340], cfg, 16, 0)
