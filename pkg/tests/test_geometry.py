from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cartoflow import geometry as geo
from cartoflow.errors import DegenerateInput, EmptyInput

DATA = Path(__file__).parent / "data"


def _random_points(rng, n, lo=0.0, hi=10.0):
    return rng.uniform(lo, hi, (n, 2))


def _nearest(points, locations):
    d = ((locations[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    return d.argmin(axis=1)


def test_unit_square_triangulation():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    tris = geo.delaunay_triangulate(sq)
    assert tris.shape == (2, 3)
    for t in tris:
        assert geo.orient2d(*sq[t]) > 0


def test_delaunay_empty_circumcircle():
    rng = np.random.default_rng(0)
    pts = _random_points(rng, 40)
    tris = geo.delaunay_triangulate(pts)
    centers = geo.circumcenters(tris, pts)
    for t, c in zip(tris, centers):
        r = np.linalg.norm(pts[t[0]] - c)
        d = np.linalg.norm(pts - c, axis=1)
        others = np.setdiff1d(np.arange(len(pts)), t)
        assert (d[others] > r - 1e-9).all()


def test_circumcenter_equidistant():
    pts = np.array([[0.0, 0.0], [4.0, 0.0], [1.0, 3.0]])
    c = geo.circumcenter([0, 1, 2], pts)
    d = np.linalg.norm(pts - c, axis=1)
    np.testing.assert_allclose(d, d[0], rtol=1e-12)
    np.testing.assert_allclose(c, [2.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("bad", [
    np.zeros((2, 2)) + [[0, 0], [1, 1]],
    np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
    np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
])
def test_degenerate_inputs_raise(bad):
    with pytest.raises(DegenerateInput):
        geo.delaunay_triangulate(bad)


def test_voronoi_matches_nearest_neighbour():
    rng = np.random.default_rng(1)
    for _ in range(5):
        pts = _random_points(rng, int(rng.integers(3, 13)))
        bbox = geo.padded_bbox(pts)
        cells = geo.voronoi_cells(pts, bbox)
        loc = np.column_stack([rng.uniform(bbox[0], bbox[2], 2000), rng.uniform(bbox[1], bbox[3], 2000)])
        np.testing.assert_array_equal(geo.owner_of(loc, cells), _nearest(pts, loc))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 30), st.integers(0, 10_000))
def test_voronoi_areas_tile_the_box(n, seed):
    pts = _random_points(np.random.default_rng(seed), n)
    bbox = geo.padded_bbox(pts)
    cells = geo.voronoi_cells(pts, bbox)
    areas = np.array([c.area for c in cells])
    assert (areas > 0).all()
    np.testing.assert_allclose(areas.sum(), geo.bbox_area(bbox), rtol=1e-9)
    for c in cells:
        # the owner lies in its own cell
        assert geo.owner_of(pts[c.owner], [c])[0] == c.owner


def test_one_and_two_points():
    bbox = (0.0, 0.0, 4.0, 2.0)
    one = geo.voronoi_cells([[1.0, 1.0]], bbox)
    assert one[0].area == pytest.approx(8.0)
    two = geo.voronoi_cells([[1.0, 1.0], [3.0, 1.0]], bbox)
    np.testing.assert_allclose([c.area for c in two], [4.0, 4.0])
    with pytest.raises(EmptyInput):
        geo.voronoi_cells(np.zeros((0, 2)), bbox)


def test_point_outside_bbox_rejected():
    with pytest.raises(DegenerateInput):
        geo.voronoi_cells([[0.0, 0.0], [1.0, 1.0], [5.0, 0.5]], (0.0, 0.0, 2.0, 2.0))


def test_polygon_area_and_centroid():
    tri = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
    assert geo.polygon_area(tri) == pytest.approx(4.5)
    assert geo.polygon_area(tri[::-1]) == pytest.approx(-4.5)
    np.testing.assert_allclose(geo.polygon_centroid(tri), [1.0, 1.0])


def test_clip_halfplane_square():
    sq = geo.box_polygon((0.0, 0.0, 2.0, 2.0))
    half = geo.clip_halfplane(sq, np.array([1.0, 0.0]), 1.0)  # keep x <= 1
    assert geo.polygon_area(half) == pytest.approx(2.0)


def test_regular_lattice_is_fixed_point():
    g = (np.arange(3) + 0.5) / 3
    pts = np.array([[x, y] for y in g for x in g])
    new = geo.relax_step(pts, (0.0, 0.0, 1.0, 1.0))
    np.testing.assert_allclose(new, pts, atol=1e-12)


def test_max_iter_zero_is_identity():
    pts = _random_points(np.random.default_rng(2), 12)
    lay = geo.build_cartogram(pts, max_iter=0)
    np.testing.assert_array_equal(lay.points, pts)
    assert lay.iterations_run == 0
    assert len(lay.area_cv_trace) == 1


def test_trace_lengths_and_tolerance():
    pts = _random_points(np.random.default_rng(3), 30)
    lay = geo.build_cartogram(pts, max_iter=200)
    assert len(lay.area_cv_trace) == lay.iterations_run + 1
    assert len(lay.max_displacement_trace) == lay.iterations_run
    if lay.iterations_run < 200:
        assert lay.max_displacement_trace[-1] < 1e-3 * geo.bbox_diagonal(lay.bbox)


def test_relaxation_homogenizes_clustered_fixture():
    from cartoflow.dataset import ingest_csv
    from cartoflow.pipeline import unique_stations

    _, pos = unique_stations(ingest_csv(DATA / "clustered_200.csv"))
    lay = geo.build_cartogram(pos, max_iter=20)
    assert lay.area_cv_trace[-1] < 0.5 * lay.area_cv_trace[0]
    x0, y0, x1, y1 = lay.bbox
    assert (lay.points[:, 0] >= x0).all() and (lay.points[:, 0] <= x1).all()


def test_relative_area_distribution():
    h = geo.relative_area_distribution([1.0, 2.0, 4.0], bins=4)
    np.testing.assert_allclose(h.relative, [0.25, 0.5, 1.0])
    assert h.counts.sum() == 3
    h2 = geo.relative_area_distribution([1.0, 2.0], bins=2, reference_area=4.0)
    np.testing.assert_allclose(h2.relative, [0.25, 0.5])


def test_layout_json_roundtrip(tmp_path):
    pts = _random_points(np.random.default_rng(4), 10)
    lay = geo.build_cartogram(pts, max_iter=5, station_ids=[f"s{i}" for i in range(10)])
    geo.layout_to_json(lay, tmp_path / "layout.json")
    back = geo.layout_from_json(tmp_path / "layout.json")
    np.testing.assert_array_equal(back.points, lay.points)
    assert back.station_ids == lay.station_ids
    assert back.area_cv_trace == lay.area_cv_trace
    np.testing.assert_allclose(back.areas, lay.areas)


def test_polygons_csv(tmp_path):
    pts = _random_points(np.random.default_rng(5), 6)
    cells = geo.voronoi_cells(pts, geo.padded_bbox(pts))
    geo.polygons_to_csv(cells, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().strip().splitlines()
    assert lines[0] == "owner,area,vertices"
    assert len(lines) == 7
