"""Density-equalizing cartogram by iterated Voronoi recentring.

Each iteration triangulates the current station positions, takes the
circumcentres of the triangles as the Voronoi vertices, assembles one
polygon per station (clipped to a fixed bounding box) and moves every
station to the area centroid of its polygon.  Repeating this until the
positions stop moving spreads dense clusters of stations out so that every
polygon ends up with roughly the same area.

Points are ``(n, 2)`` float arrays in km.  A bounding box is the tuple
``(xmin, ymin, xmax, ymax)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import DegenerateInput, EmptyInput

BBox = tuple[float, float, float, float]

#: relative tolerance for cocircular / collinear decisions (times bbox diagonal)
GEOM_EPS = 1e-9


@dataclass
class VoronoiPolygon:
    owner: int
    vertices: np.ndarray  # (m, 2), counterclockwise
    area: float

    @property
    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.vertices)


@dataclass
class CartogramLayout:
    points: np.ndarray
    polygons: list[VoronoiPolygon]
    bbox: BBox
    iterations_run: int = 0
    area_cv_trace: list[float] = field(default_factory=list)
    max_displacement_trace: list[float] = field(default_factory=list)
    initial_points: np.ndarray | None = None
    station_ids: list[str] | None = None

    @property
    def areas(self) -> np.ndarray:
        return np.array([p.area for p in self.polygons])


# ---------------------------------------------------------------------------
# small polygon / box helpers


def bbox_diagonal(bbox: BBox) -> float:
    return float(np.hypot(bbox[2] - bbox[0], bbox[3] - bbox[1]))


def bbox_area(bbox: BBox) -> float:
    return float((bbox[2] - bbox[0]) * (bbox[3] - bbox[1]))


def padded_bbox(points, pad: float = 0.05) -> BBox:
    """Axis-aligned extent of ``points`` grown by ``pad`` of the extent per side.

    An axis with zero extent borrows the other axis' extent (or 1 km when
    both are zero) so the box never collapses.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = hi - lo
    if ext.max() == 0:
        ext = np.ones(2)
    ext = np.where(ext > 0, ext, ext.max())
    lo, hi = lo - pad * ext, hi + pad * ext
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def box_polygon(bbox: BBox) -> np.ndarray:
    x0, y0, x1, y1 = bbox
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise order)."""
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if abs(a) < 1e-300:
        return vertices.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return np.array([cx, cy])


def clip_halfplane(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Keep the part of convex ``poly`` where ``normal . p <= offset``."""
    if len(poly) == 0:
        return poly
    d = poly @ normal - offset
    inside = d <= 0
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    out = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        dp, dq = d[k], d[(k + 1) % n]
        if dp <= 0:
            out.append(p)
        if (dp <= 0) != (dq <= 0):
            s = dp / (dp - dq)
            out.append(p + s * (q - p))
    return np.array(out)


def clip_to_bbox(poly: np.ndarray, bbox: BBox) -> np.ndarray:
    x0, y0, x1, y1 = bbox
    for normal, off in (
        ((-1.0, 0.0), -x0),
        ((1.0, 0.0), x1),
        ((0.0, -1.0), -y0),
        ((0.0, 1.0), y1),
    ):
        poly = clip_halfplane(poly, np.array(normal), off)
    return poly


def _dedupe(poly: np.ndarray, tol: float) -> np.ndarray:
    if len(poly) < 2:
        return poly
    nxt = np.roll(poly, -1, axis=0)
    keep = np.linalg.norm(poly - nxt, axis=1) > tol
    if not keep.any():
        return poly[:1]
    return poly[keep]


# ---------------------------------------------------------------------------
# triangulation


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateInput(f"expected an (n, 2) array of points, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise DegenerateInput("points must be finite")
    return pts


def check_points(points, eps: float | None = None) -> np.ndarray:
    """Validate a point set for triangulation and return it as an array.

    Raises :class:`DegenerateInput` for fewer than three points, exact
    duplicates, or an (almost) collinear set.
    """
    pts = _as_points(points)
    n = len(pts)
    if n < 3:
        raise DegenerateInput(f"need at least 3 points to triangulate, got {n}")
    if len(np.unique(pts, axis=0)) < n:
        raise DegenerateInput("duplicate points")
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if eps is None:
        eps = GEOM_EPS * diag
    centered = pts - pts.mean(axis=0)
    # smallest singular value measures spread off the best-fit line
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] / np.sqrt(n) <= eps:
        raise DegenerateInput("points are collinear")
    return pts


def orient2d(a, b, c) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def delaunay_triangulate(points) -> np.ndarray:
    """Delaunay triangles as an ``(k, 3)`` index array, counterclockwise."""
    pts = check_points(points)
    try:
        tri = Delaunay(pts)
    except QhullError as exc:  # pragma: no cover - check_points catches these first
        raise DegenerateInput(str(exc)) from exc
    if len(tri.coplanar):
        raise DegenerateInput("near-duplicate points were dropped by the triangulation")
    simplices = tri.simplices.copy()
    a, b, c = (pts[simplices[:, k]] for k in range(3))
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = det < 0
    simplices[flip, 1], simplices[flip, 2] = simplices[flip, 2], simplices[flip, 1].copy()
    return simplices


def circumcenter(triangle, points) -> np.ndarray:
    """Centre of the circle through the three vertices of ``triangle``."""
    pts = np.asarray(points, dtype=float)
    a, b, c = (pts[int(k)] for k in triangle)
    return _circumcenters(a[None], b[None], c[None])[0]


def _circumcenters(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    # translate to a for accuracy
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    d = 2.0 * (bx * cy - by * cx)
    scale = np.maximum.reduce([bx * bx + by * by, cx * cx + cy * cy])
    if np.any(np.abs(d) <= GEOM_EPS * scale):
        raise DegenerateInput("collinear triangle has no circumcentre")
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    return np.column_stack([ux + a[:, 0], uy + a[:, 1]])


def circumcenters(triangles: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    tri = np.asarray(triangles, dtype=int)
    return _circumcenters(pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]])


# ---------------------------------------------------------------------------
# Voronoi cells


def _halfplane_cell(pts: np.ndarray, i: int, neighbors, bbox: BBox) -> np.ndarray:
    poly = box_polygon(bbox)
    p = pts[i]
    for j in neighbors:
        q = pts[j]
        normal = q - p
        offset = float(normal @ (p + q)) / 2.0
        poly = clip_halfplane(poly, normal, offset)
    return poly


def _check_bbox(pts: np.ndarray, bbox: BBox) -> None:
    x0, y0, x1, y1 = bbox
    if not (x1 > x0 and y1 > y0):
        raise DegenerateInput(f"empty bounding box {bbox}")
    inside = (pts[:, 0] > x0) & (pts[:, 0] < x1) & (pts[:, 1] > y0) & (pts[:, 1] < y1)
    if not inside.all():
        raise DegenerateInput("bounding box must strictly contain every point")


def voronoi_cells(points, bbox: BBox) -> list[VoronoiPolygon]:
    """Voronoi polygon of every point, clipped to ``bbox``.

    Cells of interior points are the circumcentres of their incident
    Delaunay triangles taken in fan order, then clipped to the box.  Cells
    of convex-hull points are unbounded, so they are cut out of the box by
    the perpendicular bisectors to their Delaunay neighbours instead.
    One- and two-point inputs skip triangulation.
    """
    pts = _as_points(points)
    if len(pts) == 0:
        raise EmptyInput("no points")
    _check_bbox(pts, bbox)
    tol = GEOM_EPS * bbox_diagonal(bbox)
    n = len(pts)
    if n <= 2:
        if n == 2 and np.array_equal(pts[0], pts[1]):
            raise DegenerateInput("duplicate points")
        cells = [_halfplane_cell(pts, i, [j for j in range(n) if j != i], bbox) for i in range(n)]
        return [VoronoiPolygon(i, c, polygon_area(c)) for i, c in enumerate(cells)]

    tris = delaunay_triangulate(pts)
    centers = circumcenters(tris, pts)
    incident: list[list[int]] = [[] for _ in range(n)]
    neighbors: list[set[int]] = [set() for _ in range(n)]
    for k, (a, b, c) in enumerate(tris):
        for v, o1, o2 in ((a, b, c), (b, c, a), (c, a, b)):
            incident[v].append(k)
            neighbors[v].update((o1, o2))
    on_hull = np.zeros(n, dtype=bool)
    # a hull edge belongs to exactly one triangle
    edge_count: dict[tuple[int, int], int] = {}
    for a, b, c in tris:
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            edge_count[key] = edge_count.get(key, 0) + 1
    for (u, v), cnt in edge_count.items():
        if cnt == 1:
            on_hull[u] = on_hull[v] = True

    tri_centroids = pts[tris].mean(axis=1)
    polygons = []
    for i in range(n):
        if on_hull[i]:
            poly = _halfplane_cell(pts, i, sorted(neighbors[i]), bbox)
        else:
            ks = np.array(incident[i])
            rel = tri_centroids[ks] - pts[i]
            order = np.argsort(np.arctan2(rel[:, 1], rel[:, 0]))
            poly = clip_to_bbox(centers[ks[order]], bbox)
        poly = _dedupe(poly, tol)
        polygons.append(VoronoiPolygon(i, poly, polygon_area(poly)))
    return polygons


def owner_of(locations, polygons: list[VoronoiPolygon]) -> np.ndarray:
    """Index of the polygon containing each location (-1 if none).

    Locations on a shared edge go to the first polygon in list order.
    """
    loc = np.asarray(locations, dtype=float).reshape(-1, 2)
    owner = np.full(len(loc), -1)
    for poly in polygons:
        v = poly.vertices
        if len(v) < 3:
            continue
        e = np.roll(v, -1, axis=0) - v
        rel = loc[:, None, :] - v[None, :, :]
        cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
        tol = 1e-12 * max(1.0, float(np.abs(v).max()) ** 2)
        inside = (cross >= -tol).all(axis=1) & (owner < 0)
        owner[inside] = poly.owner
    return owner


# ---------------------------------------------------------------------------
# relaxation


def area_cv(polygons: list[VoronoiPolygon]) -> float:
    """Coefficient of variation (population std / mean) of polygon areas."""
    areas = np.array([p.area for p in polygons])
    return float(areas.std() / areas.mean())


def relax_step(points, bbox: BBox) -> np.ndarray:
    """Move every point to the area centroid of its clipped Voronoi polygon."""
    cells = voronoi_cells(points, bbox)
    new = np.array([polygon_centroid(c.vertices) for c in cells])
    x0, y0, x1, y1 = bbox
    new[:, 0] = np.clip(new[:, 0], x0, x1)
    new[:, 1] = np.clip(new[:, 1], y0, y1)
    return new


def build_cartogram(
    points,
    bbox: BBox | None = None,
    tol_displacement: float | None = None,
    max_iter: int = 100,
    station_ids: list[str] | None = None,
) -> CartogramLayout:
    """Relax ``points`` until the largest move drops below ``tol_displacement``.

    Defaults: box = station extent padded by 5% per side, tolerance =
    1e-3 of the box diagonal.
    """
    if max_iter < 0:
        raise ValueError("max_iter must be >= 0")
    pts = _as_points(points).copy()
    if bbox is None:
        bbox = padded_bbox(pts)
    if tol_displacement is None:
        tol_displacement = 1e-3 * bbox_diagonal(bbox)
    initial = pts.copy()

    cells = voronoi_cells(pts, bbox)
    cv_trace = [area_cv(cells)]
    disp_trace: list[float] = []
    it = 0
    while it < max_iter:
        new = np.array([polygon_centroid(c.vertices) for c in cells])
        new[:, 0] = np.clip(new[:, 0], bbox[0], bbox[2])
        new[:, 1] = np.clip(new[:, 1], bbox[1], bbox[3])
        disp = float(np.linalg.norm(new - pts, axis=1).max())
        pts = new
        it += 1
        cells = voronoi_cells(pts, bbox)
        cv_trace.append(area_cv(cells))
        disp_trace.append(disp)
        if disp < tol_displacement:
            break
    return CartogramLayout(
        points=pts,
        polygons=cells,
        bbox=tuple(float(b) for b in bbox),
        iterations_run=it,
        area_cv_trace=cv_trace,
        max_displacement_trace=disp_trace,
        initial_points=initial,
        station_ids=list(station_ids) if station_ids is not None else None,
    )


@dataclass
class AreaHistogram:
    edges: np.ndarray
    counts: np.ndarray
    relative: np.ndarray


def relative_area_distribution(polygons, bins: int = 20, reference_area: float | None = None) -> AreaHistogram:
    """Histogram of polygon areas divided by the largest area.

    ``reference_area`` overrides the divisor, so a relaxed layout can be put
    on the same scale as the original one.
    """
    if len(polygons) == 0:
        raise EmptyInput("no polygons")
    areas = np.array([p.area if isinstance(p, VoronoiPolygon) else float(p) for p in polygons])
    rel = areas / (areas.max() if reference_area is None else reference_area)
    top = max(1.0, float(rel.max()))
    counts, edges = np.histogram(rel, bins=bins, range=(0.0, top))
    return AreaHistogram(edges=edges, counts=counts, relative=rel)


# ---------------------------------------------------------------------------
# export / import


def layout_to_json(layout: CartogramLayout, path) -> None:
    doc = {
        "points": layout.points.tolist(),
        "iterations": layout.iterations_run,
        "area_cv_trace": layout.area_cv_trace,
        "max_displacement_trace": layout.max_displacement_trace,
        "bbox": list(layout.bbox),
    }
    if layout.station_ids is not None:
        doc["station_ids"] = layout.station_ids
    if layout.initial_points is not None:
        doc["initial_points"] = layout.initial_points.tolist()
    Path(path).write_text(json.dumps(doc, indent=1))


def layout_from_json(path) -> CartogramLayout:
    doc = json.loads(Path(path).read_text())
    pts = np.array(doc["points"], dtype=float).reshape(-1, 2)
    bbox = tuple(doc["bbox"]) if "bbox" in doc else padded_bbox(pts)
    init = doc.get("initial_points")
    return CartogramLayout(
        points=pts,
        polygons=voronoi_cells(pts, bbox),
        bbox=bbox,
        iterations_run=int(doc["iterations"]),
        area_cv_trace=list(doc["area_cv_trace"]),
        max_displacement_trace=list(doc.get("max_displacement_trace", [])),
        initial_points=None if init is None else np.array(init, dtype=float).reshape(-1, 2),
        station_ids=doc.get("station_ids"),
    )


def polygons_to_csv(polygons: list[VoronoiPolygon], path) -> None:
    """One row per polygon; vertices as ``x y`` pairs joined by ``;``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["owner", "area", "vertices"])
        for p in polygons:
            w.writerow([p.owner, repr(p.area), ";".join(f"{x!r} {y!r}" for x, y in p.vertices)])
