"""Spatial tessellations: square grids and irregular polygon covers.

A tessellation is a finite set of interior-disjoint tiles over a bounding
box. Coordinates are WGS84 degrees; metric work happens in a local
equirectangular projection centered on the bounding-box centroid, which is
accurate to well under 0.1% at city scale and keeps the module free of
geodesy dependencies.

Tessellations are immutable after construction, so lookups are safe from
concurrent readers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._kernels import points_in_ring

EARTH_RADIUS_M = 6_371_000.0


class TessellationError(ValueError):
    """Invalid tessellation input (overlaps, bad rings, bad parameters)."""


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate pair in degrees."""

    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0):
            raise TessellationError(f"longitude {self.lon} outside [-180, 180]")
        if not (-90.0 <= self.lat <= 90.0):
            raise TessellationError(f"latitude {self.lat} outside [-90, 90]")


@dataclass(frozen=True)
class BoundingBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        if not self.min_lon < self.max_lon:
            raise TessellationError(f"min_lon {self.min_lon} must be < max_lon {self.max_lon}")
        if not self.min_lat < self.max_lat:
            raise TessellationError(f"min_lat {self.min_lat} must be < max_lat {self.max_lat}")

    @property
    def center(self) -> GeoPoint:
        return GeoPoint(0.5 * (self.min_lon + self.max_lon), 0.5 * (self.min_lat + self.max_lat))

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lon <= p.lon <= self.max_lon and self.min_lat <= p.lat <= self.max_lat


def project_local(p: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    """Equirectangular projection of ``p`` to meters around ``origin``."""
    x = EARTH_RADIUS_M * math.radians(p.lon - origin.lon) * math.cos(math.radians(origin.lat))
    y = EARTH_RADIUS_M * math.radians(p.lat - origin.lat)
    return x, y


def unproject_local(x: float, y: float, origin: GeoPoint) -> GeoPoint:
    """Inverse of :func:`project_local`."""
    lon = origin.lon + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(origin.lat))))
    lat = origin.lat + math.degrees(y / EARTH_RADIUS_M)
    return GeoPoint(lon, lat)


@dataclass(frozen=True)
class Tile:
    """One polygon of a tessellation.

    ``ring`` is a closed (first == last vertex) lon/lat array of shape (v, 2);
    ``grid_pos`` is the (row, col) position for square-grid tiles.
    """

    id: int
    ring: np.ndarray
    grid_pos: tuple[int, int] | None = None

    def centroid(self) -> GeoPoint:
        # vertex mean is fine for the convex / near-convex tiles we handle
        pts = self.ring[:-1]
        return GeoPoint(float(pts[:, 0].mean()), float(pts[:, 1].mean()))


def _close_ring(ring: np.ndarray) -> np.ndarray:
    ring = np.asarray(ring, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2 or ring.shape[0] < 3:
        raise TessellationError(f"ring must be an (n>=3, 2) array, got shape {ring.shape}")
    if not np.array_equal(ring[0], ring[-1]):
        ring = np.vstack([ring, ring[0]])
    if ring.shape[0] < 4:
        raise TessellationError("ring needs at least 3 distinct vertices")
    return ring


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, px, py) -> bool:
    if _orient(ax, ay, bx, by, px, py) != 0.0:
        return False
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper crossing: the open segments intersect in a single interior point."""
    d1 = _orient(*q1, *q2, *p1)
    d2 = _orient(*q1, *q2, *p2)
    d3 = _orient(*p1, *p2, *q1)
    d4 = _orient(*p1, *p2, *q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0.0 not in (d1, d2, d3, d4)


def _ring_is_simple(ring: np.ndarray) -> bool:
    """No two non-adjacent edges touch; adjacent edges share only their endpoint."""
    n = ring.shape[0] - 1  # edge count
    edges = [(tuple(ring[i]), tuple(ring[i + 1])) for i in range(n)]
    for i in range(n):
        p1, p2 = edges[i]
        if p1 == p2:
            return False
        for j in range(i + 1, n):
            q1, q2 = edges[j]
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if _segments_cross(p1, p2, q1, q2):
                return False
            if adjacent:
                continue
            # non-adjacent edges must not touch at all
            for (a, b), pt in ((edges[i], q1), (edges[i], q2), (edges[j], p1), (edges[j], p2)):
                if _on_segment(*a, *b, *pt):
                    return False
    return True


def _interior_point(ring: np.ndarray) -> tuple[float, float]:
    """A point strictly inside a simple polygon (O'Rourke's diagonal method)."""
    pts = ring[:-1]
    n = pts.shape[0]
    area2 = float(np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1]))
    sign = 1.0 if area2 > 0 else -1.0
    # leftmost vertex is convex regardless of ring orientation
    vi = int(np.lexsort((pts[:, 1], pts[:, 0]))[0])
    a, v, b = pts[(vi - 1) % n], pts[vi], pts[(vi + 1) % n]
    best = None
    best_d = 0.0
    for q in pts:
        if np.array_equal(q, a) or np.array_equal(q, v) or np.array_equal(q, b):
            continue
        inside_tri = (
            sign * _orient(*a, *v, *q) >= 0
            and sign * _orient(*v, *b, *q) >= 0
            and sign * _orient(*b, *a, *q) >= 0
        )
        if inside_tri:
            # deepest vertex toward v; segment v-q then stays inside
            d = abs(_orient(*a, *b, *q))
            if d > best_d:
                best_d = d
                best = q
    if best is None:
        mid = (a + v + b) / 3.0  # empty corner triangle, centroid is interior
    else:
        mid = 0.5 * (v + best)
    return float(mid[0]), float(mid[1])


def _interiors_overlap(ring_a: np.ndarray, ring_b: np.ndarray) -> bool:
    """Whether two simple rings share interior area (shared edges do not count)."""
    if (
        ring_a[:, 0].max() < ring_b[:, 0].min()
        or ring_b[:, 0].max() < ring_a[:, 0].min()
        or ring_a[:, 1].max() < ring_b[:, 1].min()
        or ring_b[:, 1].max() < ring_a[:, 1].min()
    ):
        return False
    na, nb = ring_a.shape[0] - 1, ring_b.shape[0] - 1
    for i in range(na):
        for j in range(nb):
            if _segments_cross(tuple(ring_a[i]), tuple(ring_a[i + 1]), tuple(ring_b[j]), tuple(ring_b[j + 1])):
                return True
    # no proper crossings: containment (or identity) is the remaining overlap mode
    pa = np.array([_interior_point(ring_a)])
    pb = np.array([_interior_point(ring_b)])
    return bool(points_in_ring(ring_b, pa)[0]) or bool(points_in_ring(ring_a, pb)[0])


class Tessellation:
    """An ordered, interior-disjoint set of tiles over a bounding box.

    Build one with :func:`build_square_grid` or :func:`load_irregular`;
    instances are frozen after construction.
    """

    kind: str  # "square" | "irregular"

    def __init__(
        self,
        tiles: list[Tile],
        kind: str,
        bbox: BoundingBox,
        projection_origin: GeoPoint,
        side_m: float | None = None,
        rows: int | None = None,
        cols: int | None = None,
    ):
        if not tiles:
            raise TessellationError("tessellation needs at least one tile")
        self.tiles = tiles
        self.kind = kind
        self.bbox = bbox
        self.projection_origin = projection_origin
        self.side_m = side_m
        self.rows = rows
        self.cols = cols
        if kind == "square":
            bx, by = project_local(GeoPoint(bbox.min_lon, bbox.min_lat), projection_origin)
            self._grid_x0 = bx
            self._grid_y0 = by
        self._frozen = True

    def __setattr__(self, name, value):
        if getattr(self, "_frozen", False):
            raise AttributeError("Tessellation is immutable after construction")
        super().__setattr__(name, value)

    @property
    def n(self) -> int:
        return len(self.tiles)

    def locate(self, p: GeoPoint) -> int | None:
        """Id of the tile containing ``p``; boundary ties go to the lowest id."""
        res = self.locate_many(np.array([p.lon]), np.array([p.lat]))
        return None if res[0] < 0 else int(res[0])

    def locate_many(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`locate`; returns int64 ids with -1 for no tile."""
        lons = np.asarray(lons, dtype=np.float64)
        lats = np.asarray(lats, dtype=np.float64)
        if self.kind == "square":
            return self._locate_grid(lons, lats)
        return self._locate_scan(lons, lats)

    def _locate_grid(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        ox, oy = self.projection_origin.lon, self.projection_origin.lat
        scale = EARTH_RADIUS_M * math.pi / 180.0
        x = (lons - ox) * scale * math.cos(math.radians(oy))
        y = (lats - oy) * scale
        u = (x - self._grid_x0) / self.side_m
        v = (y - self._grid_y0) / self.side_m
        # absorb float noise so points meant to sit on a grid line land on it
        u = np.where(np.abs(u - np.round(u)) < 1e-9, np.round(u), u)
        v = np.where(np.abs(v - np.round(v)) < 1e-9, np.round(v), v)
        col = np.floor(u)
        row = np.floor(v)
        # a point exactly on an interior grid line belongs to both neighbors;
        # the lowest-id (lower row/col) tile wins
        col = np.where((u == col) & (col >= 1), col - 1, col)
        row = np.where((v == row) & (row >= 1), row - 1, row)
        ids = (row * self.cols + col).astype(np.int64)
        outside = (col < 0) | (col >= self.cols) | (row < 0) | (row >= self.rows)
        ids[outside] = -1
        return ids

    def _locate_scan(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        pts = np.column_stack([lons, lats])
        ids = np.full(pts.shape[0], -1, dtype=np.int64)
        pending = np.arange(pts.shape[0])
        for tile in self.tiles:  # id order makes the first hit the lowest id
            if pending.size == 0:
                break
            ring = tile.ring
            sub = pending[
                (pts[pending, 0] >= ring[:, 0].min())
                & (pts[pending, 0] <= ring[:, 0].max())
                & (pts[pending, 1] >= ring[:, 1].min())
                & (pts[pending, 1] <= ring[:, 1].max())
            ]
            if sub.size == 0:
                continue
            hit = points_in_ring(ring, pts[sub])
            ids[sub[hit]] = tile.id
            pending = pending[ids[pending] < 0]
        return ids

    def to_geojson(self) -> dict:
        """Tiles as a GeoJSON FeatureCollection (Polygon features)."""
        features = []
        for t in self.tiles:
            props: dict = {"id": t.id}
            if t.grid_pos is not None:
                props["grid_row"], props["grid_col"] = t.grid_pos
            features.append(
                {
                    "type": "Feature",
                    "properties": props,
                    "geometry": {"type": "Polygon", "coordinates": [t.ring.tolist()]},
                }
            )
        return {"type": "FeatureCollection", "features": features}

    def save_geojson(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_geojson(), fh)
            fh.write("\n")


def build_square_grid(bbox: BoundingBox, side_m: float) -> Tessellation:
    """Regular grid of ``side_m``-sized squares covering ``bbox``.

    Rows/cols come from ceil division, so the grid may overhang the box on
    the max-lon/max-lat edges; tiles are laid out row-major from the
    (min_lon, min_lat) corner.
    """
    if side_m <= 0:
        raise TessellationError(f"side_m must be positive, got {side_m}")
    origin = bbox.center
    x0, y0 = project_local(GeoPoint(bbox.min_lon, bbox.min_lat), origin)
    x1, y1 = project_local(GeoPoint(bbox.max_lon, bbox.max_lat), origin)
    width, height = x1 - x0, y1 - y0
    if width <= 0 or height <= 0:
        raise TessellationError("bounding box has zero area")
    # tolerate float noise from the degrees<->meters round trip so an
    # exact-multiple box does not gain a sliver row or column
    cols = math.ceil(width / side_m - 1e-9)
    rows = math.ceil(height / side_m - 1e-9)
    tiles = []
    for r in range(rows):
        for c in range(cols):
            xa, ya = x0 + c * side_m, y0 + r * side_m
            xb, yb = xa + side_m, ya + side_m
            corners = [(xa, ya), (xb, ya), (xb, yb), (xa, yb), (xa, ya)]
            ring = np.array([[*_lonlat(unproject_local(x, y, origin))] for x, y in corners])
            tiles.append(Tile(id=r * cols + c, ring=ring, grid_pos=(r, c)))
    return Tessellation(tiles, "square", bbox, origin, side_m=side_m, rows=rows, cols=cols)


def _lonlat(p: GeoPoint) -> tuple[float, float]:
    return p.lon, p.lat


def load_irregular(polygons: Sequence[np.ndarray] | Iterable[Sequence]) -> Tessellation:
    """Tessellation from a sequence of lon/lat rings (input order gives ids).

    Each ring must be simple; interiors must be pairwise disjoint (shared
    boundaries are fine). Violations raise :class:`TessellationError` naming
    the offending tile(s).
    """
    rings = [_close_ring(np.asarray(p, dtype=np.float64)) for p in polygons]
    if not rings:
        raise TessellationError("no polygons given")
    for i, ring in enumerate(rings):
        if not _ring_is_simple(ring):
            raise TessellationError(f"polygon {i} is self-intersecting")
    for i in range(len(rings)):
        for j in range(i + 1, len(rings)):
            if _interiors_overlap(rings[i], rings[j]):
                raise TessellationError(f"polygons {i} and {j} have overlapping interiors")
    all_pts = np.vstack([r[:-1] for r in rings])
    bbox = BoundingBox(
        float(all_pts[:, 0].min()),
        float(all_pts[:, 1].min()),
        float(all_pts[:, 0].max()),
        float(all_pts[:, 1].max()),
    )
    tiles = [Tile(id=i, ring=r) for i, r in enumerate(rings)]
    return Tessellation(tiles, "irregular", bbox, bbox.center)


def load_irregular_geojson(source: str | dict) -> Tessellation:
    """Irregular tessellation from a GeoJSON FeatureCollection of Polygons.

    Features are ordered by their integer "id" property when every feature
    has one, else kept in input order; tile ids are then assigned 0..n-1.
    """
    if isinstance(source, str):
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = source
    if doc.get("type") != "FeatureCollection":
        raise TessellationError("expected a GeoJSON FeatureCollection")
    feats = doc.get("features", [])
    keyed = []
    for order, feat in enumerate(feats):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise TessellationError(f"feature {order}: only Polygon geometries are supported")
        props = feat.get("properties") or {}
        keyed.append((props.get("id", None), order, geom["coordinates"][0]))
    if keyed and all(k[0] is not None for k in keyed):
        ids = [k[0] for k in keyed]
        if len(set(ids)) != len(ids):
            raise TessellationError("duplicate feature ids in GeoJSON")
        keyed.sort(key=lambda k: (k[0], k[1]))
    return load_irregular([np.asarray(k[2], dtype=np.float64) for k in keyed])


def ring_area_m2(ring: np.ndarray, origin: GeoPoint) -> float:
    """Shoelace area of a lon/lat ring in projected square meters."""
    xy = np.array([project_local(GeoPoint(float(lo), float(la)), origin) for lo, la in ring])
    x, y = xy[:-1, 0], xy[:-1, 1]
    xn, yn = xy[1:, 0], xy[1:, 1]
    return abs(float(np.sum(x * yn - xn * y))) / 2.0


def bbox_from_meters(center: GeoPoint, width_m: float, height_m: float) -> BoundingBox:
    """Bounding box of the given metric size centered on ``center``."""
    half_w = math.degrees(width_m / (2.0 * EARTH_RADIUS_M * math.cos(math.radians(center.lat))))
    half_h = math.degrees(height_m / (2.0 * EARTH_RADIUS_M))
    return BoundingBox(center.lon - half_w, center.lat - half_h, center.lon + half_w, center.lat + half_h)
