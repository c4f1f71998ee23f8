"""Geographic primitives, reverse geocoding and nearest-well owner assignment.

Distances are great-circle (haversine) on a sphere of radius ``R_E``; the
default radius is 6371 km. Polygons are rings of ``(lon, lat)`` vertices as
in GeoJSON.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

R_EARTH_M = 6_371_000.0
D_SECURE_M = 300.0
D_CUTOFF_M = 800.0
EDGE_TOL_DEG = 1e-12
DATUMS = ("WGS84", "NAD27")
POLYGON_KINDS = ("county", "oilfield", "trs-section")
DECISIONS = ("kept_secure", "kept_section_match", "dropped_far", "dropped_section_mismatch")
OWNER_COLUMNS = ("detection_id", "operator", "distance_m", "decision")

# (semi-major axis m, flattening)
CLARKE_1866 = (6378206.4, 1.0 / 294.9786982)
WGS84_ELLIPSOID = (6378137.0, 1.0 / 298.257223563)
CONUS_SHIFT = (-8.0, 160.0, 176.0)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    datum: str = "WGS84"

    def __post_init__(self):
        if self.datum not in DATUMS:
            raise ValidationError(f"unknown datum {self.datum!r}")
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")


def _check_ring(ring, what):
    ring = np.asarray(ring, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise ValidationError(f"{what} must be a sequence of (lon, lat) pairs")
    if ring.shape[0] < 4:
        raise ValidationError(f"{what} needs at least 4 vertices")
    if not np.array_equal(ring[0], ring[-1]):
        raise ValidationError(f"{what} is not closed (first vertex != last)")
    return ring


@dataclass(frozen=True)
class GeoPolygon:
    """One polygon: an outer ring plus optional holes, vertices as (lon, lat)."""

    id: object
    kind: str
    outer: np.ndarray
    holes: tuple = ()
    datum: str = "WGS84"
    props: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POLYGON_KINDS:
            raise ValidationError(f"unknown polygon kind {self.kind!r}")
        if self.datum not in DATUMS:
            raise ValidationError(f"unknown datum {self.datum!r}")
        object.__setattr__(self, "outer", _check_ring(self.outer, f"outer ring of {self.id!r}"))
        object.__setattr__(self, "holes", tuple(_check_ring(h, f"hole of {self.id!r}") for h in self.holes))

    @property
    def bbox(self):
        lon, lat = self.outer[:, 0], self.outer[:, 1]
        return lon.min(), lat.min(), lon.max(), lat.max()


def _id_key(v):
    # numeric ids order numerically, everything else lexically after them
    if isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool):
        return (0, float(v), "")
    return (1, 0.0, str(v))


# ---------------------------------------------------------------- distances


def haversine_m(lat1, lon1, lat2, lon2, radius=R_EARTH_M):
    """Vectorized great-circle distance in meters between degree coordinates."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine(a: GeoPoint, b: GeoPoint, radius=R_EARTH_M) -> float:
    if a.datum != b.datum:
        raise ValidationError(f"datum mismatch: {a.datum} vs {b.datum}")
    return float(haversine_m(a.lat, a.lon, b.lat, b.lon, radius))


# ---------------------------------------------------------------- datums


def _molodensky(lat, lon, shift, src, dst, h=0.0):
    """Abridged-free (standard) Molodensky shift; returns new (lat, lon) degrees."""
    dx, dy, dz = shift
    a, f = src
    da, df = dst[0] - src[0], dst[1] - src[1]
    phi, lam = np.radians(lat), np.radians(lon)
    e2 = f * (2.0 - f)
    sp, cp, sl, cl = np.sin(phi), np.cos(phi), np.sin(lam), np.cos(lam)
    w = np.sqrt(1.0 - e2 * sp**2)
    rn = a / w
    rm = a * (1.0 - e2) / w**3
    b_over_a = 1.0 - f
    dphi = (
        -dx * sp * cl
        - dy * sp * sl
        + dz * cp
        + da * (rn * e2 * sp * cp) / a
        + df * (rm / b_over_a + rn * b_over_a) * sp * cp
    ) / (rm + h)
    dlam = (-dx * sl + dy * cl) / ((rn + h) * cp)
    return lat + np.degrees(dphi), lon + np.degrees(dlam)


def nad27_to_wgs84_deg(lat, lon, shift=CONUS_SHIFT):
    """Vectorized NAD27 -> WGS84 for degree arrays."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if not any(shift):
        return lat.copy(), lon.copy()
    return _molodensky(lat, lon, shift, CLARKE_1866, WGS84_ELLIPSOID)


def wgs84_to_nad27_deg(lat, lon, shift=CONUS_SHIFT, tol=1e-12, max_iter=50):
    """Inverse of :func:`nad27_to_wgs84_deg` by fixed-point iteration."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    y, x = lat.copy(), lon.copy()
    for _ in range(max_iter):
        fy, fx = nad27_to_wgs84_deg(y, x, shift)
        ry, rx = lat - fy, lon - fx
        y, x = y + ry, x + rx
        if np.max(np.abs(ry), initial=0.0) < tol and np.max(np.abs(rx), initial=0.0) < tol:
            break
    return y, x


def nad27_to_wgs84(p: GeoPoint, shift=CONUS_SHIFT) -> GeoPoint:
    if p.datum == "WGS84":
        return p
    lat, lon = nad27_to_wgs84_deg(p.lat, p.lon, shift)
    return GeoPoint(float(lat), float(lon), "WGS84")


def wgs84_to_nad27(p: GeoPoint, shift=CONUS_SHIFT) -> GeoPoint:
    if p.datum == "NAD27":
        return p
    lat, lon = wgs84_to_nad27_deg(p.lat, p.lon, shift)
    return GeoPoint(float(lat), float(lon), "NAD27")


def polygon_to_wgs84(poly: GeoPolygon, shift=CONUS_SHIFT) -> GeoPolygon:
    if poly.datum == "WGS84":
        return poly

    def conv(ring):
        lat, lon = nad27_to_wgs84_deg(ring[:, 1], ring[:, 0], shift)
        return np.column_stack([lon, lat])

    return GeoPolygon(poly.id, poly.kind, conv(poly.outer), tuple(conv(h) for h in poly.holes), "WGS84", dict(poly.props))


# ---------------------------------------------------------------- polygons


def _on_edges(x, y, ring, tol):
    """Mask of points within ``tol`` degrees of any ring edge."""
    hit = np.zeros(x.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        dx, dy = x2 - x1, y2 - y1
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            d2 = (x - x1) ** 2 + (y - y1) ** 2
        else:
            t = np.clip(((x - x1) * dx + (y - y1) * dy) / seg2, 0.0, 1.0)
            d2 = (x - x1 - t * dx) ** 2 + (y - y1 - t * dy) ** 2
        hit |= d2 <= tol * tol
    return hit


def _ray_cast(x, y, ring):
    inside = np.zeros(x.shape, dtype=bool)
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        crosses = (y1 > y) != (y2 > y)
        if not np.any(crosses):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def contains(poly: GeoPolygon, lon, lat, tol=EDGE_TOL_DEG):
    """Vectorized inclusive containment of ``(lon, lat)`` arrays in ``poly``.

    Boundary points (of the outer ring or of a hole) count as inside.
    """
    x = np.asarray(lon, dtype=float)
    y = np.asarray(lat, dtype=float)
    edge = _on_edges(x, y, poly.outer, tol)
    inside = _ray_cast(x, y, poly.outer)
    for hole in poly.holes:
        edge |= _on_edges(x, y, hole, tol)
        inside &= ~_ray_cast(x, y, hole)
    return edge | inside


def point_in_polygon(p: GeoPoint, poly: GeoPolygon, tol=EDGE_TOL_DEG) -> bool:
    if p.datum != poly.datum:
        raise ValidationError(f"datum mismatch: point {p.datum}, polygon {poly.datum}")
    return bool(contains(poly, p.lon, p.lat, tol))


def reverse_geocode(points, layers, shift=CONUS_SHIFT):
    """Label each point with every containing polygon, per polygon kind.

    Returns one dict per point mapping kind to a tuple of polygon ids in id
    order (empty tuple when no polygon of that kind contains the point).
    NAD27 layers are shifted to WGS84 before testing.
    """
    pts = [nad27_to_wgs84(p, shift) for p in points]
    layers = sorted((polygon_to_wgs84(q, shift) for q in layers), key=lambda q: _id_key(q.id))
    kinds = sorted({q.kind for q in layers})
    lon = np.array([p.lon for p in pts], dtype=float)
    lat = np.array([p.lat for p in pts], dtype=float)
    found = [{k: [] for k in kinds} for _ in pts]
    pad = EDGE_TOL_DEG
    for poly in layers:
        x0, y0, x1, y1 = poly.bbox
        cand = np.flatnonzero((lon >= x0 - pad) & (lon <= x1 + pad) & (lat >= y0 - pad) & (lat <= y1 + pad))
        if cand.size == 0:
            continue
        hit = cand[contains(poly, lon[cand], lat[cand])]
        for i in hit:
            labels = found[i][poly.kind]
            if poly.id not in labels:
                labels.append(poly.id)
    return [{k: tuple(v) for k, v in d.items()} for d in found]


def first_label(labels, kind):
    """Tie-break for points on shared borders: the smallest polygon id, or None."""
    ids = labels.get(kind, ())
    return ids[0] if ids else None


def load_geojson(path_or_obj, kind=None, id_property="id"):
    """Polygons from a GeoJSON FeatureCollection.

    The collection (or a feature) may carry a ``datum`` foreign member; WGS84
    is assumed otherwise. ``kind`` falls back to a ``kind`` property. A
    MultiPolygon yields one :class:`GeoPolygon` per part, sharing the id.
    """
    if isinstance(path_or_obj, dict):
        doc = path_or_obj
    else:
        with open(path_or_obj, encoding="utf-8") as fh:
            doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ValidationError("expected a GeoJSON FeatureCollection")
    default_datum = doc.get("datum", "WGS84")
    out = []
    for n, feat in enumerate(doc.get("features", [])):
        props = dict(feat.get("properties") or {})
        fid = props.get(id_property, feat.get("id", n))
        fkind = kind or props.get("kind")
        datum = feat.get("datum", props.get("datum", default_datum))
        geom = feat.get("geometry") or {}
        if geom.get("type") == "Polygon":
            parts = [geom["coordinates"]]
        elif geom.get("type") == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise ValidationError(f"feature {fid!r}: unsupported geometry {geom.get('type')!r}")
        for rings in parts:
            out.append(GeoPolygon(fid, fkind, np.asarray(rings[0], float), tuple(np.asarray(r, float) for r in rings[1:]), datum, props))
    return out


# ---------------------------------------------------------------- nearest neighbour


def _unit_vectors(lat, lon):
    phi, lam = np.radians(lat), np.radians(lon)
    c = np.cos(phi)
    return np.column_stack([c * np.cos(lam), c * np.sin(lam), np.sin(phi)])


class SpatialIndex:
    """Exact great-circle 1-NN over a fixed point set.

    Points are embedded on the unit sphere; chord length is monotone in arc
    length, so the k-d tree's nearest chord neighbour is the nearest
    great-circle neighbour. Candidates are re-ranked by haversine distance
    and ties go to the smallest id.
    """

    def __init__(self, lat, lon, ids=None, radius=R_EARTH_M):
        self.lat = np.asarray(lat, dtype=float).ravel()
        self.lon = np.asarray(lon, dtype=float).ravel()
        if self.lat.size == 0:
            raise ValidationError("cannot build a spatial index over an empty point set")
        if self.lat.shape != self.lon.shape:
            raise ValidationError("lat and lon lengths differ")
        self.ids = list(range(self.lat.size)) if ids is None else list(ids)
        if len(self.ids) != self.lat.size:
            raise ValidationError("ids length does not match the points")
        self.radius = radius
        self._rank = np.empty(self.lat.size, dtype=np.int64)
        self._rank[sorted(range(self.lat.size), key=lambda i: _id_key(self.ids[i]))] = np.arange(self.lat.size)
        self._tree = cKDTree(_unit_vectors(self.lat, self.lon))

    def __len__(self):
        return self.lat.size

    def query(self, lat, lon):
        """Nearest positions and distances (meters) for arrays of queries."""
        qlat = np.atleast_1d(np.asarray(lat, dtype=float))
        qlon = np.atleast_1d(np.asarray(lon, dtype=float))
        k = min(4, len(self))
        q = _unit_vectors(qlat, qlon)
        _, cand = self._tree.query(q, k=k)
        cand = cand.reshape(qlat.size, k)
        d = haversine_m(qlat[:, None], qlon[:, None], self.lat[cand], self.lon[cand], self.radius)
        best = np.empty(qlat.size, dtype=np.int64)
        dist = np.empty(qlat.size)
        for i in range(qlat.size):
            dmin = d[i].min()
            ties = cand[i][d[i] == dmin]
            if k < len(self) and d[i].max() == dmin:
                # every candidate tied: collect the full tie set from the tree
                chord = 2.0 * math.sin(dmin / (2.0 * self.radius))
                pool = np.asarray(self._tree.query_ball_point(q[i], chord * (1 + 1e-9) + 1e-15), dtype=np.int64)
                dp = haversine_m(qlat[i], qlon[i], self.lat[pool], self.lon[pool], self.radius)
                ties = pool[dp == dmin]
            best[i] = ties[np.argmin(self._rank[ties])]
            dist[i] = dmin
        return best, dist


def build_index(points, ids=None, radius=R_EARTH_M) -> SpatialIndex:
    pts = list(points)
    if not pts:
        raise ValidationError("cannot build a spatial index over an empty point set")
    if len({p.datum for p in pts}) > 1:
        raise ValidationError("indexed points mix datums")
    return SpatialIndex([p.lat for p in pts], [p.lon for p in pts], ids, radius)


def knn_nearest(index: SpatialIndex, q: GeoPoint):
    """``(id, distance_m)`` of the indexed point nearest to ``q``."""
    pos, dist = index.query(q.lat, q.lon)
    return index.ids[int(pos[0])], float(dist[0])


def brute_force_nearest(lat, lon, qlat, qlon, ids=None, radius=R_EARTH_M):
    """Linear-scan reference for :class:`SpatialIndex` (ties to smallest id)."""
    lat, lon = np.asarray(lat, float), np.asarray(lon, float)
    ids = list(range(lat.size)) if ids is None else list(ids)
    out_ids, out_d = [], []
    for a, b in zip(np.atleast_1d(qlat), np.atleast_1d(qlon)):
        d = haversine_m(a, b, lat, lon, radius)
        tied = np.flatnonzero(d == d.min())
        j = min(tied, key=lambda t: _id_key(ids[t]))
        out_ids.append(ids[j])
        out_d.append(float(d[j]))
    return out_ids, np.array(out_d)


# ---------------------------------------------------------------- owner assignment


@dataclass(frozen=True)
class OwnerAssignment:
    detection_id: object
    operator: str | None
    distance_m: float
    decision: str

    @property
    def kept(self):
        return self.decision.startswith("kept")


SECTION_LEVELS = ("section", "range", "township")


def _section_key(poly, level):
    if poly is None:
        return None
    if level == "section":
        return ("section", poly.id)
    p = poly.props
    if "township" not in p or (level == "range" and "range" not in p):
        # no survey attributes: fall back to polygon identity
        return ("section", poly.id)
    return (p["township"],) if level == "township" else (p["township"], p["range"])


def _attr(obj, *names, default=None):
    for n in names:
        if isinstance(obj, dict) and n in obj:
            return obj[n]
        if hasattr(obj, n):
            return getattr(obj, n)
    return default


def assign_flare_owners(
    detections,
    wells,
    sections=(),
    d_secure=D_SECURE_M,
    d_cutoff=D_CUTOFF_M,
    radius=R_EARTH_M,
    level="section",
):
    """Cautious nearest-well operator assignment for one month.

    ``detections`` and ``wells`` are records (objects or dicts) with ``lat``
    and ``lon``; detections may carry ``id`` (defaults to position), wells
    carry ``operator`` and ``well_id`` (or ``id``). Decision per detection:

    * ``d < d_secure``: kept_secure
    * ``d > d_cutoff``: dropped_far
    * otherwise kept iff the detection and the well fall in the same survey
      section (the first containing section polygon in id order; compared at
      ``level`` granularity).

    With no wells every detection is dropped with an infinite distance.
    """
    if not d_secure < d_cutoff:
        raise ValidationError("d_secure must be smaller than d_cutoff")
    if level not in SECTION_LEVELS:
        raise ValidationError(f"level must be one of {SECTION_LEVELS}")
    detections, wells = list(detections), list(wells)
    det_ids = [_attr(d, "id", "detection_id", default=i) for i, d in enumerate(detections)]
    if not detections:
        return []
    if not wells:
        return [OwnerAssignment(i, None, math.inf, "dropped_far") for i in det_ids]

    dlat = np.array([_attr(d, "lat") for d in detections], dtype=float)
    dlon = np.array([_attr(d, "lon") for d in detections], dtype=float)
    wlat = np.array([_attr(w, "lat") for w in wells], dtype=float)
    wlon = np.array([_attr(w, "lon") for w in wells], dtype=float)
    wids = [_attr(w, "well_id", "id", default=i) for i, w in enumerate(wells)]
    index = SpatialIndex(wlat, wlon, wids, radius)
    pos, dist = index.query(dlat, dlon)

    mid = np.flatnonzero((dist >= d_secure) & (dist <= d_cutoff))
    det_sec = well_sec = {}
    if mid.size:
        secs = [polygon_to_wgs84(s) for s in sections]
        secs.sort(key=lambda s: _id_key(s.id))
        det_sec = _first_containing(secs, dlon[mid], dlat[mid], mid)
        wpos = np.unique(pos[mid])
        well_sec = _first_containing(secs, wlon[wpos], wlat[wpos], wpos)

    out = []
    for j, det_id in enumerate(det_ids):
        d, w = float(dist[j]), int(pos[j])
        op = _attr(wells[w], "operator")
        if d > d_cutoff:
            decision = "dropped_far"
        elif d < d_secure:
            decision = "kept_secure"
        else:
            a = _section_key(det_sec.get(j), level)
            b = _section_key(well_sec.get(w), level)
            decision = "kept_section_match" if a is not None and a == b else "dropped_section_mismatch"
        out.append(OwnerAssignment(det_id, op, d, decision))
    return out


def _first_containing(polys, lon, lat, keys):
    """Map each key to the first polygon (in the given order) containing it."""
    found = {}
    todo = np.ones(len(keys), dtype=bool)
    for poly in polys:
        if not todo.any():
            break
        sel = np.flatnonzero(todo)
        hit = sel[contains(poly, lon[sel], lat[sel])]
        for t in hit:
            found[int(keys[t])] = poly
        todo[hit] = False
    return found


def write_owners_csv(assignments, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OWNER_COLUMNS)
        for a in assignments:
            w.writerow([a.detection_id, "" if a.operator is None else a.operator, repr(float(a.distance_m)), a.decision])
