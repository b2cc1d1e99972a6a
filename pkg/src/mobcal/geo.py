"""Geographic model: antennas, arrondissements, livelihood zones, rainfall.

The loaded geography is immutable after construction; every operation here
is a pure function over it, so concurrent callers are safe. Rainfall
aggregation weights each grid cell by the fraction of an SxS lattice of
interior sample points that falls inside the target region (point-in-polygon
with the even-odd rule), which converges to the exact area fraction as S
grows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError, InvariantError

EARTH_RADIUS_KM = 6371.0

ARRONDISSEMENT = "arrondissement"
LIVELIHOOD_ZONE = "livelihood_zone"


@dataclass(frozen=True)
class GeoPoint:
    """A lon/lat point in degrees (WGS84-style, no projection)."""

    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise InputError(f"non-finite coordinates ({self.lon}, {self.lat})")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise InputError(f"coordinates out of range ({self.lon}, {self.lat})")


@dataclass(frozen=True)
class Antenna:
    id: str
    location: GeoPoint
    arrondissement_id: str


@dataclass
class Arrondissement:
    """One administrative region: a boundary of one or more closed rings.

    Rings are stored as (k, 2) float arrays of lon/lat vertices without the
    repeated closing vertex. Multiple rings combine under the even-odd rule,
    so holes are supported.
    """

    id: str
    name: str
    centroid: GeoPoint
    rings: list[np.ndarray]
    lz_id: int
    centroid_synthetic: bool = False


@dataclass(frozen=True)
class LivelihoodZone:
    id: int
    name: str
    tag: str = ""


@dataclass(frozen=True)
class RainGridReading:
    """One day's rainfall estimate for one grid cell (mm/day)."""

    day: date
    cell_center: GeoPoint
    amount: float

    def __post_init__(self):
        if not math.isfinite(self.amount) or self.amount < 0:
            raise InputError(f"bad rain amount {self.amount} at {self.cell_center}")


@dataclass
class RegionSeries:
    """Time series of one variable attached to one region.

    Timestamps are strictly increasing; values are finite. Missing
    observations are simply absent from the series.
    """

    region_id: str | int
    region_kind: str
    variable: str
    resolution: str  # "day" | "month"
    times: list[date]
    values: list[float]

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise InvariantError("times/values length mismatch")
        for i, v in enumerate(self.values):
            if not math.isfinite(v):
                raise InvariantError(f"non-finite value at {self.times[i]}")
        for a, b in zip(self.times, self.times[1:]):
            if not a < b:
                raise InvariantError("timestamps not strictly increasing")

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class LocateResult:
    """Spatial-join answer; fallback marks nearest-centroid assignment."""

    arrondissement_id: str
    fallback: bool


@dataclass
class MonthlyRain:
    """Monthly rainfall sums plus per-month missing-day counts."""

    series: RegionSeries
    missing_days: dict[date, int]


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km between two points (R = 6371.0 km)."""
    return float(_haversine_arrays(np.asarray(a.lon), np.asarray(a.lat),
                                   np.asarray(b.lon), np.asarray(b.lat)))


def _haversine_arrays(lon1, lat1, lon2, lat2):
    """Vectorized haversine on degree arrays; returns km."""
    d2r = math.pi / 180.0
    rlat1 = lat1 * d2r
    rlat2 = lat2 * d2r
    dlat = (lat2 - lat1) * d2r
    dlon = (lon2 - lon1) * d2r
    h = (np.sin(dlat / 2.0) ** 2
         + np.cos(rlat1) * np.cos(rlat2) * np.sin(dlon / 2.0) ** 2)
    return EARTH_RADIUS_KM * 2.0 * np.arctan2(np.sqrt(h), np.sqrt(1.0 - h))


def point_in_rings(lon: float, lat: float, rings: Sequence[np.ndarray]) -> bool:
    """Even-odd containment test over a set of rings.

    Counts ray crossings toward +lon over every ring; odd total means
    inside. Points exactly on a boundary are not given a defined answer
    here; callers resolve such ties by region id.
    """
    crossings = 0
    for ring in rings:
        x = ring[:, 0]
        y = ring[:, 1]
        x2 = np.roll(x, -1)
        y2 = np.roll(y, -1)
        straddles = (y > lat) != (y2 > lat)
        if not straddles.any():
            continue
        xs, ys, xe, ye = x[straddles], y[straddles], x2[straddles], y2[straddles]
        x_int = xs + (lat - ys) * (xe - xs) / (ye - ys)
        crossings += int(np.count_nonzero(lon < x_int))
    return crossings % 2 == 1


def _ring_self_intersects(ring: np.ndarray) -> bool:
    """Brute-force check that no two non-adjacent edges cross."""
    k = len(ring)
    segs = [(ring[i], ring[(i + 1) % k]) for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            if j == i + 1 or (i == 0 and j == k - 1):
                continue  # adjacent edges share a vertex by construction
            if _segments_cross(segs[i], segs[j]):
                return True
    return False


def _segments_cross(s1, s2) -> bool:
    (p1, p2), (p3, p4) = s1, s2

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


class Geography:
    """Immutable container for the loaded geography.

    Arrondissements are kept in ascending-id order so that boundary ties
    in spatial joins always resolve to the lowest id.
    """

    def __init__(self, arrondissements: Iterable[Arrondissement],
                 zones: Iterable[LivelihoodZone],
                 antennas: Iterable[Antenna] = ()):
        arrs = sorted(arrondissements, key=lambda a: a.id)
        if not arrs:
            raise InputError("empty geography: no arrondissements")
        self.arrondissements: dict[str, Arrondissement] = {a.id: a for a in arrs}
        if len(self.arrondissements) != len(arrs):
            raise InputError("duplicate arrondissement ids")
        self.zones: dict[int, LivelihoodZone] = {z.id: z for z in zones}
        zone_ids = sorted(self.zones)
        if zone_ids != list(range(1, len(zone_ids) + 1)):
            raise InputError(f"livelihood zone ids must be dense 1..Z, got {zone_ids}")
        for a in arrs:
            if a.lz_id not in self.zones:
                raise InputError(f"arrondissement {a.id} references unknown zone {a.lz_id}")
        self.antennas: dict[str, Antenna] = {}
        for t in antennas:
            if t.arrondissement_id not in self.arrondissements:
                raise InputError(f"antenna {t.id} in unknown arrondissement")
            self.antennas[t.id] = t
        self._arr_ids = [a.id for a in arrs]
        self._centroid_lon = np.array([a.centroid.lon for a in arrs])
        self._centroid_lat = np.array([a.centroid.lat for a in arrs])

    @property
    def arr_ids(self) -> list[str]:
        return list(self._arr_ids)

    def zone_of(self, arrondissement_id: str) -> int:
        """Livelihood-zone id stored on an arrondissement."""
        arr = self.arrondissements.get(arrondissement_id)
        if arr is None:
            raise InputError(f"unknown arrondissement id {arrondissement_id!r}")
        return arr.lz_id

    def arrs_in_zone(self, lz_id: int) -> list[str]:
        return [a for a in self._arr_ids if self.arrondissements[a].lz_id == lz_id]

    def locate_strict(self, p: GeoPoint) -> Optional[str]:
        """Id of the lowest-id arrondissement containing p, or None."""
        for aid in self._arr_ids:
            if point_in_rings(p.lon, p.lat, self.arrondissements[aid].rings):
                return aid
        return None

    def locate(self, p: GeoPoint) -> LocateResult:
        """Containing arrondissement, with nearest-centroid fallback.

        Containment uses the even-odd rule; if several polygons claim the
        point (shared boundary) the lowest id wins. A point outside every
        polygon is assigned to the arrondissement with the nearest centroid
        and flagged as a fallback.
        """
        hit = self.locate_strict(p)
        if hit is not None:
            return LocateResult(hit, fallback=False)
        d = _haversine_arrays(np.asarray(p.lon), np.asarray(p.lat),
                              self._centroid_lon, self._centroid_lat)
        # argmin takes the first minimum; ids are sorted, so ties go low
        return LocateResult(self._arr_ids[int(np.argmin(d))], fallback=True)


def locate_arrondissement(p: GeoPoint, geography: Geography) -> LocateResult:
    return geography.locate(p)


def arrondissement_to_lz(arrondissement_id: str, geography: Geography) -> int:
    return geography.zone_of(arrondissement_id)


# ---------------------------------------------------------------------------
# Rainfall aggregation
# ---------------------------------------------------------------------------

def _infer_grid(readings: Sequence[RainGridReading], resolution: float):
    """Unique cell centers, validated to sit on one regular grid."""
    centers = sorted({(r.cell_center.lon, r.cell_center.lat) for r in readings})
    lon0, lat0 = centers[0]
    for lon, lat in centers:
        for v, v0 in ((lon, lon0), (lat, lat0)):
            steps = (v - v0) / resolution
            if abs(steps - round(steps)) > 1e-6:
                raise InputError(
                    f"cell center ({lon}, {lat}) off the {resolution} degree grid")
    return centers


def cell_weights(geography: Geography, centers: Sequence[tuple[float, float]],
                 resolution: float, supersample: int) -> dict[tuple[int, str], float]:
    """Fraction of each cell's sample lattice inside each arrondissement.

    Each cell gets supersample x supersample regularly spaced interior
    points; the weight of (cell, region) is the fraction of those points
    strictly resolved into the region. Weights over regions sum to at most
    1 per cell, with the remainder falling outside every polygon.
    """
    if supersample < 1:
        raise InputError("supersample must be >= 1")
    s = supersample
    offsets = (np.arange(s) + 0.5) / s * resolution - resolution / 2.0
    weights: dict[tuple[int, str], float] = {}
    per_point = 1.0 / (s * s)
    for ci, (clon, clat) in enumerate(centers):
        for dx in offsets:
            for dy in offsets:
                aid = geography.locate_strict(GeoPoint(clon + dx, clat + dy))
                if aid is not None:
                    key = (ci, aid)
                    weights[key] = weights.get(key, 0.0) + per_point
    return weights


def aggregate_rain(readings: Sequence[RainGridReading], geography: Geography,
                   target_kind: str = ARRONDISSEMENT, supersample: int = 4,
                   resolution: float = 0.25) -> dict[str | int, RegionSeries]:
    """Aggregate gridded daily rainfall into per-region daily series.

    Per region per day the value is the weighted mean of cell values,
    weighted by the in-region fraction of each cell's sample lattice.
    Regions with zero total weight on a day have that day omitted.

    Args:
        readings: daily grid values; cell centers must form a regular grid.
        target_kind: "arrondissement" or "livelihood_zone".
        supersample: lattice side S (S*S sample points per cell).
        resolution: grid spacing in degrees.

    Returns:
        Mapping region id -> daily RegionSeries (possibly empty).
    """
    if not readings:
        raise InputError("no rain readings")
    if target_kind not in (ARRONDISSEMENT, LIVELIHOOD_ZONE):
        raise InputError(f"unknown target kind {target_kind!r}")
    centers = _infer_grid(readings, resolution)
    center_idx = {c: i for i, c in enumerate(centers)}
    w_arr = cell_weights(geography, centers, resolution, supersample)

    if target_kind == ARRONDISSEMENT:
        regions: list[str | int] = geography.arr_ids
        region_of = {aid: aid for aid in geography.arr_ids}
    else:
        regions = sorted(geography.zones)
        region_of = {aid: geography.arrondissements[aid].lz_id
                     for aid in geography.arr_ids}

    # (cell, region) -> weight, after collapsing arrondissements to zones
    w: dict[tuple[int, str | int], float] = {}
    for (ci, aid), wt in w_arr.items():
        key = (ci, region_of[aid])
        w[key] = w.get(key, 0.0) + wt
    by_region: dict[str | int, list[tuple[int, float]]] = {r: [] for r in regions}
    for (ci, rid), wt in w.items():
        by_region[rid].append((ci, wt))

    values_by_day: dict[date, np.ndarray] = {}
    for r in readings:
        row = values_by_day.get(r.day)
        if row is None:
            row = np.full(len(centers), np.nan)
            values_by_day[r.day] = row
        row[center_idx[(r.cell_center.lon, r.cell_center.lat)]] = r.amount

    days = sorted(values_by_day)
    out: dict[str | int, RegionSeries] = {}
    for rid in regions:
        cells = by_region[rid]
        times: list[date] = []
        vals: list[float] = []
        if cells:
            cidx = np.array([c for c, _ in cells])
            cw = np.array([wt for _, wt in cells])
            for day in days:
                v = values_by_day[day][cidx]
                ok = ~np.isnan(v)
                denom = float(cw[ok].sum())
                if denom > 0.0:
                    times.append(day)
                    vals.append(float((cw[ok] * v[ok]).sum() / denom))
        out[rid] = RegionSeries(rid, target_kind, "rainfall_mm", "day", times, vals)
    return out


def monthly_rain(daily: RegionSeries) -> MonthlyRain:
    """Sum a daily rainfall series into calendar-month totals (mm/month).

    Days absent from the input are excluded from the sums and counted in
    missing_days, relative to how much of each month the series span
    covers. Months with no observed day at all are omitted from the
    output series (but still reported in missing_days).
    """
    if daily.resolution != "day":
        raise InputError("monthly_rain expects a daily series")
    if not daily.times:
        raise InputError("empty series")
    span_start, span_end = daily.times[0], daily.times[-1]
    sums: dict[date, float] = {}
    present: dict[date, int] = {}
    for t, v in zip(daily.times, daily.values):
        key = date(t.year, t.month, 1)
        sums[key] = sums.get(key, 0.0) + v
        present[key] = present.get(key, 0) + 1

    missing: dict[date, int] = {}
    cursor = date(span_start.year, span_start.month, 1)
    while cursor <= span_end:
        nxt = date(cursor.year + (cursor.month == 12),
                   cursor.month % 12 + 1, 1)
        lo = max(cursor, span_start)
        hi = min(nxt - timedelta(days=1), span_end)
        expected = (hi - lo).days + 1
        missing[cursor] = expected - present.get(cursor, 0)
        cursor = nxt

    months = sorted(sums)
    series = RegionSeries(daily.region_id, daily.region_kind, daily.variable,
                          "month", months, [sums[m] for m in months])
    return MonthlyRain(series, missing)


# ---------------------------------------------------------------------------
# File loading
# ---------------------------------------------------------------------------

def _normalize_ring(raw: Sequence[Sequence[float]]) -> np.ndarray:
    ring = np.asarray(raw, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 4:
        raise InputError("polygon ring must be a closed list of [lon, lat] pairs")
    if not np.allclose(ring[0], ring[-1]):
        raise InputError("polygon ring is not closed")
    ring = ring[:-1]
    if _ring_self_intersects(ring):
        raise InputError("polygon ring self-intersects")
    return ring


def load_arrondissements(path: str | Path) -> tuple[list[Arrondissement], list[LivelihoodZone]]:
    """Load the arrondissement JSON file.

    Layout: {"zones": [{"id", "name", "tag"}...]?,
             "arrondissements": [{"id", "name", "centroid": [lon, lat],
                                  "rings": [[[lon, lat]...]...], "lz_id"}...]}
    If "zones" is absent, zones are synthesized from the referenced ids.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"arrondissement file not found: {path}")
    with open(path) as f:
        doc = json.load(f)
    raw_arrs = doc.get("arrondissements")
    if not raw_arrs:
        raise InputError(f"{path}: no arrondissements")
    arrs = []
    for rec in raw_arrs:
        rings = [_normalize_ring(r) for r in rec["rings"]]
        centroid = GeoPoint(float(rec["centroid"][0]), float(rec["centroid"][1]))
        synthetic = not point_in_rings(centroid.lon, centroid.lat, rings)
        arrs.append(Arrondissement(
            id=str(rec["id"]), name=str(rec.get("name", rec["id"])),
            centroid=centroid, rings=rings, lz_id=int(rec["lz_id"]),
            centroid_synthetic=synthetic))
    if "zones" in doc:
        zones = [LivelihoodZone(int(z["id"]), str(z.get("name", f"zone-{z['id']}")),
                                str(z.get("tag", ""))) for z in doc["zones"]]
    else:
        ids = sorted({a.lz_id for a in arrs})
        zones = [LivelihoodZone(i, f"zone-{i}") for i in ids]
    return arrs, zones


def load_antennas(path: str | Path, arrondissements: list[Arrondissement],
                  zones: list[LivelihoodZone]) -> Geography:
    """Load the antenna file and build the full geography.

    Antenna arrondissement assignment is computed by spatial join, never
    read from the file (columns: antenna_id, lon, lat).
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"antenna file not found: {path}")
    bare = Geography(arrondissements, zones)
    antennas = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header[:3] != ["antenna_id", "lon", "lat"]:
            raise InputError(f"{path}: expected header antenna_id,lon,lat")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise InputError(f"{path}:{lineno}: expected 3 columns")
            try:
                loc = GeoPoint(float(parts[1]), float(parts[2]))
            except ValueError as e:
                raise InputError(f"{path}:{lineno}: {e}") from e
            res = bare.locate(loc)
            antennas.append(Antenna(parts[0], loc, res.arrondissement_id))
    return Geography(arrondissements, zones, antennas)


def load_geography(arr_path: str | Path, antenna_path: str | Path) -> Geography:
    arrs, zones = load_arrondissements(arr_path)
    return load_antennas(antenna_path, arrs, zones)


def load_rain(path: str | Path) -> list[RainGridReading]:
    """Load the rain grid file (columns: date, cell_lon, cell_lat, mm)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"rain file not found: {path}")
    readings = []
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header[:4] != ["date", "cell_lon", "cell_lat", "mm"]:
            raise InputError(f"{path}: expected header date,cell_lon,cell_lat,mm")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 columns")
            try:
                day = date.fromisoformat(parts[0])
                reading = RainGridReading(day, GeoPoint(float(parts[1]), float(parts[2])),
                                          float(parts[3]))
            except (ValueError, InputError) as e:
                raise InputError(f"{path}:{lineno}: {e}") from e
            readings.append(reading)
    return readings
