"""Deterministic synthetic world: geography, population, events, rain.

The world is a rectangular grid of square arrondissement cells, walked in
snake order and split into contiguous livelihood zones, so point-in-cell
assignment is exactly testable. All randomness flows through named PCG64
substreams keyed by (seed, stream, user index); identical (config, seed)
pairs therefore produce byte-identical files.

Ground truth (archetype labels, planted monthly homes, wet months,
planted events) is emitted alongside the data so every downstream module
can be checked against what was actually planted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InputError
from .geo import Antenna, Arrondissement, GeoPoint, Geography, LivelihoodZone, RainGridReading

RNG_ALGORITHM = "pcg64"

# substream tags
_S_WORLD = 0
_S_USER = 1
_S_EVENTS = 2
_S_RAIN = 3
_S_PLANT = 4

ARCHETYPE_KINDS = ("sedentary", "seasonal", "commuter", "random")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Named, portable 64-bit substream for one generation task."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *key))))


@dataclass(frozen=True)
class ArchetypeSpec:
    """One mixture component of the synthetic population."""

    kind: str
    weight: float
    home_lz: Optional[int] = None          # seasonal
    destination_lz: Optional[int] = None   # seasonal
    out_month: Optional[int] = None        # seasonal; default last wet month + 1
    return_month: Optional[int] = None     # seasonal; wraps past December
    period: int = 2                        # commuter
    move_prob: float = 0.5                 # random

    def __post_init__(self):
        if self.kind not in ARCHETYPE_KINDS:
            raise InputError(f"unknown archetype kind {self.kind!r}")
        if not 0 <= self.weight <= 1:
            raise InputError("archetype weight must be in [0, 1]")
        if self.kind == "commuter" and self.period < 1:
            raise InputError("commuter period must be >= 1")
        if self.kind == "random" and not 0 <= self.move_prob <= 1:
            raise InputError("move_prob must be in [0, 1]")


def away_months(out_month: int, return_month: int) -> frozenset[int]:
    """Months spent at the destination: [out, return), wrapping the year."""
    for m in (out_month, return_month):
        if not 1 <= m <= 12:
            raise InputError(f"month out of range: {m}")
    if out_month == return_month:
        raise InputError("out and return months must differ")
    if out_month < return_month:
        return frozenset(range(out_month, return_month))
    return frozenset(range(out_month, 13)) | frozenset(range(1, return_month))


def last_wet_month(wet_months: Sequence[int]) -> int:
    """End of the (single, possibly year-wrapping) contiguous wet block."""
    wet = sorted(set(wet_months))
    if not wet or not all(1 <= m <= 12 for m in wet):
        raise InputError(f"bad wet month set: {wet}")
    if len(wet) == 12:
        raise InputError("wet season cannot cover the whole year")
    ends = [m for m in wet if (m % 12) + 1 not in wet]
    if len(ends) != 1:
        raise InputError(f"wet months must form one contiguous block: {wet}")
    return ends[0]


@dataclass
class World:
    """Generated geography plus the grid metadata behind it."""

    arrondissements: list[Arrondissement]
    zones: list[LivelihoodZone]
    antennas: list[Antenna]         # arrondissement ids are ground truth
    cell_deg: float
    origin: tuple[float, float]
    n_rows: int
    n_cols: int
    seed: int

    @property
    def arr_ids(self) -> list[str]:
        return [a.id for a in self.arrondissements]

    def zone_of(self, arr_id: str) -> int:
        return next(a.lz_id for a in self.arrondissements if a.id == arr_id)

    def arrs_in_zone(self, lz_id: int) -> list[str]:
        return [a.id for a in self.arrondissements if a.lz_id == lz_id]

    def to_geography(self) -> Geography:
        return Geography(self.arrondissements, self.zones, self.antennas)

    def bbox(self) -> tuple[float, float, float, float]:
        lon0, lat0 = self.origin
        return (lon0, lat0,
                lon0 + self.n_cols * self.cell_deg,
                lat0 + self.n_rows * self.cell_deg)


def generate_world(n_arr: int, n_zones: int, antennas_per_arr: int, seed: int,
                   cell_deg: float = 0.5,
                   origin: tuple[float, float] = (-17.0, 13.0)) -> World:
    """Build the grid world.

    Cells are visited in snake order (even rows west-to-east, odd rows
    east-to-west) and split into n_zones contiguous runs of near-equal
    size, so every zone is spatially connected. Antennas are placed
    uniformly inside their cell with a 5% inset from the edges.
    """
    if n_arr < 1 or n_zones < 1 or n_zones > n_arr:
        raise InputError("need 1 <= n_zones <= n_arr")
    if antennas_per_arr < 1:
        raise InputError("need at least one antenna per arrondissement")
    n_cols = math.ceil(math.sqrt(n_arr))
    n_rows = math.ceil(n_arr / n_cols)
    lon0, lat0 = origin

    cells = []
    for r in range(n_rows):
        cols = range(n_cols) if r % 2 == 0 else range(n_cols - 1, -1, -1)
        for c in cols:
            if len(cells) < n_arr:
                cells.append((r, c))

    base, extra = divmod(n_arr, n_zones)
    zone_of_index = []
    for z in range(n_zones):
        zone_of_index.extend([z + 1] * (base + (1 if z < extra else 0)))

    rng = substream(seed, _S_WORLD)
    arrs, antennas = [], []
    for i, (r, c) in enumerate(cells):
        x0, y0 = lon0 + c * cell_deg, lat0 + r * cell_deg
        x1, y1 = x0 + cell_deg, y0 + cell_deg
        ring = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        aid = f"A{i:03d}"
        arrs.append(Arrondissement(
            id=aid, name=f"arr-{i}", centroid=GeoPoint((x0 + x1) / 2, (y0 + y1) / 2),
            rings=[ring], lz_id=zone_of_index[i]))
        inset = 0.05 * cell_deg
        for k in range(antennas_per_arr):
            lon = float(rng.uniform(x0 + inset, x1 - inset))
            lat = float(rng.uniform(y0 + inset, y1 - inset))
            antennas.append(Antenna(f"T{i:03d}-{k}", GeoPoint(lon, lat), aid))

    zones = [LivelihoodZone(z, f"zone-{z}", tag=f"activity-{z}")
             for z in range(1, n_zones + 1)]
    return World(arrs, zones, antennas, cell_deg, origin, n_rows, n_cols, seed)


# ---------------------------------------------------------------------------
# Population and events
# ---------------------------------------------------------------------------

@dataclass
class GroundTruth:
    """What was planted, for checking every downstream stage."""

    archetype: dict[str, str]                   # user -> archetype kind
    homes: dict[str, tuple[str, ...]]           # user -> 12 planted homes
    wet_months: list[int]
    seasonal_out_month: Optional[int]
    planted_event: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "rng": RNG_ALGORITHM,
            "archetype": self.archetype,
            "homes": {u: list(h) for u, h in self.homes.items()},
            "wet_months": self.wet_months,
            "seasonal_out_month": self.seasonal_out_month,
            "planted_event": self.planted_event,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruth":
        return cls(
            archetype=dict(doc["archetype"]),
            homes={u: tuple(h) for u, h in doc["homes"].items()},
            wet_months=list(doc["wet_months"]),
            seasonal_out_month=doc.get("seasonal_out_month"),
            planted_event=doc.get("planted_event"),
        )


def resolve_seasonal(spec: ArchetypeSpec, wet_months: Sequence[int]) -> ArchetypeSpec:
    """Fill a seasonal spec's out month from the wet season (out = last wet + 1)."""
    if spec.kind != "seasonal":
        return spec
    out = spec.out_month if spec.out_month is not None else (last_wet_month(wet_months) % 12) + 1
    ret = spec.return_month if spec.return_month is not None else 1
    return ArchetypeSpec(kind=spec.kind, weight=spec.weight, home_lz=spec.home_lz,
                         destination_lz=spec.destination_lz, out_month=out,
                         return_month=ret, period=spec.period, move_prob=spec.move_prob)


def _planted_homes(spec: ArchetypeSpec, world: World,
                   rng: np.random.Generator) -> tuple[str, ...]:
    """Draw one user's 12 planted monthly home arrondissements."""
    arr_ids = world.arr_ids
    if spec.kind == "sedentary":
        home = arr_ids[int(rng.integers(len(arr_ids)))]
        return (home,) * 12
    if spec.kind == "seasonal":
        home_pool = world.arrs_in_zone(spec.home_lz)
        dest_pool = world.arrs_in_zone(spec.destination_lz)
        if not home_pool or not dest_pool:
            raise InputError("seasonal archetype references an empty zone")
        home = home_pool[int(rng.integers(len(home_pool)))]
        dest = dest_pool[int(rng.integers(len(dest_pool)))]
        away = away_months(spec.out_month, spec.return_month)
        return tuple(dest if m in away else home for m in range(1, 13))
    if spec.kind == "commuter":
        arr1 = arr_ids[int(rng.integers(len(arr_ids)))]
        other = [a for a in arr_ids if world.zone_of(a) != world.zone_of(arr1)]
        if not other:
            raise InputError("commuter archetype needs at least two zones")
        arr2 = other[int(rng.integers(len(other)))]
        return tuple(arr1 if ((m - 1) // spec.period) % 2 == 0 else arr2
                     for m in range(1, 13))
    # random wanderer
    cur = int(rng.integers(len(arr_ids)))
    homes = [arr_ids[cur]]
    for _ in range(11):
        if rng.random() < spec.move_prob:
            step = int(rng.integers(len(arr_ids) - 1))
            cur = step + (1 if step >= cur else 0)
        homes.append(arr_ids[cur])
    return tuple(homes)


def generate_population(specs: Sequence[ArchetypeSpec], n_users: int,
                        events_per_day: float, seed: int, world: World,
                        year: int, p_noise: float = 0.05,
                        wet_months: Sequence[int] = ()
                        ) -> tuple[pd.DataFrame, GroundTruth]:
    """Generate the CDR event table plus ground truth.

    Each user draws an archetype from the mixture, a planted monthly-home
    trajectory, and then Poisson(events_per_day) daily events at antennas
    of the current home arrondissement, each independently relocated to a
    uniformly random other arrondissement with probability p_noise.
    Seasonal specs must already carry an out month (see resolve_seasonal).
    """
    if n_users < 0:
        raise InputError("n_users must be >= 0")
    if events_per_day < 0 or not 0 <= p_noise <= 1:
        raise InputError("bad events_per_day or p_noise")
    weights = np.array([s.weight for s in specs], dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise InputError(f"archetype weights sum to {weights.sum()}, expected 1")
    out_months = set()
    for s in specs:
        if s.kind == "seasonal":
            if s.out_month is None or s.return_month is None:
                raise InputError("seasonal spec missing out/return month; "
                                 "apply resolve_seasonal first")
            out_months.add(s.out_month)
    cum = np.cumsum(weights)

    dates = pd.date_range(f"{year}-01-01", f"{year}-12-31", freq="D")
    n_days = len(dates)
    month_of_day = dates.month.to_numpy() - 1
    day_start = dates.to_numpy().astype("datetime64[s]")

    arr_ids = world.arr_ids
    arr_index = {a: i for i, a in enumerate(arr_ids)}
    n_arr = len(arr_ids)
    antennas_by_arr = [[t.id for t in world.antennas if t.arrondissement_id == a]
                       for a in arr_ids]
    n_ant = [len(lst) for lst in antennas_by_arr]

    width = max(5, len(str(max(n_users - 1, 0))))
    archetype: dict[str, str] = {}
    homes: dict[str, tuple[str, ...]] = {}
    frames = []
    for i in range(n_users):
        uid = f"U{i:0{width}d}"
        rng_u = substream(seed, _S_USER, i)
        spec = specs[int(np.searchsorted(cum, rng_u.random(), side="right").clip(max=len(specs) - 1))]
        planted = _planted_homes(spec, world, rng_u)
        archetype[uid] = spec.kind
        homes[uid] = planted

        rng_e = substream(seed, _S_EVENTS, i)
        k = rng_e.poisson(events_per_day, n_days)
        total = int(k.sum())
        if total == 0:
            continue
        days = np.repeat(np.arange(n_days), k)
        seconds = rng_e.integers(0, 86400, total)
        order = np.lexsort((seconds, days))
        days, seconds = days[order], seconds[order]

        home_idx = np.array([arr_index[a] for a in planted], dtype=np.int64)
        arr_of_event = home_idx[month_of_day[days]]
        if p_noise > 0:
            noise = rng_e.random(total) < p_noise
            if noise.any() and n_arr > 1:
                pick = rng_e.integers(0, n_arr - 1, int(noise.sum()))
                cur = arr_of_event[noise]
                arr_of_event[noise] = pick + (pick >= cur)
        ant_pick = rng_e.integers(0, np.iinfo(np.int64).max, total)
        antenna = [antennas_by_arr[a][p % n_ant[a]]
                   for a, p in zip(arr_of_event, ant_pick)]
        kind = np.where(rng_e.integers(0, 2, total) == 0, "call", "text")

        frames.append(pd.DataFrame({
            "user_id": uid,
            "timestamp": day_start[days] + seconds.astype("timedelta64[s]"),
            "antenna_id": antenna,
            "kind": kind,
        }))

    if frames:
        events = pd.concat(frames, ignore_index=True)
        events["timestamp"] = events["timestamp"].astype("datetime64[ns]")
    else:
        events = pd.DataFrame(columns=["user_id", "timestamp", "antenna_id", "kind"])
    truth = GroundTruth(archetype, homes, wet_months=sorted(set(wet_months)),
                        seasonal_out_month=min(out_months) if out_months else None)
    return events, truth


def generate_rain(world: World, year: int, wet_months: Sequence[int],
                  peak_mm: float, seed: int,
                  resolution: float = 0.25) -> list[RainGridReading]:
    """Daily gridded rain: max(0, Normal(peak, peak/4)) in wet months, else 0."""
    if peak_mm <= 0:
        raise InputError("peak_mm must be > 0")
    wet = set(wet_months)
    last_wet_month(wet_months)  # validates the block
    lon_min, lat_min, lon_max, lat_max = world.bbox()
    lons = np.arange(lon_min + resolution / 2, lon_max, resolution)
    lats = np.arange(lat_min + resolution / 2, lat_max, resolution)
    rng = substream(seed, _S_RAIN)
    dates = pd.date_range(f"{year}-01-01", f"{year}-12-31", freq="D")
    readings = []
    for ts in dates:
        day = ts.date()
        if ts.month in wet:
            vals = np.maximum(rng.normal(peak_mm, peak_mm / 4, (len(lons), len(lats))), 0.0)
        else:
            vals = np.zeros((len(lons), len(lats)))
        for i, lon in enumerate(lons):
            for j, lat in enumerate(lats):
                readings.append(RainGridReading(day, GeoPoint(float(lon), float(lat)),
                                                float(vals[i, j])))
    return readings


def plant_event(events: pd.DataFrame, world: World, day_of_year: int,
                destination_arr: str, fraction: float, duration_days: int,
                seed: int, year: int) -> tuple[pd.DataFrame, list[str]]:
    """Relocate a random user fraction to one arrondissement for a few days.

    Participants (uniform seeded draw over the user population) emit all
    their events from antennas of the destination during
    [day_of_year, day_of_year + duration_days), then resume normally.

    Returns the modified event table and the participant list.
    """
    if not 0 <= fraction <= 1:
        raise InputError("fraction must be in [0, 1]")
    if duration_days < 1 or day_of_year < 1:
        raise InputError("bad event window")
    if destination_arr not in world.arr_ids:
        raise InputError(f"unknown destination {destination_arr!r}")
    dest_antennas = [t.id for t in world.antennas
                     if t.arrondissement_id == destination_arr]
    users = sorted(events["user_id"].unique())
    rng = substream(seed, _S_PLANT)
    chosen = rng.random(len(users)) < fraction
    participants = [u for u, c in zip(users, chosen) if c]
    if not participants or events.empty:
        return events.copy(), participants

    out = events.copy()
    doy = out["timestamp"].dt.dayofyear
    in_window = (doy >= day_of_year) & (doy < day_of_year + duration_days)
    affected = in_window & out["user_id"].isin(participants)
    n = int(affected.sum())
    if n:
        pick = rng.integers(0, len(dest_antennas), n)
        out.loc[affected, "antenna_id"] = [dest_antennas[p] for p in pick]
    return out, participants


# ---------------------------------------------------------------------------
# File emission (formats match the ingest/geo loaders)
# ---------------------------------------------------------------------------

def write_world(world: World, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr_path = out_dir / "arrondissements.json"
    doc = {
        "zones": [{"id": z.id, "name": z.name, "tag": z.tag} for z in world.zones],
        "arrondissements": [
            {
                "id": a.id, "name": a.name,
                "centroid": [a.centroid.lon, a.centroid.lat],
                "rings": [np.vstack([r, r[:1]]).tolist() for r in a.rings],
                "lz_id": a.lz_id,
            }
            for a in world.arrondissements
        ],
    }
    with open(arr_path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")

    ant_path = out_dir / "antennas.csv"
    with open(ant_path, "w") as f:
        f.write("antenna_id,lon,lat\n")
        for t in world.antennas:
            f.write(f"{t.id},{t.location.lon:.6f},{t.location.lat:.6f}\n")
    return {"arrondissements": arr_path, "antennas": ant_path}


def write_cdr(events: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = events.copy()
    df["timestamp"] = df["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%S")
    df.to_csv(path, index=False)
    return path


def write_rain(readings: Sequence[RainGridReading], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write("date,cell_lon,cell_lat,mm\n")
        for r in readings:
            f.write(f"{r.day.isoformat()},{r.cell_center.lon:.6f},"
                    f"{r.cell_center.lat:.6f},{r.amount:.6f}\n")
    return path


def _contiguous_span(months: frozenset[int]) -> tuple[int, int]:
    """(start, end) of a circularly contiguous month block."""
    if len(months) == 12:
        return 1, 12
    starts = [m for m in months if (m - 2) % 12 + 1 not in months]
    if len(starts) != 1:
        raise InputError(f"month set is not contiguous: {sorted(months)}")
    start = starts[0]
    end = start
    while (end % 12) + 1 in months:
        end = (end % 12) + 1
    return start, end


def write_calendar(specs: Sequence[ArchetypeSpec], wet_months: Sequence[int],
                   path: str | Path) -> Path:
    """Emit calendar intervals tied to the planted archetypes.

    Every seasonal archetype contributes a labor interval covering its
    away window in the destination zone, plus a planting interval
    covering the wet months in its home zone.
    """
    records = []
    for spec in specs:
        if spec.kind != "seasonal":
            continue
        out = spec.out_month if spec.out_month is not None else (last_wet_month(wet_months) % 12) + 1
        ret = spec.return_month if spec.return_month is not None else 1
        a_start, a_end = _contiguous_span(away_months(out, ret))
        records.append({"zone_id": spec.destination_lz, "activity": "seasonal_labor",
                        "category": "labor", "start_month": a_start, "end_month": a_end})
        w_start, w_end = _contiguous_span(frozenset(wet_months))
        records.append({"zone_id": spec.home_lz, "activity": "planting",
                        "category": "planting", "start_month": w_start, "end_month": w_end})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(records, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_ground_truth(truth: GroundTruth, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(truth.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
