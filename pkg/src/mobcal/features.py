"""Per-user feature vectors and class statistics.

All vectors cover the 12 months January..December; index 0 is January
and a None entry means the month is missing. Class statistics use the
population (divide-by-N) convention so results do not depend on how
members are ordered or sharded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InputError, InvariantError
from .geo import Geography, _haversine_arrays, haversine_km

BUV_INDICATORS = (
    "call_count",
    "active_days",
    "radius_of_gyration_km",
    "total_distance_km",
)


def _check12(values, what: str):
    if len(values) != 12:
        raise InvariantError(f"{what} must have 12 monthly entries, got {len(values)}")


@dataclass(frozen=True)
class HAUV:
    """Home-arrondissement user vector: 12 monthly home arrondissements."""

    user_id: str
    months: tuple[Optional[str], ...]

    def __post_init__(self):
        _check12(self.months, "HAUV")


@dataclass(frozen=True)
class HLZUV:
    """Home-livelihood-zone user vector: 12 monthly home zones."""

    user_id: str
    months: tuple[Optional[int], ...]

    def __post_init__(self):
        _check12(self.months, "HLZUV")


@dataclass(frozen=True)
class BUV:
    """Behavioral user vector: one indicator's 12 monthly values."""

    user_id: str
    indicator: str
    values: tuple[Optional[float], ...]

    def __post_init__(self):
        _check12(self.values, "BUV")
        if self.indicator not in BUV_INDICATORS:
            raise InputError(f"unknown indicator {self.indicator!r}")
        for v in self.values:
            if v is not None and (not math.isfinite(v) or v < 0):
                raise InvariantError(f"bad BUV value {v}")


@dataclass(frozen=True)
class BinaryOccupancy:
    """12-bit presence vector for one target livelihood zone."""

    user_id: str
    lz_id: int
    bits: tuple[int, ...]

    def __post_init__(self):
        _check12(self.bits, "BinaryOccupancy")
        if any(b not in (0, 1) for b in self.bits):
            raise InvariantError("occupancy bits must be 0/1")

    def ones(self) -> int:
        return sum(self.bits)


@dataclass(frozen=True)
class DHV:
    """Distances (km) from each monthly home to a reference arrondissement."""

    user_id: str
    reference: str
    distances_km: tuple[Optional[float], ...]

    def __post_init__(self):
        _check12(self.distances_km, "DHV")


@dataclass
class OccupancyHistogram:
    """Per arrondissement, per month: class members homed there."""

    class_id: int
    counts: dict[str, list[int]]  # arrondissement -> 12 monthly counts

    def month_total(self, month: int) -> int:
        return sum(c[month - 1] for c in self.counts.values())


@dataclass
class ClassCharacterization:
    """Mean/std of each behavioral indicator per month over class members."""

    class_id: int
    mean: dict[str, list[Optional[float]]]
    std: dict[str, list[Optional[float]]]


# ---------------------------------------------------------------------------
# Vector construction
# ---------------------------------------------------------------------------

def build_vectors(monthly_homes: pd.DataFrame, geography: Geography
                  ) -> tuple[dict[str, HAUV], dict[str, HLZUV]]:
    """Build HAUV and HLZUV for every user from the monthly-home table.

    Args:
        monthly_homes: columns user_id, month (1..12), arrondissement_id.

    Returns:
        (hauvs, hlzuvs) keyed by user id; HLZUV[m] is the zone of HAUV[m].
    """
    hauvs: dict[str, HAUV] = {}
    hlzuvs: dict[str, HLZUV] = {}
    for user, grp in monthly_homes.groupby("user_id", sort=True):
        slots: list[Optional[str]] = [None] * 12
        for _, row in grp.iterrows():
            arr = row["arrondissement_id"]
            slots[int(row["month"]) - 1] = None if pd.isna(arr) else str(arr)
        if len(grp) != 12:
            raise InvariantError(f"user {user} has {len(grp)} monthly slots")
        zones = tuple(None if a is None else geography.zone_of(a) for a in slots)
        hauvs[str(user)] = HAUV(str(user), tuple(slots))
        hlzuvs[str(user)] = HLZUV(str(user), zones)
    return hauvs, hlzuvs


def binarize(hlzuv: HLZUV, target_lz: int) -> BinaryOccupancy:
    """1 where the month's home zone equals the target; missing counts 0."""
    bits = tuple(1 if z == target_lz else 0 for z in hlzuv.months)
    return BinaryOccupancy(hlzuv.user_id, target_lz, bits)


def build_dhv(hauv: HAUV, reference: str, geography: Geography) -> DHV:
    """Distance from each monthly home's centroid to the reference centroid."""
    ref = geography.arrondissements.get(reference)
    if ref is None:
        raise InputError(f"unknown reference arrondissement {reference!r}")
    dists: list[Optional[float]] = []
    for arr in hauv.months:
        if arr is None:
            dists.append(None)
        elif arr == reference:
            dists.append(0.0)
        else:
            cen = geography.arrondissements[arr].centroid
            dists.append(haversine_km(cen, ref.centroid))
    return DHV(hauv.user_id, reference, tuple(dists))


# ---------------------------------------------------------------------------
# Behavioral indicators
# ---------------------------------------------------------------------------

def compute_buv(user_id: str, events: Sequence[tuple], geography: Geography
                ) -> dict[str, BUV]:
    """The four behavioral vectors for a single user.

    Args:
        events: (timestamp, antenna_id) pairs in canonical store order.

    Per month: call_count = events; active_days = days with any event;
    radius_of_gyration_km = RMS haversine distance of event locations to
    their arithmetic-mean lon/lat; total_distance_km = summed haversine
    between consecutive events. Empty months are missing.
    """
    per_month: dict[int, list[tuple]] = {m: [] for m in range(1, 13)}
    for ts, antenna in events:
        per_month[ts.month].append((ts, antenna))
    counts: list[Optional[float]] = [None] * 12
    days: list[Optional[float]] = [None] * 12
    radius: list[Optional[float]] = [None] * 12
    total: list[Optional[float]] = [None] * 12
    for m in range(1, 13):
        evs = per_month[m]
        if not evs:
            continue
        locs = [geography.antennas[a].location for _, a in evs]
        counts[m - 1] = float(len(evs))
        days[m - 1] = float(len({ts.date() for ts, _ in evs}))
        mlon = sum(p.lon for p in locs) / len(locs)
        mlat = sum(p.lat for p in locs) / len(locs)
        sq = [float(_haversine_arrays(np.asarray(p.lon), np.asarray(p.lat),
                                      np.asarray(mlon), np.asarray(mlat))) ** 2
              for p in locs]
        radius[m - 1] = math.sqrt(sum(sq) / len(sq))
        steps = [haversine_km(a, b) for a, b in zip(locs, locs[1:])]
        total[m - 1] = float(sum(steps))
    return {
        "call_count": BUV(user_id, "call_count", tuple(counts)),
        "active_days": BUV(user_id, "active_days", tuple(days)),
        "radius_of_gyration_km": BUV(user_id, "radius_of_gyration_km", tuple(radius)),
        "total_distance_km": BUV(user_id, "total_distance_km", tuple(total)),
    }


def compute_buvs(events: pd.DataFrame, geography: Geography) -> pd.DataFrame:
    """Vectorized indicator table for all users.

    Args:
        events: canonical-order frame with user_id, timestamp, antenna_id.

    Returns:
        One row per (user_id, month) with events, columns for the four
        indicators.
    """
    if events.empty:
        return pd.DataFrame(columns=["user_id", "month", *BUV_INDICATORS])
    lon = {a.id: a.location.lon for a in geography.antennas.values()}
    lat = {a.id: a.location.lat for a in geography.antennas.values()}
    df = events[["user_id", "timestamp", "antenna_id"]].copy()
    df["lon"] = df["antenna_id"].map(lon)
    df["lat"] = df["antenna_id"].map(lat)
    if df["lon"].isna().any():
        bad = df.loc[df["lon"].isna(), "antenna_id"].iloc[0]
        raise InputError(f"event at unknown antenna {bad!r}")
    df["month"] = df["timestamp"].dt.month
    df["day"] = df["timestamp"].dt.floor("D")

    grp = df.groupby(["user_id", "month"], sort=True)
    out = grp.agg(call_count=("antenna_id", "size"),
                  active_days=("day", "nunique")).reset_index()

    cen = grp[["lon", "lat"]].transform("mean")
    d_to_mean = _haversine_arrays(df["lon"].to_numpy(), df["lat"].to_numpy(),
                                  cen["lon"].to_numpy(), cen["lat"].to_numpy())
    df["_sq"] = d_to_mean ** 2
    rog = np.sqrt(grp["_sq"].mean()).rename("radius_of_gyration_km").reset_index(drop=True)
    out["radius_of_gyration_km"] = rog

    same = (df["user_id"] == df["user_id"].shift()) & (df["month"] == df["month"].shift())
    step = _haversine_arrays(df["lon"].shift().to_numpy(), df["lat"].shift().to_numpy(),
                             df["lon"].to_numpy(), df["lat"].to_numpy())
    df["_step"] = np.where(same.to_numpy(), step, 0.0)
    out["total_distance_km"] = grp["_step"].sum().reset_index(drop=True)
    return out


def buv_table_to_vectors(table: pd.DataFrame, indicator: str) -> dict[str, BUV]:
    """Turn one indicator column of the batch table into BUV objects."""
    if indicator not in BUV_INDICATORS:
        raise InputError(f"unknown indicator {indicator!r}")
    out: dict[str, BUV] = {}
    for user, grp in table.groupby("user_id", sort=True):
        vals: list[Optional[float]] = [None] * 12
        for _, row in grp.iterrows():
            vals[int(row["month"]) - 1] = float(row[indicator])
        out[str(user)] = BUV(str(user), indicator, tuple(vals))
    return out


# ---------------------------------------------------------------------------
# Class statistics
# ---------------------------------------------------------------------------

def occupancy_histogram(class_id: int, member_ids: Sequence[str],
                        hauvs: Mapping[str, HAUV]) -> OccupancyHistogram:
    """Count, per arrondissement and month, members homed there."""
    counts: dict[str, list[int]] = {}
    for uid in member_ids:
        hauv = hauvs[uid]
        for m, arr in enumerate(hauv.months):
            if arr is None:
                continue
            counts.setdefault(arr, [0] * 12)[m] += 1
    return OccupancyHistogram(class_id, dict(sorted(counts.items())))


def characterize_class(class_id: int, member_ids: Sequence[str],
                       buvs: Mapping[str, Mapping[str, BUV]]
                       ) -> ClassCharacterization:
    """Population mean and std of each indicator per month over members.

    Args:
        buvs: user id -> indicator name -> BUV.

    Months where every member is missing get None for both statistics.
    """
    mean: dict[str, list[Optional[float]]] = {}
    std: dict[str, list[Optional[float]]] = {}
    for ind in BUV_INDICATORS:
        mean[ind] = [None] * 12
        std[ind] = [None] * 12
        for m in range(12):
            vals = [buvs[u][ind].values[m] for u in member_ids
                    if buvs[u][ind].values[m] is not None]
            if vals:
                arr = np.asarray(vals, dtype=float)
                mean[ind][m] = float(arr.mean())
                std[ind][m] = float(arr.std())  # population convention
    return ClassCharacterization(class_id, mean, std)


def vectors_to_csv(vectors: Mapping[str, HAUV] | Mapping[str, HLZUV], path) -> None:
    """Export 12-slot vectors as user_id, m1..m12 (empty = missing)."""
    rows = []
    for uid in sorted(vectors):
        months = vectors[uid].months
        rows.append([uid] + ["" if v is None else v for v in months])
    df = pd.DataFrame(rows, columns=["user_id"] + [f"m{m}" for m in range(1, 13)])
    df.to_csv(path, index=False)
