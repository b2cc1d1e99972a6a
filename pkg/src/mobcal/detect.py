"""Event detection from daily home-location changes.

Daily origin-destination flows feed per-region inflow/outflow series;
day-over-day gradients are thresholded with a robust (median/MAD) z-score
so the events being hunted cannot inflate the detection scale themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InputError

MAD_CONSISTENCY = 1.4826  # scales MAD to the std of a normal sample

DIRECTION_IN = "in"
DIRECTION_OUT = "out"


@dataclass
class FlowMatrix:
    """Off-diagonal transition counts between consecutive days' homes."""

    day: date
    counts: dict[tuple[str, str], int]  # (origin, destination) -> movers

    def total(self) -> int:
        return sum(self.counts.values())

    def inflow(self, region: str) -> int:
        return sum(c for (a, b), c in self.counts.items() if b == region)

    def outflow(self, region: str) -> int:
        return sum(c for (a, b), c in self.counts.items() if a == region)


@dataclass(frozen=True)
class EventAlert:
    day: date
    region_id: Optional[str]  # None = country level
    direction: str
    score: Optional[float]  # robust z; None under the degenerate-MAD fallback
    raw_count: int


def daily_flows(daily_homes: pd.DataFrame) -> list[FlowMatrix]:
    """Per-day origin-destination counts from the daily-home table.

    A user contributes to day d when they have a home on both d-1 and d
    and the two differ. Days in the observed span with no movers yield an
    empty matrix (so downstream series are regular).
    """
    if daily_homes.empty:
        return []
    dh = daily_homes.sort_values(["user_id", "day"], kind="mergesort")
    prev_day = dh["day"] + pd.Timedelta(days=1)
    left = dh[["user_id", "day", "arrondissement_id"]].copy()
    left["day"] = prev_day
    merged = left.merge(dh, on=["user_id", "day"], suffixes=("_from", "_to"))
    moved = merged[merged["arrondissement_id_from"] != merged["arrondissement_id_to"]]
    grouped = (moved.groupby(["day", "arrondissement_id_from", "arrondissement_id_to"])
                    .size())

    start = dh["day"].min() + pd.Timedelta(days=1)
    end = dh["day"].max()
    flows = []
    by_day: dict = {}
    for (day, a, b), n in grouped.items():
        by_day.setdefault(day, {})[(str(a), str(b))] = int(n)
    d = start
    while d <= end:
        flows.append(FlowMatrix(d.date(), by_day.get(d, {})))
        d += pd.Timedelta(days=1)
    return flows


def region_series(flows: Sequence[FlowMatrix], region: str,
                  direction: str) -> tuple[list[date], np.ndarray]:
    """Daily inflow or outflow counts for one region over the flow span."""
    if direction not in (DIRECTION_IN, DIRECTION_OUT):
        raise InputError(f"direction must be in/out, got {direction!r}")
    days = [f.day for f in flows]
    if direction == DIRECTION_IN:
        vals = np.array([f.inflow(region) for f in flows], dtype=float)
    else:
        vals = np.array([f.outflow(region) for f in flows], dtype=float)
    return days, vals


def detect_events(values: Sequence[float], days: Sequence[date],
                  region_id: Optional[str], direction: str,
                  k: float = 4.0, min_days: int = 30) -> list[EventAlert]:
    """Threshold day-over-day gradients of a count series.

    The gradient g_t = x_t - x_{t-1} is standardized by the series' median
    and MAD; an alert fires where (g_t - median) / (1.4826 * MAD) > k.
    When MAD is zero the scale is degenerate: fall back to alerting on any
    gradient strictly above the largest earlier |gradient|, which leaves a
    constant series alert-free.
    """
    x = np.asarray(values, dtype=float)
    if len(x) != len(days):
        raise InputError("values and days must align")
    if len(x) < min_days:
        raise InputError(f"series too short: {len(x)} < {min_days} days")
    g = np.diff(x)
    med = float(np.median(g))
    mad = float(np.median(np.abs(g - med)))
    alerts: list[EventAlert] = []
    if mad > 0.0:
        z = (g - med) / (MAD_CONSISTENCY * mad)
        for t in np.nonzero(z > k)[0]:
            alerts.append(EventAlert(days[t + 1], region_id, direction,
                                     float(z[t]), int(x[t + 1])))
    else:
        running_max = 0.0
        for t in range(len(g)):
            if t > 0 and g[t] > running_max:
                alerts.append(EventAlert(days[t + 1], region_id, direction,
                                         None, int(x[t + 1])))
            running_max = max(running_max, abs(g[t]))
    return alerts


def detect_all_regions(flows: Sequence[FlowMatrix], regions: Sequence[str],
                       k: float = 4.0, min_days: int = 30) -> list[EventAlert]:
    """Run detection on every region's inflow and outflow series."""
    alerts: list[EventAlert] = []
    days = [f.day for f in flows]
    for region in regions:
        for direction in (DIRECTION_IN, DIRECTION_OUT):
            _, vals = region_series(flows, region, direction)
            alerts.extend(detect_events(vals, days, region, direction, k, min_days))
    alerts.sort(key=lambda a: (a.day, a.region_id or "", a.direction))
    return alerts


def select_periods(profile: Sequence[float], theta: float = 0.2) -> set[int]:
    """Months where a class profile jumps by at least theta.

    Non-circular: month m (2..12) is selected when
    |profile[m] - profile[m-1]| >= theta.
    """
    if len(profile) != 12:
        raise InputError("profile must have 12 monthly values")
    p = np.asarray(profile, dtype=float)
    return {m for m in range(2, 13) if abs(p[m - 1] - p[m - 2]) >= theta}
