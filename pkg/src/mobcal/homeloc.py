"""Daily and monthly home-location estimation by time aggregation.

Each user's homes depend only on that user's events, so the batch
implementations are plain groupbys that must agree exactly with the
per-user primitives (tested as an equivalence property).

Daily home: the arrondissement with the most events that day; ties break
toward the arrondissement of the day's latest event, then lowest id.
Monthly home: the modal daily home over non-missing days (>= d_min of
them); ties break by the month's event count, then lowest id.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InputError
from .geo import Geography

NIGHT_START_HOUR = 19  # 19:00..06:59 counts double under night weighting
NIGHT_END_HOUR = 7


@dataclass(frozen=True)
class DailyHome:
    user_id: str
    day: date
    arrondissement_id: Optional[str]


@dataclass(frozen=True)
class MonthlyHome:
    user_id: str
    month: int
    arrondissement_id: Optional[str]
    days: int  # non-missing daily homes that support this estimate


def _event_weight(ts: datetime, night_weighting: bool) -> int:
    if night_weighting and (ts.hour >= NIGHT_START_HOUR or ts.hour < NIGHT_END_HOUR):
        return 2
    return 1


def daily_home(user_id: str, day: date,
               events: Sequence[tuple[datetime, str]],
               night_weighting: bool = False) -> DailyHome:
    """Estimate one user's home arrondissement for one day.

    Args:
        events: (timestamp, arrondissement_id) pairs for that day.
    """
    if not events:
        return DailyHome(user_id, day, None)
    counts: dict[str, int] = {}
    latest_ts = max(ts for ts, _ in events)
    latest_arr = min(arr for ts, arr in events if ts == latest_ts)
    for ts, arr in events:
        counts[arr] = counts.get(arr, 0) + _event_weight(ts, night_weighting)
    top = max(counts.values())
    tied = sorted(a for a, c in counts.items() if c == top)
    chosen = latest_arr if latest_arr in tied else tied[0]
    return DailyHome(user_id, day, chosen)


def monthly_home(user_id: str, month: int,
                 daily_arrs: Sequence[Optional[str]],
                 event_counts: Mapping[str, int],
                 d_min: int = 1) -> MonthlyHome:
    """Estimate one user's home arrondissement for one month.

    Args:
        daily_arrs: the month's daily homes (None = missing day).
        event_counts: events per arrondissement in the month (tie-break).
        d_min: minimum non-missing days required for an estimate.
    """
    if d_min < 1:
        raise InputError("d_min must be >= 1")
    days: dict[str, int] = {}
    for arr in daily_arrs:
        if arr is not None:
            days[arr] = days.get(arr, 0) + 1
    n_days = sum(days.values())
    if n_days < d_min or not days:
        return MonthlyHome(user_id, month, None, 0)
    top = max(days.values())
    tied = sorted(a for a, c in days.items() if c == top)
    chosen = min(tied, key=lambda a: (-event_counts.get(a, 0), a))
    return MonthlyHome(user_id, month, chosen, days[chosen])


def monthly_home_lz(home: MonthlyHome, geography: Geography) -> Optional[int]:
    """Livelihood zone of a monthly home; missing propagates."""
    if home.arrondissement_id is None:
        return None
    return geography.zone_of(home.arrondissement_id)


# ---------------------------------------------------------------------------
# Vectorized batch versions (pipeline path)
# ---------------------------------------------------------------------------

def compute_daily_homes(events: pd.DataFrame,
                        night_weighting: bool = False) -> pd.DataFrame:
    """Daily homes for every (user, day) with at least one event.

    Args:
        events: columns user_id, timestamp, arrondissement_id.

    Returns:
        Frame with columns user_id, day (datetime64), arrondissement_id.
    """
    if events.empty:
        return pd.DataFrame(columns=["user_id", "day", "arrondissement_id"])
    df = events[["user_id", "timestamp", "arrondissement_id"]].copy()
    df["day"] = df["timestamp"].dt.floor("D")
    hours = df["timestamp"].dt.hour
    df["w"] = 1
    if night_weighting:
        df.loc[(hours >= NIGHT_START_HOUR) | (hours < NIGHT_END_HOUR), "w"] = 2

    per_arr = (df.groupby(["user_id", "day", "arrondissement_id"], sort=True)
                 .agg(n=("w", "sum"), tmax=("timestamp", "max"))
                 .reset_index())
    grp = per_arr.groupby(["user_id", "day"], sort=False)
    per_arr["n_top"] = grp["n"].transform("max")
    per_arr["t_top"] = grp["tmax"].transform("max")

    # arrondissement of the day's latest event (lowest id on same-second ties)
    latest = (per_arr[per_arr["tmax"] == per_arr["t_top"]]
              .sort_values(["user_id", "day", "arrondissement_id"], kind="mergesort")
              .groupby(["user_id", "day"], sort=False, as_index=False)
              .first()[["user_id", "day", "arrondissement_id"]]
              .rename(columns={"arrondissement_id": "latest_arr"}))

    tied = per_arr[per_arr["n"] == per_arr["n_top"]].merge(
        latest, on=["user_id", "day"], how="left")
    tied["is_latest"] = tied["arrondissement_id"] == tied["latest_arr"]
    tied = tied.sort_values(["user_id", "day", "is_latest", "arrondissement_id"],
                            ascending=[True, True, False, True], kind="mergesort")
    out = (tied.groupby(["user_id", "day"], sort=False, as_index=False)
               .first()[["user_id", "day", "arrondissement_id"]])
    return out.reset_index(drop=True)


def month_event_counts(events: pd.DataFrame) -> pd.DataFrame:
    """Events per (user, month, arrondissement); monthly-home tie-break input."""
    df = events.copy()
    df["month"] = df["timestamp"].dt.month
    return (df.groupby(["user_id", "month", "arrondissement_id"], sort=True)
              .size().rename("n_events").reset_index())


def compute_monthly_homes(daily_homes: pd.DataFrame,
                          event_counts: pd.DataFrame,
                          users: Sequence[str],
                          d_min: int = 1) -> pd.DataFrame:
    """Monthly homes for every user and all 12 months (missing allowed).

    Args:
        daily_homes: output of compute_daily_homes.
        event_counts: output of month_event_counts.
        users: the full population (users without data still get 12 rows).

    Returns:
        Frame with columns user_id, month (1..12), arrondissement_id
        (NA when missing), days (supporting day count, 0 when missing).
    """
    if d_min < 1:
        raise InputError("d_min must be >= 1")
    users = sorted(set(users))
    full_index = pd.MultiIndex.from_product(
        [users, range(1, 13)], names=["user_id", "month"])

    if daily_homes.empty:
        out = pd.DataFrame(index=full_index).reset_index()
        out["arrondissement_id"] = pd.NA
        out["days"] = 0
        return out

    dh = daily_homes.copy()
    dh["month"] = dh["day"].dt.month
    per_arr = (dh.groupby(["user_id", "month", "arrondissement_id"], sort=True)
                 .size().rename("days").reset_index())
    per_arr = per_arr.merge(event_counts, on=["user_id", "month", "arrondissement_id"],
                            how="left")
    per_arr["n_events"] = per_arr["n_events"].fillna(0).astype(int)

    grp = per_arr.groupby(["user_id", "month"], sort=False)
    per_arr["days_top"] = grp["days"].transform("max")
    per_arr["days_total"] = grp["days"].transform("sum")

    tied = per_arr[per_arr["days"] == per_arr["days_top"]]
    tied = tied.sort_values(["user_id", "month", "n_events", "arrondissement_id"],
                            ascending=[True, True, False, True], kind="mergesort")
    chosen = (tied.groupby(["user_id", "month"], sort=False, as_index=False)
                  .first()[["user_id", "month", "arrondissement_id", "days", "days_total"]])
    chosen.loc[chosen["days_total"] < d_min, "arrondissement_id"] = pd.NA
    chosen.loc[chosen["arrondissement_id"].isna(), "days"] = 0

    out = (chosen.set_index(["user_id", "month"])[["arrondissement_id", "days"]]
                 .reindex(full_index).reset_index())
    out["arrondissement_id"] = out["arrondissement_id"].astype(object).where(
        out["arrondissement_id"].notna(), pd.NA)
    out["days"] = out["days"].fillna(0).astype(int)
    return out


def monthly_homes_to_csv(monthly: pd.DataFrame, path) -> None:
    """Export monthly homes as user_id, m1..m12 (empty = missing)."""
    wide = monthly.pivot(index="user_id", columns="month", values="arrondissement_id")
    wide = wide.reindex(columns=range(1, 13))
    wide.columns = [f"m{m}" for m in range(1, 13)]
    wide.sort_index().to_csv(path, na_rep="")
