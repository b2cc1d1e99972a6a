"""Parse and validate input files into a deterministic event store.

Malformed rows are rejected with a reason, never silently dropped. The
store is sorted by the total key (user_id, timestamp, antenna_id, kind),
so shuffling the input file yields a byte-identical store.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import json

import numpy as np
import pandas as pd

from .errors import InputError

EVENT_COLUMNS = ["user_id", "timestamp", "antenna_id", "kind"]
EVENT_KINDS = ("call", "text")

REASON_BAD_ROW = "bad_row"
REASON_BAD_TIMESTAMP = "bad_timestamp"
REASON_BAD_KIND = "bad_kind"
REASON_OUT_OF_YEAR = "out_of_year"
REASON_UNKNOWN_ANTENNA = "unknown_antenna"


@dataclass(frozen=True)
class CdrEvent:
    """One anonymized communication event."""

    user_id: str
    timestamp: datetime
    antenna_id: str
    kind: str


@dataclass
class IngestReport:
    total_rows: int = 0
    accepted: int = 0
    rejected: dict[str, int] = field(default_factory=dict)
    distinct_users: int = 0
    user_coverage: dict[str, dict] = field(default_factory=dict)

    def reject(self, reason: str, n: int = 1):
        self.rejected[reason] = self.rejected.get(reason, 0) + n

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())

    def to_dict(self) -> dict:
        return {
            "total_rows": self.total_rows,
            "accepted": self.accepted,
            "rejected": dict(sorted(self.rejected.items())),
            "rejected_total": self.rejected_total,
            "distinct_users": self.distinct_users,
            "user_coverage": self.user_coverage,
        }


class EventStore:
    """Accepted events in canonical sorted order.

    Wraps a DataFrame with columns user_id, timestamp, antenna_id, kind,
    sorted by exactly those columns. Read-only after construction.
    """

    def __init__(self, frame: pd.DataFrame):
        self.frame = frame.reset_index(drop=True)

    def __len__(self):
        return len(self.frame)

    def users(self) -> list[str]:
        return self.frame["user_id"].drop_duplicates().tolist()

    def write_csv(self, path: str | Path):
        df = self.frame.copy()
        df["timestamp"] = df["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%S")
        df.to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path: str | Path) -> "EventStore":
        path = Path(path)
        if not path.exists():
            raise InputError(f"event store not found: {path}")
        df = pd.read_csv(path, dtype={"user_id": str, "antenna_id": str, "kind": str})
        df["timestamp"] = pd.to_datetime(df["timestamp"], format="%Y-%m-%dT%H:%M:%S")
        return cls(df)

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "EventStore":
        df = df.sort_values(EVENT_COLUMNS, kind="mergesort")
        return cls(df)


def _read_raw(path: Path) -> tuple[pd.DataFrame, int]:
    """Read the delimited file tolerantly; returns (frame, n_bad_arity).

    The fast C parser is tried first; if it trips over ragged rows, the
    slower python engine re-reads the file, counting bad lines instead of
    dropping them silently.
    """
    kwargs = dict(dtype=str, keep_default_na=False, skip_blank_lines=True)
    try:
        return pd.read_csv(path, **kwargs), 0
    except pd.errors.ParserError:
        bad = [0]

        def on_bad(line):
            bad[0] += 1
            return None

        df = pd.read_csv(path, engine="python", on_bad_lines=on_bad, **kwargs)
        return df, bad[0]


def parse_events(path: str | Path, analysis_year: int,
                 max_reject_fraction: float = 0.10,
                 known_antennas: set[str] | None = None
                 ) -> tuple[EventStore, IngestReport]:
    """Parse the CDR file into a sorted event store plus a report.

    Rows failing validation are tallied by reason (first failing check in
    a fixed order). Aborts if the rejected fraction exceeds
    max_reject_fraction.

    Args:
        path: delimited file with header user_id,timestamp,antenna_id,kind.
        analysis_year: events outside this year are rejected, not fatal.
        known_antennas: if given, events at other antennas are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"CDR file not found: {path}")
    df, n_bad_arity = _read_raw(path)
    if list(df.columns) != EVENT_COLUMNS:
        raise InputError(
            f"{path}: expected header {','.join(EVENT_COLUMNS)}, got {','.join(df.columns)}")

    report = IngestReport(total_rows=len(df) + n_bad_arity)
    if n_bad_arity:
        report.reject(REASON_BAD_ROW, n_bad_arity)

    reason = pd.Series("", index=df.index)

    blank = (df["user_id"] == "") | (df["antenna_id"] == "")
    reason[blank] = REASON_BAD_ROW

    ts = pd.to_datetime(df["timestamp"], format="%Y-%m-%dT%H:%M:%S", errors="coerce")
    reason[(reason == "") & ts.isna()] = REASON_BAD_TIMESTAMP

    bad_kind = ~df["kind"].isin(EVENT_KINDS)
    reason[(reason == "") & bad_kind] = REASON_BAD_KIND

    out_of_year = ts.notna() & (ts.dt.year != analysis_year)
    reason[(reason == "") & out_of_year] = REASON_OUT_OF_YEAR

    if known_antennas is not None:
        unknown = ~df["antenna_id"].isin(known_antennas)
        reason[(reason == "") & unknown] = REASON_UNKNOWN_ANTENNA

    for r, n in reason[reason != ""].value_counts().items():
        report.reject(str(r), int(n))

    keep = reason == ""
    events = df.loc[keep, ["user_id", "antenna_id", "kind"]].copy()
    events["timestamp"] = ts[keep]
    events = events[EVENT_COLUMNS]
    report.accepted = len(events)

    if report.total_rows > 0:
        frac = report.rejected_total / report.total_rows
        if frac > max_reject_fraction:
            raise InputError(
                f"{path}: {frac:.1%} of rows rejected "
                f"(limit {max_reject_fraction:.1%}); reasons: {report.rejected}")

    store = EventStore.from_frame(events)
    report.distinct_users = len(store.users())
    if len(store):
        days = store.frame["timestamp"].dt.date
        cov = store.frame.assign(day=days).groupby("user_id")["day"].agg(["min", "max", "nunique"])
        report.user_coverage = {
            str(u): {"first_day": str(row["min"]), "last_day": str(row["max"]),
                     "active_days": int(row["nunique"])}
            for u, row in cov.iterrows()
        }
    return store, report


# ---------------------------------------------------------------------------
# Agricultural calendar
# ---------------------------------------------------------------------------

CALENDAR_CATEGORIES = ("planting", "weeding", "harvest", "sales", "labor", "other")


def month_span(start_month: int, end_month: int) -> frozenset[int]:
    """Inclusive month set from start to end, wrapping around the year."""
    if not (1 <= start_month <= 12 and 1 <= end_month <= 12):
        raise InputError(f"months out of range: {start_month}..{end_month}")
    if start_month <= end_month:
        return frozenset(range(start_month, end_month + 1))
    return frozenset(range(start_month, 13)) | frozenset(range(1, end_month + 1))


@dataclass(frozen=True)
class CalendarInterval:
    """One seasonal-activity interval for a livelihood zone."""

    zone_id: int
    activity: str
    category: str
    months: frozenset[int]

    def __post_init__(self):
        if not self.months or not self.months <= set(range(1, 13)):
            raise InputError(f"bad month set for {self.activity}: {sorted(self.months)}")
        if self.category not in CALENDAR_CATEGORIES:
            raise InputError(f"unknown calendar category {self.category!r}")


def parse_calendar(path: str | Path, zone_ids: set[int]) -> list[CalendarInterval]:
    """Parse the calendar JSON (array of zone/activity/month-span records)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"calendar file not found: {path}")
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, list):
        raise InputError(f"{path}: expected a JSON array")
    intervals = []
    for i, rec in enumerate(doc):
        try:
            zone = int(rec["zone_id"])
            if zone not in zone_ids:
                raise InputError(f"unknown zone {zone}")
            intervals.append(CalendarInterval(
                zone_id=zone,
                activity=str(rec["activity"]),
                category=str(rec.get("category", "other")),
                months=month_span(int(rec["start_month"]), int(rec["end_month"]))))
        except (KeyError, ValueError, TypeError) as e:
            raise InputError(f"{path}: record {i}: {e}") from e
        except InputError as e:
            raise InputError(f"{path}: record {i}: {e}") from e
    return intervals
