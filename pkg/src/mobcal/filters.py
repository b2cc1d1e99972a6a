"""Pre-filters applied to user vectors before clustering.

Rejection reasons are mutually exclusive and attributed in a fixed order
(missing-data, non-mover, regular-traveler, temporal-consistency), so
tallies are reproducible, while the kept set itself does not depend on
that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .errors import InputError
from .features import HAUV, HLZUV, BUV, BinaryOccupancy, binarize
from .geo import Geography, haversine_km

REASON_MISSING = "missing_data"
REASON_NON_MOVER = "non_mover"
REASON_REGULAR_TRAVELER = "regular_traveler"
REASON_TEMPORAL = "temporal_consistency"

TEMPORAL_OK = "ok"
TEMPORAL_M_MIN = "m_min"
TEMPORAL_M_OUTMIN = "m_outmin"
TEMPORAL_M_MAX = "m_max"
TEMPORAL_WINDOW = "window"


@dataclass(frozen=True)
class FilterParams:
    """Thresholds for the temporal-consistency and traveler filters."""

    m_min: int = 2
    m_max: int = 10
    m_outmin: int = 1
    window: Optional[frozenset[int]] = None
    rho: float = 1.0
    drop_missing_over: int = 3

    def __post_init__(self):
        if not (1 <= self.m_min <= self.m_max <= 12):
            raise InputError(f"need 1 <= m_min <= m_max <= 12, got {self.m_min}, {self.m_max}")
        if self.m_outmin < 0:
            raise InputError("m_outmin must be >= 0")
        if self.rho <= 0:
            raise InputError("rho must be > 0")
        if self.drop_missing_over < 0:
            raise InputError("drop_missing_over must be >= 0")
        if self.window is not None and not set(self.window) <= set(range(1, 13)):
            raise InputError(f"window months out of range: {sorted(self.window)}")


def is_non_mover(vector: HAUV | HLZUV) -> bool:
    """True iff all non-missing entries are equal (and at least one exists)."""
    seen = {v for v in vector.months if v is not None}
    return len(seen) == 1


def is_regular_traveler(hauv: HAUV, rog: BUV, geography: Geography,
                        rho: float = 1.0) -> Optional[bool]:
    """Flag users whose month-to-month moves stay within their gyration radius.

    True when the largest displacement between consecutive non-missing
    monthly homes is at most rho times the mean non-missing monthly radius
    of gyration. Returns None (undetermined) when there are fewer than two
    non-missing months, no consecutive pair, or no radius value.
    """
    non_missing = [m for m in hauv.months if m is not None]
    radii = [v for v in rog.values if v is not None]
    if len(non_missing) < 2 or not radii:
        return None
    steps = []
    for a, b in zip(hauv.months, hauv.months[1:]):
        if a is not None and b is not None:
            ca = geography.arrondissements[a].centroid
            cb = geography.arrondissements[b].centroid
            steps.append(haversine_km(ca, cb))
    if not steps:
        return None
    return max(steps) <= rho * (sum(radii) / len(radii))


def longest_run(bits: Sequence[int]) -> int:
    """Longest run of 1s; runs do not wrap from December to January."""
    best = cur = 0
    for b in bits:
        cur = cur + 1 if b else 0
        best = max(best, cur)
    return best


def temporal_consistency(occupancy: BinaryOccupancy, params: FilterParams,
                         months_elsewhere: Optional[int] = None) -> str:
    """Check the parametric temporal-consistency constraints.

    Args:
        months_elsewhere: months with a non-missing home in another zone.
            Defaults to the count of zero bits, which is only correct for
            users with no missing months; pipeline callers pass the true
            count derived from the HLZUV.

    Returns:
        "ok" to keep, else the first failing constraint name
        ("m_min", "m_outmin", "m_max", "window").
    """
    bits = occupancy.bits
    if months_elsewhere is None:
        months_elsewhere = 12 - sum(bits)
    if longest_run(bits) < params.m_min:
        return TEMPORAL_M_MIN
    if months_elsewhere < params.m_outmin:
        return TEMPORAL_M_OUTMIN
    if sum(bits) > params.m_max:
        return TEMPORAL_M_MAX
    if params.window is not None and not any(bits[m - 1] for m in params.window):
        return TEMPORAL_WINDOW
    return TEMPORAL_OK


@dataclass(frozen=True)
class FilterCandidate:
    """Everything the filter chain needs to know about one user."""

    user_id: str
    hauv: HAUV
    hlzuv: HLZUV
    rog: BUV


@dataclass
class FilterOutcome:
    target_lz: int
    kept: list[str]
    rejections: dict[str, int]
    reasons_by_user: dict[str, str]
    undetermined_traveler: list[str]

    def to_dict(self, include_users: bool = False) -> dict:
        doc = {
            "target_lz": self.target_lz,
            "kept": len(self.kept),
            "rejections": dict(sorted(self.rejections.items())),
            "undetermined_traveler": len(self.undetermined_traveler),
        }
        if include_users:
            doc["reasons_by_user"] = dict(sorted(self.reasons_by_user.items()))
        return doc


def apply_filters(candidates: Sequence[FilterCandidate], params: FilterParams,
                  target_lz: int, geography: Geography) -> FilterOutcome:
    """Filter a candidate population for clustering in one livelihood zone.

    Each rejected user carries exactly one reason, the first failing
    check in order: missing-data, non-mover, regular-traveler,
    temporal-consistency. Users who never visit the target zone fall out
    at the temporal m_min constraint (an all-zero occupancy has no run),
    so tallies plus the kept set always account for every candidate.
    """
    if target_lz not in geography.zones:
        raise InputError(f"unknown livelihood zone {target_lz}")
    kept: list[str] = []
    rejections: dict[str, int] = {}
    reasons: dict[str, str] = {}
    undetermined: list[str] = []

    def reject(uid: str, reason: str):
        rejections[reason] = rejections.get(reason, 0) + 1
        reasons[uid] = reason

    for cand in sorted(candidates, key=lambda c: c.user_id):
        uid = cand.user_id
        occupancy = binarize(cand.hlzuv, target_lz)
        missing = sum(1 for z in cand.hlzuv.months if z is None)
        if missing > params.drop_missing_over:
            reject(uid, REASON_MISSING)
            continue
        if is_non_mover(cand.hlzuv):
            reject(uid, REASON_NON_MOVER)
            continue
        traveler = is_regular_traveler(cand.hauv, cand.rog, geography, params.rho)
        if traveler is None:
            undetermined.append(uid)
        elif traveler:
            reject(uid, REASON_REGULAR_TRAVELER)
            continue
        elsewhere = sum(1 for z in cand.hlzuv.months
                        if z is not None and z != target_lz)
        verdict = temporal_consistency(occupancy, params, elsewhere)
        if verdict != TEMPORAL_OK:
            reject(uid, f"{REASON_TEMPORAL}:{verdict}")
            continue
        kept.append(uid)

    return FilterOutcome(target_lz, kept, rejections, reasons, undetermined)
