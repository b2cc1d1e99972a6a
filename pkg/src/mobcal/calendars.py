"""Correlation of class mobility profiles with seasonal calendars and rain.

Lags are circular because the activities compared are annual cycles; a
positive lag means the profile follows the calendar signal with that many
months of delay. Significance comes from a permutation test (profile
months shuffled), since 12-point Pearson coefficients are otherwise easy
to over-read.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .cluster import MobilityClass
from .geo import RegionSeries
from .ingest import CalendarInterval

SINGLE_YEAR_DISCLAIMER = (
    "Correlations come from a single year of data and cannot distinguish "
    "calendar-driven migration from movements modulated by external shocks "
    "(rainfall anomalies, prices, crises); multi-year observation is needed "
    "for that distinction."
)

ZERO_VARIANCE_PROFILE = "constant_profile"
ZERO_VARIANCE_TARGET = "year_round_target"


def interval_indicator(interval: CalendarInterval) -> np.ndarray:
    """12-value binary vector marking the interval's active months."""
    return np.array([1.0 if m in interval.months else 0.0 for m in range(1, 13)])


@dataclass
class CorrelationResult:
    class_id: int
    target: str
    best_lag: Optional[int]
    best_r: Optional[float]
    lags: list[int]
    coefficients: list[Optional[float]]
    undefined_reason: Optional[str] = None
    p_value: Optional[float] = None


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.corrcoef(x, y)[0, 1])


def lagged_correlation(profile: Sequence[float], target: Sequence[float],
                       max_lag: int = 3, class_id: int = -1,
                       target_name: str = "target") -> CorrelationResult:
    """Pearson correlation of a 12-month profile against a shifted target.

    At lag L the target is shifted forward in time by L months
    (shifted[m] = target[m - L mod 12]), so the best lag reads as "the
    profile echoes the target L months later". Ties prefer the smallest
    |L|, then the negative lag.
    """
    p = np.asarray(profile, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != (12,) or t.shape != (12,):
        raise InputError("profile and target must have 12 monthly values")
    if not 0 <= max_lag <= 11:
        raise InputError("max_lag must be in 0..11")
    lags = list(range(-max_lag, max_lag + 1))
    if np.ptp(p) == 0 or np.ptp(t) == 0:
        reason = ZERO_VARIANCE_PROFILE if np.ptp(p) == 0 else ZERO_VARIANCE_TARGET
        return CorrelationResult(class_id, target_name, None, None, lags,
                                 [None] * len(lags), undefined_reason=reason)
    coefficients = [_pearson(p, np.roll(t, lag)) for lag in lags]
    best_i = max(range(len(lags)),
                 key=lambda i: (coefficients[i], -abs(lags[i]), -lags[i]))
    return CorrelationResult(class_id, target_name, lags[best_i],
                             coefficients[best_i], lags,
                             [float(c) for c in coefficients])


def permutation_p_value(profile: Sequence[float], target: Sequence[float],
                        lag: int, observed_r: float, n_permutations: int,
                        seed: int) -> float:
    """Two-sided permutation p-value for the correlation at a fixed lag.

    Shuffles the profile months and counts permutations whose |r| against
    the lag-shifted target reaches |observed_r|; uses the add-one
    (permutation-inclusive) estimator.
    """
    p = np.asarray(profile, dtype=float)
    t = np.roll(np.asarray(target, dtype=float), lag)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    hits = 0
    threshold = abs(observed_r) - 1e-12
    for _ in range(n_permutations):
        r = _pearson(rng.permutation(p), t)
        if abs(r) >= threshold:
            hits += 1
    return (1 + hits) / (n_permutations + 1)


@dataclass
class ZoneReport:
    zone_id: int
    results: list[CorrelationResult]  # sorted by |best_r| descending
    rainfall_monthly: Optional[list[Optional[float]]]
    disclaimer: str = SINGLE_YEAR_DISCLAIMER

    def to_dict(self) -> dict:
        return {
            "zone_id": self.zone_id,
            "disclaimer": self.disclaimer,
            "rainfall_monthly": self.rainfall_monthly,
            "results": [
                {
                    "class_id": r.class_id,
                    "target": r.target,
                    "best_lag": r.best_lag,
                    "best_r": r.best_r,
                    "lags": r.lags,
                    "coefficients": r.coefficients,
                    "p_value": r.p_value,
                    "undefined_reason": r.undefined_reason,
                }
                for r in self.results
            ],
        }


def monthly_series_vector(series: RegionSeries) -> list[Optional[float]]:
    """12-slot vector from a month-resolution series (None where absent)."""
    if series.resolution != "month":
        raise InputError("expected a month-resolution series")
    out: list[Optional[float]] = [None] * 12
    for t, v in zip(series.times, series.values):
        out[t.month - 1] = v
    return out


def zone_report(zone_id: int, classes: Sequence[MobilityClass],
                intervals: Sequence[CalendarInterval],
                rain_monthly: Optional[RegionSeries] = None,
                max_lag: int = 3, n_permutations: int = 1000,
                seed: int = 0) -> ZoneReport:
    """Correlate every class profile against the zone's calendar and rain.

    Targets are each calendar interval's indicator vector plus, when
    available, the zone's monthly rainfall (months absent from the rain
    series enter as 0). Results sort by |r| at the best lag, defined
    results first.
    """
    targets: list[tuple[str, np.ndarray]] = []
    for iv in intervals:
        if iv.zone_id != zone_id:
            raise InputError(f"interval {iv.activity!r} belongs to zone {iv.zone_id}")
        targets.append((f"interval:{iv.activity}", interval_indicator(iv)))
    rain_vector: Optional[list[Optional[float]]] = None
    if rain_monthly is not None:
        rain_vector = monthly_series_vector(rain_monthly)
        filled = np.array([0.0 if v is None else v for v in rain_vector])
        targets.append(("rainfall", filled))

    results = []
    for cls in classes:
        profile = np.asarray(cls.mean_profile, dtype=float)
        for name, tvec in targets:
            res = lagged_correlation(profile, tvec, max_lag,
                                     class_id=cls.class_id, target_name=name)
            if res.best_r is not None:
                res.p_value = permutation_p_value(
                    profile, tvec, res.best_lag, res.best_r, n_permutations,
                    seed=seed + 1009 * cls.class_id + len(name))
            results.append(res)
    results.sort(key=lambda r: (r.best_r is None,
                                -(abs(r.best_r) if r.best_r is not None else 0.0),
                                r.class_id, r.target))
    return ZoneReport(zone_id, results, rain_vector)
