"""Stationary 1-step Markov model of monthly home displacements.

The fitted chain is a validation baseline: comparing observed month-pair
location agreement against agreement under the chain exposes seasonal
(non-stationary) structure that a time-homogeneous model cannot produce.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InputError, InvariantError
from .features import HAUV


@dataclass
class TransitionModel:
    """Row-stochastic monthly transition matrix over arrondissement states."""

    states: list[str]
    matrix: np.ndarray          # (K, K), rows sum to 1
    initial: np.ndarray         # (K,), empirical January distribution

    def __post_init__(self):
        k = len(self.states)
        if self.matrix.shape != (k, k) or self.initial.shape != (k,):
            raise InvariantError("model shape mismatch")
        if np.any(self.matrix < 0) or np.any(self.initial < 0):
            raise InvariantError("negative probabilities")
        if not np.allclose(self.matrix.sum(axis=1), 1.0, atol=1e-9):
            raise InvariantError("transition rows must sum to 1")
        if not np.isclose(self.initial.sum(), 1.0, atol=1e-9):
            raise InvariantError("initial distribution must sum to 1")

    def state_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}


def fit_stationary(hauvs: Mapping[str, HAUV]) -> TransitionModel:
    """Fit the chain by pooling all consecutive-month home pairs.

    P[a][b] is the pooled count of (month m in a, month m+1 in b) over all
    users and months, normalized per row; rows never observed as origins
    become self-loops. The initial distribution is the empirical January
    home distribution (uniform if January is never observed).
    """
    states = sorted({arr for h in hauvs.values() for arr in h.months if arr is not None})
    if not states:
        raise InputError("no non-missing homes to fit")
    index = {s: i for i, s in enumerate(states)}
    k = len(states)
    counts = np.zeros((k, k))
    january = np.zeros(k)
    n_pairs = 0
    for h in hauvs.values():
        months = h.months
        if months[0] is not None:
            january[index[months[0]]] += 1
        for a, b in zip(months, months[1:]):
            if a is not None and b is not None:
                counts[index[a], index[b]] += 1
                n_pairs += 1
    if n_pairs == 0:
        raise InputError("no consecutive non-missing month pairs")
    row_tot = counts.sum(axis=1)
    matrix = np.where(row_tot[:, None] > 0, counts / np.maximum(row_tot, 1)[:, None], 0.0)
    for i in np.nonzero(row_tot == 0)[0]:
        matrix[i, i] = 1.0
    initial = january / january.sum() if january.sum() > 0 else np.full(k, 1.0 / k)
    return TransitionModel(states, matrix, initial)


def _user_rng(seed: int, user_index: int) -> np.random.Generator:
    """Deterministic per-user substream (portable PCG64 generator)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, user_index))))


def simulate(model: TransitionModel, n_users: int, seed: int) -> dict[str, HAUV]:
    """Sample n_users 12-month trajectories from the chain.

    Each user draws from an independent substream keyed by (seed, index),
    so results are reproducible regardless of evaluation order.
    """
    if n_users < 0:
        raise InputError("n_users must be >= 0")
    k = len(model.states)
    init_cdf = np.cumsum(model.initial)
    row_cdf = np.cumsum(model.matrix, axis=1)
    width = max(6, len(str(max(n_users - 1, 0))))
    out: dict[str, HAUV] = {}
    for i in range(n_users):
        rng = _user_rng(seed, i)
        u = rng.random(12)
        path = np.empty(12, dtype=np.int64)
        path[0] = np.searchsorted(init_cdf, u[0], side="right")
        for m in range(1, 12):
            path[m] = np.searchsorted(row_cdf[path[m - 1]], u[m], side="right")
        path = np.minimum(path, k - 1)  # guard the u == 1.0 edge
        uid = f"sim-{i:0{width}d}"
        out[uid] = HAUV(uid, tuple(model.states[s] for s in path))
    return out


@dataclass
class AgreementResult:
    month_a: int
    month_b: int
    n_users: int
    agreement: Optional[float]
    cramers_v: Optional[float]

    @property
    def undetermined(self) -> bool:
        return self.agreement is None


def month_agreement(hauvs: Mapping[str, HAUV], m: int, m2: int) -> AgreementResult:
    """Location agreement between two months across the population.

    Returns P(home_m == home_m2) over users non-missing in both months,
    plus Cramer's V of the contingency table. With no eligible users the
    pair is undetermined. Degenerate tables (a single row or column)
    yield V = 1 under perfect agreement and V = 0 otherwise.
    """
    for month in (m, m2):
        if not 1 <= month <= 12:
            raise InputError(f"month out of range: {month}")
    pairs = [(h.months[m - 1], h.months[m2 - 1]) for h in hauvs.values()]
    pairs = [(a, b) for a, b in pairs if a is not None and b is not None]
    if not pairs:
        return AgreementResult(m, m2, 0, None, None)
    n = len(pairs)
    agree = sum(1 for a, b in pairs if a == b) / n
    rows = sorted({a for a, _ in pairs})
    cols = sorted({b for _, b in pairs})
    dmin = min(len(rows), len(cols)) - 1
    if dmin == 0:
        v = 1.0 if agree == 1.0 else 0.0
        return AgreementResult(m, m2, n, agree, v)
    ridx = {s: i for i, s in enumerate(rows)}
    cidx = {s: i for i, s in enumerate(cols)}
    table = np.zeros((len(rows), len(cols)))
    for a, b in pairs:
        table[ridx[a], cidx[b]] += 1
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / n
    with np.errstate(invalid="ignore", divide="ignore"):
        chi2 = float(np.nansum((table - expected) ** 2 / expected))
    v = float(np.sqrt(chi2 / (n * dmin)))
    return AgreementResult(m, m2, n, agree, min(v, 1.0))


@dataclass
class PairGap:
    month_a: int
    month_b: int
    observed: Optional[float]
    simulated_mean: Optional[float]
    band_low: Optional[float]
    band_high: Optional[float]
    gap: Optional[float]
    flagged: bool
    undetermined: bool


@dataclass
class NonstationarityReport:
    n_simulations: int
    n_users: int
    pairs: list[PairGap]

    def flagged_pairs(self) -> list[tuple[int, int]]:
        return [(p.month_a, p.month_b) for p in self.pairs if p.flagged]

    def to_dict(self) -> dict:
        return {
            "n_simulations": self.n_simulations,
            "n_users": self.n_users,
            "pairs": [
                {
                    "months": [p.month_a, p.month_b],
                    "observed": p.observed,
                    "simulated_mean": p.simulated_mean,
                    "band": [p.band_low, p.band_high],
                    "gap": p.gap,
                    "flagged": p.flagged,
                    "undetermined": p.undetermined,
                }
                for p in self.pairs
            ],
        }


def _code_matrix(hauvs: Mapping[str, HAUV]) -> np.ndarray:
    """(n_users, 12) state codes; -1 marks a missing month."""
    states: dict[str, int] = {}
    rows = np.empty((len(hauvs), 12), dtype=np.int64)
    for i, h in enumerate(hauvs.values()):
        for m, arr in enumerate(h.months):
            if arr is None:
                rows[i, m] = -1
            else:
                rows[i, m] = states.setdefault(arr, len(states))
    return rows


def _agreement_all_pairs(codes: np.ndarray) -> np.ndarray:
    """(12, 12) agreement matrix over eligible users; NaN where none."""
    out = np.full((12, 12), np.nan)
    present = codes >= 0
    for a in range(12):
        for b in range(a, 12):
            both = present[:, a] & present[:, b]
            n = int(both.sum())
            if n:
                out[a, b] = out[b, a] = float(
                    (codes[both, a] == codes[both, b]).mean())
    return out


def nonstationarity_report(hauvs: Mapping[str, HAUV], model: TransitionModel,
                           seed: int, n_simulations: int = 20) -> NonstationarityReport:
    """Compare observed month-pair agreement against the stationary chain.

    For every month pair the observed agreement is set against the
    simulation envelope (min..max) of agreements over n_simulations
    populations of the same size drawn from the chain. Under
    exchangeability a point outside the envelope of B simulations has
    exact two-sided level 2/(B+1), so B=40 gives the usual ~95% band
    (interpolated percentiles of small B are far leakier than their
    nominal level). Pairs outside the band are flagged; pairs with no
    eligible users are undetermined.
    """
    if n_simulations < 2:
        raise InputError("need at least 2 simulations for a band")
    n_users = len(hauvs)
    obs_agree = _agreement_all_pairs(_code_matrix(hauvs))
    sim_agree = np.stack([
        _agreement_all_pairs(_code_matrix(simulate(model, n_users, seed + b)))
        for b in range(n_simulations)])

    pairs = []
    for ma in range(1, 13):
        for mb in range(ma + 1, 13):
            obs = obs_agree[ma - 1, mb - 1]
            if np.isnan(obs):
                pairs.append(PairGap(ma, mb, None, None, None, None, None,
                                     flagged=False, undetermined=True))
                continue
            vals = sim_agree[:, ma - 1, mb - 1]
            lo, hi = float(vals.min()), float(vals.max())
            mean = float(vals.mean())
            gap = float(obs) - mean
            flagged = bool(obs < lo or obs > hi)
            pairs.append(PairGap(ma, mb, float(obs), mean, lo, hi,
                                 gap, flagged, undetermined=False))
    return NonstationarityReport(n_simulations, n_users, pairs)
