"""Pipeline configuration: one structured file, validated, all defaults.

Every numeric knob in the pipeline lives here with its default; unknown
keys are rejected so typos fail loudly instead of silently reverting to
defaults. Path values may use the literal token "{out}" which resolves to
the output directory at load time.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Optional

from .errors import InputError
from .synth import RNG_ALGORITHM

DEFAULTS: dict[str, Any] = {
    "analysis_year": 2013,
    "seed": 20130101,
    "rng": RNG_ALGORITHM,
    "paths": {
        "out_dir": "out",
        "arrondissements": "{out}/world/arrondissements.json",
        "antennas": "{out}/world/antennas.csv",
        "cdr": "{out}/world/cdr.csv",
        "rain": "{out}/world/rain.csv",
        "calendar": "{out}/world/calendar.json",
        "ground_truth": "{out}/world/ground_truth.json",
    },
    "geo": {
        "supersample": 4,
        "rain_resolution_deg": 0.25,
    },
    "ingest": {
        "max_reject_fraction": 0.10,
    },
    "homeloc": {
        "d_min": 1,
        "night_weighting": False,
    },
    "features": {
        "dhv_reference": None,
    },
    "filters": {
        "m_min": 2,
        "m_max": 10,
        "m_outmin": 1,
        "window": None,
        "rho": 1.0,
        "drop_missing_over": 3,
        "dump_user_reasons": False,
    },
    "cluster": {
        "metric": "euclidean",
        "k": 4,
        "max_vectors_per_zone": 50000,
        "target_zones": "all",
        "include_member_ids": False,
    },
    "detect": {
        "threshold": 4.0,
        "min_series_days": 30,
        "period_theta": 0.2,
        "top_flows": 20,
    },
    "markov": {
        "n_simulations": 20,
    },
    "calendars": {
        "max_lag": 3,
        "n_permutations": 1000,
    },
    "synth": {
        "n_arrondissements": 24,
        "n_zones": 8,
        "antennas_per_arrondissement": 3,
        "cell_deg": 0.5,
        "origin_lon": -17.0,
        "origin_lat": 13.0,
        "n_users": 400,
        "events_per_day": 2.0,
        "p_noise": 0.05,
        "wet_months": [6, 7, 8, 9],
        "rain_peak_mm": 12.0,
        "archetypes": [
            {"kind": "sedentary", "weight": 0.4},
            {"kind": "seasonal", "weight": 0.3, "home_lz": 2, "destination_lz": 5,
             "out_month": None, "return_month": 1},
            {"kind": "commuter", "weight": 0.2, "period": 2},
            {"kind": "random", "weight": 0.1, "move_prob": 1.0},
        ],
        "planted_event": None,
    },
}

# keys allowed inside each archetype record, by kind
_ARCHETYPE_KEYS = {
    "sedentary": {"kind", "weight"},
    "seasonal": {"kind", "weight", "home_lz", "destination_lz", "out_month", "return_month"},
    "commuter": {"kind", "weight", "period"},
    "random": {"kind", "weight", "move_prob"},
}
_EVENT_KEYS = {"day_of_year", "destination", "fraction", "duration_days"}


def _merge(defaults: Any, override: Any, path: str) -> Any:
    """Recursively merge an override into defaults, rejecting unknown keys."""
    if isinstance(defaults, dict):
        if not isinstance(override, dict):
            raise InputError(f"config key {path or '<root>'} must be an object")
        unknown = set(override) - set(defaults)
        if unknown:
            raise InputError(f"unknown config key(s) at {path or '<root>'}: "
                             f"{', '.join(sorted(unknown))}")
        merged = {}
        for key, dval in defaults.items():
            if key in override:
                merged[key] = _merge(dval, override[key], f"{path}.{key}" if path else key)
            else:
                merged[key] = copy.deepcopy(dval)
        return merged
    return copy.deepcopy(override)


def _validate(cfg: dict) -> None:
    if cfg["rng"] != RNG_ALGORITHM:
        raise InputError(f"unsupported rng {cfg['rng']!r}; this build uses {RNG_ALGORITHM}")
    f = cfg["filters"]
    if not (1 <= f["m_min"] <= f["m_max"] <= 12):
        raise InputError("filters: need 1 <= m_min <= m_max <= 12")
    if f["window"] is not None:
        months = set(f["window"])
        if not months or not months <= set(range(1, 13)):
            raise InputError("filters.window must be months in 1..12")
    if cfg["cluster"]["metric"] not in ("euclidean", "manhattan", "cosine"):
        raise InputError(f"unknown cluster metric {cfg['cluster']['metric']!r}")
    if not (1 <= cfg["cluster"]["k"]):
        raise InputError("cluster.k must be >= 1")
    if cfg["geo"]["supersample"] < 1:
        raise InputError("geo.supersample must be >= 1")
    tz = cfg["cluster"]["target_zones"]
    if tz != "all" and not (isinstance(tz, list) and all(isinstance(z, int) for z in tz)):
        raise InputError("cluster.target_zones must be 'all' or a list of zone ids")
    for i, arch in enumerate(cfg["synth"]["archetypes"]):
        kind = arch.get("kind")
        if kind not in _ARCHETYPE_KEYS:
            raise InputError(f"synth.archetypes[{i}]: unknown kind {kind!r}")
        unknown = set(arch) - _ARCHETYPE_KEYS[kind]
        if unknown:
            raise InputError(f"synth.archetypes[{i}]: unknown key(s) "
                             f"{', '.join(sorted(unknown))}")
    ev = cfg["synth"]["planted_event"]
    if ev is not None:
        unknown = set(ev) - _EVENT_KEYS
        missing = _EVENT_KEYS - set(ev)
        if unknown or missing:
            raise InputError(f"synth.planted_event needs exactly keys {sorted(_EVENT_KEYS)}")


class PipelineConfig:
    """Validated, fully-defaulted configuration for one pipeline run."""

    def __init__(self, data: dict, out_dir: Optional[str] = None,
                 seed: Optional[int] = None):
        cfg = _merge(DEFAULTS, data, "")
        if out_dir is not None:
            cfg["paths"]["out_dir"] = str(out_dir)
        if seed is not None:
            cfg["seed"] = int(seed)
        _validate(cfg)
        self.raw = cfg

    @classmethod
    def load(cls, path: Optional[str | Path] = None, out_dir: Optional[str] = None,
             seed: Optional[int] = None) -> "PipelineConfig":
        """Load from a JSON file; None means pure defaults (the bundled demo)."""
        if path is None:
            return cls({}, out_dir=out_dir, seed=seed)
        path = Path(path)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise InputError(f"{path}: invalid JSON: {e}") from e
        return cls(data, out_dir=out_dir, seed=seed)

    # -- accessors -----------------------------------------------------

    def __getitem__(self, key: str) -> Any:
        return self.raw[key]

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["paths"]["out_dir"])

    def path(self, name: str) -> Path:
        raw = self.raw["paths"][name]
        return Path(str(raw).replace("{out}", str(self.out_dir)))

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def year(self) -> int:
        return int(self.raw["analysis_year"])

    def section_hash(self, *sections: str) -> str:
        """Stable hash of selected config sections (stage provenance)."""
        doc = {s: self.raw[s] for s in sorted(sections)}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def dump(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)
