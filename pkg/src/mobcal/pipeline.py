"""Stage orchestration: file-cache handoff, provenance manifests, no-op reruns.

Every stage consumes its predecessors' cached artifacts, writes its own
under the output directory, and records a manifest (hash of the relevant
config sections, input hashes, output hashes, tool version). A stage
whose manifest still matches is skipped as a no-op. All JSON exports are
written with sorted keys so identical runs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from . import __version__
from .errors import InputError
from .config import PipelineConfig
from . import calendars as cal
from . import cluster as clu
from . import detect as det
from . import features as feat
from . import filters as filt
from . import geo
from . import homeloc
from . import ingest as ing
from . import markov as mkv
from . import synth

log = logging.getLogger("mobcal")

STAGE_ORDER = ["synth", "ingest", "homes", "features", "filter",
               "cluster", "detect", "markov", "calendar"]

# stage -> directory under out/
STAGE_DIR = {
    "synth": "world",
    "ingest": "ingest",
    "homes": "homes",
    "features": "features",
    "filter": "filter",
    "cluster": "cluster",
    "detect": "detect",
    "markov": "markov",
    "calendar": "calendar",
}


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class Stage:
    name: str
    config_sections: tuple[str, ...]
    inputs: Callable[[PipelineConfig], list[Path]]
    outputs: Callable[[PipelineConfig], list[Path]]
    run: Callable[[PipelineConfig], None]


def _stage_of_path(cfg: PipelineConfig, path: Path) -> Optional[str]:
    """Which stage produces this path, if any (for actionable errors)."""
    try:
        rel = path.resolve().relative_to(cfg.out_dir.resolve())
    except ValueError:
        return None
    head = rel.parts[0] if rel.parts else ""
    for stage, d in STAGE_DIR.items():
        if d == head:
            return stage
    return None


def _rel(cfg: PipelineConfig, path: Path) -> str:
    """Manifest key for a path: relative inside the out dir, verbatim outside."""
    try:
        return str(path.resolve().relative_to(cfg.out_dir.resolve()))
    except ValueError:
        return str(path)


def _check_inputs(cfg: PipelineConfig, stage: Stage) -> dict[str, str]:
    hashes = {}
    for path in stage.inputs(cfg):
        if not path.exists():
            producer = _stage_of_path(cfg, path)
            if producer:
                raise InputError(
                    f"stage '{stage.name}' needs {path}, which is produced by "
                    f"stage '{producer}'; run '{producer}' first")
            raise InputError(f"stage '{stage.name}' input not found: {path}")
        hashes[_rel(cfg, path)] = sha256_file(path)
    return hashes


def _manifest_path(cfg: PipelineConfig, stage: Stage) -> Path:
    return cfg.out_dir / STAGE_DIR[stage.name] / "manifest.json"


def run_stage(cfg: PipelineConfig, name: str, quiet: bool = False) -> bool:
    """Run one stage; returns True if work was done, False on a no-op."""
    stage = STAGES.get(name)
    if stage is None:
        raise InputError(f"unknown stage {name!r}; expected one of {STAGE_ORDER} or 'all'")
    in_hashes = _check_inputs(cfg, stage)
    config_hash = cfg.section_hash(*stage.config_sections)
    mpath = _manifest_path(cfg, stage)
    if mpath.exists():
        try:
            with open(mpath) as f:
                old = json.load(f)
        except json.JSONDecodeError:
            old = None
        def _out_ok(rel: str, h: str) -> bool:
            p = Path(rel)
            if not p.is_absolute():
                p = cfg.out_dir / p
            return p.exists() and sha256_file(p) == h

        if (old and old.get("config_hash") == config_hash
                and old.get("inputs") == in_hashes
                and old.get("tool_version") == __version__
                and all(_out_ok(p, h) for p, h in old.get("outputs", {}).items())):
            if not quiet:
                log.info("stage %s: up to date (no-op)", name)
            return False

    if not quiet:
        log.info("stage %s: running", name)
    stage.run(cfg)
    out_hashes = {}
    for path in stage.outputs(cfg):
        if not path.exists():
            raise InputError(f"stage '{name}' failed to produce {path}")
        out_hashes[_rel(cfg, path)] = sha256_file(path)
    manifest = {
        "stage": name,
        "tool_version": __version__,
        "rng": cfg["rng"],
        "config_hash": config_hash,
        "inputs": in_hashes,
        "outputs": out_hashes,
    }
    dump_json(mpath, manifest)
    return True


def run_all(cfg: PipelineConfig, quiet: bool = False) -> None:
    for name in STAGE_ORDER:
        run_stage(cfg, name, quiet=quiet)


# ---------------------------------------------------------------------------
# Shared loaders
# ---------------------------------------------------------------------------

def load_geo(cfg: PipelineConfig) -> geo.Geography:
    return geo.load_geography(cfg.path("arrondissements"), cfg.path("antennas"))


def _events_with_arr(cfg: PipelineConfig, geography: geo.Geography) -> pd.DataFrame:
    store = ing.EventStore.read_csv(cfg.out_dir / "ingest" / "events.csv")
    df = store.frame.copy()
    arr_of = {t.id: t.arrondissement_id for t in geography.antennas.values()}
    df["arrondissement_id"] = df["antenna_id"].map(arr_of)
    if df["arrondissement_id"].isna().any():
        bad = df.loc[df["arrondissement_id"].isna(), "antenna_id"].iloc[0]
        raise InputError(f"event store references unknown antenna {bad!r}")
    return df


def _read_wide_vectors(path: Path, as_int: bool = False) -> dict[str, tuple]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    out = {}
    for _, row in df.iterrows():
        vals = []
        for m in range(1, 13):
            v = row[f"m{m}"]
            if v == "":
                vals.append(None)
            else:
                vals.append(int(v) if as_int else v)
        out[row["user_id"]] = tuple(vals)
    return out


def load_hauvs(cfg: PipelineConfig) -> dict[str, feat.HAUV]:
    raw = _read_wide_vectors(cfg.out_dir / "features" / "hauv.csv")
    return {u: feat.HAUV(u, v) for u, v in raw.items()}


def load_hlzuvs(cfg: PipelineConfig) -> dict[str, feat.HLZUV]:
    raw = _read_wide_vectors(cfg.out_dir / "features" / "hlzuv.csv", as_int=True)
    return {u: feat.HLZUV(u, v) for u, v in raw.items()}


def load_buv_table(cfg: PipelineConfig) -> pd.DataFrame:
    return pd.read_csv(cfg.out_dir / "features" / "buv.csv",
                       dtype={"user_id": str})


def load_buvs(cfg: PipelineConfig) -> dict[str, dict[str, feat.BUV]]:
    table = load_buv_table(cfg)
    per_ind = {ind: feat.buv_table_to_vectors(table, ind)
               for ind in feat.BUV_INDICATORS}
    users = set()
    for d in per_ind.values():
        users.update(d)
    empty = tuple([None] * 12)
    return {u: {ind: per_ind[ind].get(u, feat.BUV(u, ind, empty))
                for ind in feat.BUV_INDICATORS} for u in users}


def _target_zones(cfg: PipelineConfig, geography: geo.Geography) -> list[int]:
    tz = cfg["cluster"]["target_zones"]
    if tz == "all":
        return sorted(geography.zones)
    for z in tz:
        if z not in geography.zones:
            raise InputError(f"cluster.target_zones: unknown zone {z}")
    return sorted(tz)


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------

def _run_synth(cfg: PipelineConfig) -> None:
    s = cfg["synth"]
    world = synth.generate_world(
        s["n_arrondissements"], s["n_zones"], s["antennas_per_arrondissement"],
        cfg.seed, cell_deg=s["cell_deg"], origin=(s["origin_lon"], s["origin_lat"]))
    specs = [synth.ArchetypeSpec(**a) for a in s["archetypes"]]
    specs = [synth.resolve_seasonal(spec, s["wet_months"]) for spec in specs]
    events, truth = synth.generate_population(
        specs, s["n_users"], s["events_per_day"], cfg.seed, world, cfg.year,
        p_noise=s["p_noise"], wet_months=s["wet_months"])
    ev = s["planted_event"]
    if ev is not None:
        events, participants = synth.plant_event(
            events, world, ev["day_of_year"], ev["destination"], ev["fraction"],
            ev["duration_days"], cfg.seed, cfg.year)
        truth.planted_event = {**ev, "participants": participants}
    world_dir = cfg.out_dir / "world"
    synth.write_world(world, world_dir)
    synth.write_cdr(events, cfg.path("cdr"))
    rain = synth.generate_rain(world, cfg.year, s["wet_months"], s["rain_peak_mm"],
                               cfg.seed, resolution=cfg["geo"]["rain_resolution_deg"])
    synth.write_rain(rain, cfg.path("rain"))
    synth.write_calendar(specs, s["wet_months"], cfg.path("calendar"))
    synth.write_ground_truth(truth, cfg.path("ground_truth"))


def _run_ingest(cfg: PipelineConfig) -> None:
    geography = load_geo(cfg)
    store, report = ing.parse_events(
        cfg.path("cdr"), cfg.year,
        max_reject_fraction=cfg["ingest"]["max_reject_fraction"],
        known_antennas=set(geography.antennas))
    out = cfg.out_dir / "ingest"
    out.mkdir(parents=True, exist_ok=True)
    store.write_csv(out / "events.csv")
    dump_json(out / "ingest_report.json", report.to_dict())
    intervals = ing.parse_calendar(cfg.path("calendar"), set(geography.zones))
    dump_json(out / "calendar.json", [
        {"zone_id": iv.zone_id, "activity": iv.activity, "category": iv.category,
         "months": sorted(iv.months)} for iv in intervals])


def _run_homes(cfg: PipelineConfig) -> None:
    geography = load_geo(cfg)
    events = _events_with_arr(cfg, geography)
    daily = homeloc.compute_daily_homes(events, cfg["homeloc"]["night_weighting"])
    counts = homeloc.month_event_counts(events)
    monthly = homeloc.compute_monthly_homes(
        daily, counts, events["user_id"].unique().tolist(), cfg["homeloc"]["d_min"])
    out = cfg.out_dir / "homes"
    out.mkdir(parents=True, exist_ok=True)
    dexp = daily.copy()
    dexp["day"] = dexp["day"].dt.strftime("%Y-%m-%d")
    dexp.to_csv(out / "daily_homes.csv", index=False)
    homeloc.monthly_homes_to_csv(monthly, out / "monthly_homes.csv")
    days_wide = monthly.pivot(index="user_id", columns="month", values="days")
    days_wide.columns = [f"m{m}" for m in range(1, 13)]
    days_wide.sort_index().to_csv(out / "monthly_days.csv")


def _monthly_from_csv(cfg: PipelineConfig) -> pd.DataFrame:
    wide = pd.read_csv(cfg.out_dir / "homes" / "monthly_homes.csv",
                       dtype=str, keep_default_na=False)
    rows = []
    for _, row in wide.iterrows():
        for m in range(1, 13):
            v = row[f"m{m}"]
            rows.append((row["user_id"], m, v if v != "" else pd.NA))
    return pd.DataFrame(rows, columns=["user_id", "month", "arrondissement_id"])


def _run_features(cfg: PipelineConfig) -> None:
    geography = load_geo(cfg)
    monthly = _monthly_from_csv(cfg)
    hauvs, hlzuvs = feat.build_vectors(monthly, geography)
    out = cfg.out_dir / "features"
    out.mkdir(parents=True, exist_ok=True)
    feat.vectors_to_csv(hauvs, out / "hauv.csv")
    feat.vectors_to_csv(hlzuvs, out / "hlzuv.csv")
    events = _events_with_arr(cfg, geography)
    table = feat.compute_buvs(events, geography)
    texp = table.copy()
    for col in ("radius_of_gyration_km", "total_distance_km"):
        texp[col] = texp[col].map(lambda v: f"{v:.6f}")
    texp.to_csv(out / "buv.csv", index=False)
    ref = cfg["features"]["dhv_reference"]
    if ref is not None:
        dhvs = {u: feat.build_dhv(h, ref, geography) for u, h in sorted(hauvs.items())}
        rows = []
        for u in sorted(dhvs):
            d = dhvs[u].distances_km
            rows.append([u] + ["" if v is None else f"{v:.3f}" for v in d])
        pd.DataFrame(rows, columns=["user_id"] + [f"m{m}" for m in range(1, 13)]) \
            .to_csv(out / "dhv.csv", index=False)


def _run_filter(cfg: PipelineConfig) -> None:
    geography = load_geo(cfg)
    hauvs = load_hauvs(cfg)
    hlzuvs = load_hlzuvs(cfg)
    rog = feat.buv_table_to_vectors(load_buv_table(cfg), "radius_of_gyration_km")
    empty = tuple([None] * 12)
    f = cfg["filters"]
    params = filt.FilterParams(
        m_min=f["m_min"], m_max=f["m_max"], m_outmin=f["m_outmin"],
        window=frozenset(f["window"]) if f["window"] else None,
        rho=f["rho"], drop_missing_over=f["drop_missing_over"])
    candidates = [
        filt.FilterCandidate(u, hauvs[u], hlzuvs[u],
                             rog.get(u, feat.BUV(u, "radius_of_gyration_km", empty)))
        for u in sorted(hauvs)
    ]
    kept: dict[str, list[str]] = {}
    report: dict[str, dict] = {}
    for z in _target_zones(cfg, geography):
        outcome = filt.apply_filters(candidates, params, z, geography)
        kept[str(z)] = outcome.kept
        report[str(z)] = outcome.to_dict(include_users=f["dump_user_reasons"])
    out = cfg.out_dir / "filter"
    dump_json(out / "kept_users.json", kept)
    dump_json(out / "rejection_report.json", report)


def _run_cluster(cfg: PipelineConfig) -> None:
    geography = load_geo(cfg)
    with open(cfg.out_dir / "filter" / "kept_users.json") as fh:
        kept = json.load(fh)
    hlzuvs = load_hlzuvs(cfg)
    buvs = load_buvs(cfg)
    c = cfg["cluster"]
    doc: dict[str, list] = {}
    for z in _target_zones(cfg, geography):
        users = kept.get(str(z), [])
        if len(users) < 2:
            doc[str(z)] = []
            continue
        if len(users) > c["max_vectors_per_zone"]:
            raise InputError(
                f"zone {z}: {len(users)} vectors exceed the "
                f"{c['max_vectors_per_zone']} cap (quadratic memory); raise "
                f"cluster.max_vectors_per_zone only with enough RAM")
        bits = np.array([feat.binarize(hlzuvs[u], z).bits for u in users])
        dm = clu.pairwise_distance(bits, c["metric"], user_ids=users)
        tree = clu.upgma(dm)
        k = min(c["k"], len(users))
        classes = clu.build_classes(clu.cut(tree, k), bits, users, buvs)
        entries = []
        for m in classes:
            entry = {
                "class_id": m.class_id,
                "size": m.size,
                "mean_profile": m.mean_profile,
                "std_profile": m.std_profile,
                "indicator_mean": m.characterization.mean,
                "indicator_std": m.characterization.std,
            }
            if c["include_member_ids"]:
                entry["member_ids"] = m.member_ids
            entries.append(entry)
        doc[str(z)] = entries
    dump_json(cfg.out_dir / "cluster" / "classes.json", doc)


def _run_detect(cfg: PipelineConfig) -> None:
    daily = pd.read_csv(cfg.out_dir / "homes" / "daily_homes.csv",
                        dtype={"user_id": str, "arrondissement_id": str})
    daily["day"] = pd.to_datetime(daily["day"])
    flows = det.daily_flows(daily)
    d = cfg["detect"]
    regions = sorted(daily["arrondissement_id"].unique())
    alerts = det.detect_all_regions(flows, regions, k=d["threshold"],
                                    min_days=d["min_series_days"])
    out = cfg.out_dir / "detect"
    flow_doc = []
    for f in flows:
        pairs = sorted(f.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        inflow: dict[str, int] = {}
        outflow: dict[str, int] = {}
        for (a, b), n in f.counts.items():
            outflow[a] = outflow.get(a, 0) + n
            inflow[b] = inflow.get(b, 0) + n
        flow_doc.append({
            "day": f.day.isoformat(),
            "total_movers": f.total(),
            "top_pairs": [[a, b, n] for (a, b), n in pairs[: d["top_flows"]]],
            "inflow": dict(sorted(inflow.items())),
            "outflow": dict(sorted(outflow.items())),
        })
    dump_json(out / "flows.json", flow_doc)
    dump_json(out / "alerts.json", [
        {"day": a.day.isoformat(), "region": a.region_id, "direction": a.direction,
         "score": a.score, "raw_count": a.raw_count} for a in alerts])


def _run_markov(cfg: PipelineConfig) -> None:
    hauvs = load_hauvs(cfg)
    model = mkv.fit_stationary(hauvs)
    report = mkv.nonstationarity_report(hauvs, model, cfg.seed,
                                        cfg["markov"]["n_simulations"])
    out = cfg.out_dir / "markov"
    dump_json(out / "model.json", {
        "states": model.states,
        "matrix": model.matrix.tolist(),
        "initial": model.initial.tolist(),
    })
    dump_json(out / "nonstationarity.json", report.to_dict())


def _run_calendar(cfg: PipelineConfig) -> None:
    geography = load_geo(cfg)
    with open(cfg.out_dir / "cluster" / "classes.json") as fh:
        class_doc = json.load(fh)
    with open(cfg.out_dir / "ingest" / "calendar.json") as fh:
        interval_doc = json.load(fh)
    readings = geo.load_rain(cfg.path("rain"))
    daily = geo.aggregate_rain(readings, geography, geo.LIVELIHOOD_ZONE,
                               supersample=cfg["geo"]["supersample"],
                               resolution=cfg["geo"]["rain_resolution_deg"])
    monthly: dict[int, geo.MonthlyRain] = {}
    for z, series in daily.items():
        if series.times:
            monthly[int(z)] = geo.monthly_rain(series)

    c = cfg["calendars"]
    reports = {}
    for z in _target_zones(cfg, geography):
        classes = [
            clu.MobilityClass(e["class_id"], e.get("member_ids", []),
                              e["mean_profile"], e["std_profile"], e["size"])
            for e in class_doc.get(str(z), [])
        ]
        intervals = [
            ing.CalendarInterval(rec["zone_id"], rec["activity"], rec["category"],
                                 frozenset(rec["months"]))
            for rec in interval_doc if rec["zone_id"] == z
        ]
        rain_series = monthly[z].series if z in monthly else None
        report = cal.zone_report(z, classes, intervals, rain_series,
                                 max_lag=c["max_lag"],
                                 n_permutations=c["n_permutations"],
                                 seed=cfg.seed + z)
        reports[str(z)] = report.to_dict()
    rain_doc = {
        str(z): {
            "monthly_mm": {t.isoformat(): v for t, v in
                           zip(mr.series.times, mr.series.values)},
            "missing_days": {t.isoformat(): n for t, n in mr.missing_days.items()},
        }
        for z, mr in sorted(monthly.items())
    }
    out = cfg.out_dir / "calendar"
    dump_json(out / "zone_reports.json", reports)
    dump_json(out / "rain_monthly.json", rain_doc)


# ---------------------------------------------------------------------------
# Stage registry
# ---------------------------------------------------------------------------

def _world_files(cfg: PipelineConfig) -> list[Path]:
    return [cfg.path("arrondissements"), cfg.path("antennas")]


STAGES: dict[str, Stage] = {
    "synth": Stage(
        "synth", ("synth", "analysis_year", "seed", "geo"),
        inputs=lambda cfg: [],
        outputs=lambda cfg: [cfg.path("arrondissements"), cfg.path("antennas"),
                             cfg.path("cdr"), cfg.path("rain"), cfg.path("calendar"),
                             cfg.path("ground_truth")],
        run=_run_synth),
    "ingest": Stage(
        "ingest", ("ingest", "analysis_year",),
        inputs=lambda cfg: [cfg.path("cdr"), cfg.path("calendar"), *_world_files(cfg)],
        outputs=lambda cfg: [cfg.out_dir / "ingest" / f
                             for f in ("events.csv", "ingest_report.json", "calendar.json")],
        run=_run_ingest),
    "homes": Stage(
        "homes", ("homeloc", "analysis_year"),
        inputs=lambda cfg: [cfg.out_dir / "ingest" / "events.csv", *_world_files(cfg)],
        outputs=lambda cfg: [cfg.out_dir / "homes" / f
                             for f in ("daily_homes.csv", "monthly_homes.csv",
                                       "monthly_days.csv")],
        run=_run_homes),
    "features": Stage(
        "features", ("features",),
        inputs=lambda cfg: [cfg.out_dir / "homes" / "monthly_homes.csv",
                            cfg.out_dir / "ingest" / "events.csv", *_world_files(cfg)],
        outputs=lambda cfg: [cfg.out_dir / "features" / f
                             for f in ("hauv.csv", "hlzuv.csv", "buv.csv")]
                            + ([cfg.out_dir / "features" / "dhv.csv"]
                               if cfg["features"]["dhv_reference"] else []),
        run=_run_features),
    "filter": Stage(
        "filter", ("filters", "cluster"),
        inputs=lambda cfg: [cfg.out_dir / "features" / f
                            for f in ("hauv.csv", "hlzuv.csv", "buv.csv")]
                           + _world_files(cfg),
        outputs=lambda cfg: [cfg.out_dir / "filter" / f
                             for f in ("kept_users.json", "rejection_report.json")],
        run=_run_filter),
    "cluster": Stage(
        "cluster", ("cluster",),
        inputs=lambda cfg: [cfg.out_dir / "filter" / "kept_users.json",
                            cfg.out_dir / "features" / "hlzuv.csv",
                            cfg.out_dir / "features" / "buv.csv", *_world_files(cfg)],
        outputs=lambda cfg: [cfg.out_dir / "cluster" / "classes.json"],
        run=_run_cluster),
    "detect": Stage(
        "detect", ("detect",),
        inputs=lambda cfg: [cfg.out_dir / "homes" / "daily_homes.csv"],
        outputs=lambda cfg: [cfg.out_dir / "detect" / f
                             for f in ("flows.json", "alerts.json")],
        run=_run_detect),
    "markov": Stage(
        "markov", ("markov", "seed"),
        inputs=lambda cfg: [cfg.out_dir / "features" / "hauv.csv"],
        outputs=lambda cfg: [cfg.out_dir / "markov" / f
                             for f in ("model.json", "nonstationarity.json")],
        run=_run_markov),
    "calendar": Stage(
        "calendar", ("calendars", "cluster", "geo", "seed"),
        inputs=lambda cfg: [cfg.out_dir / "cluster" / "classes.json",
                            cfg.out_dir / "ingest" / "calendar.json",
                            cfg.path("rain"), *_world_files(cfg)],
        outputs=lambda cfg: [cfg.out_dir / "calendar" / f
                             for f in ("zone_reports.json", "rain_monthly.json")],
        run=_run_calendar),
}
