import json
import subprocess
import sys

import pytest

from mobcal.config import DEFAULTS, PipelineConfig
from mobcal.errors import InputError
from mobcal.pipeline import STAGE_ORDER, run_all, run_stage


class TestConfig:
    def test_defaults_load(self):
        cfg = PipelineConfig({})
        assert cfg.year == 2013
        assert cfg["filters"]["m_min"] == 2
        assert cfg["filters"]["m_max"] == 10
        assert cfg["filters"]["m_outmin"] == 1
        assert cfg["homeloc"]["d_min"] == 1
        assert cfg["detect"]["threshold"] == 4.0
        assert cfg["detect"]["period_theta"] == 0.2
        assert cfg["cluster"]["k"] == 4
        assert cfg["geo"]["supersample"] == 4
        assert cfg["geo"]["rain_resolution_deg"] == 0.25
        assert cfg["calendars"]["max_lag"] == 3
        assert cfg["markov"]["n_simulations"] == 20
        assert cfg["ingest"]["max_reject_fraction"] == 0.10
        assert cfg["filters"]["rho"] == 1.0
        assert cfg["cluster"]["max_vectors_per_zone"] == 50000

    def test_unknown_key_rejected(self):
        with pytest.raises(InputError, match="unknown config key"):
            PipelineConfig({"filters": {"m_min": 2, "m_typo": 1}})
        with pytest.raises(InputError, match="unknown config key"):
            PipelineConfig({"not_a_section": {}})

    def test_bad_values_rejected(self):
        with pytest.raises(InputError):
            PipelineConfig({"filters": {"m_min": 11, "m_max": 5}})
        with pytest.raises(InputError):
            PipelineConfig({"cluster": {"metric": "chebyshev"}})
        with pytest.raises(InputError):
            PipelineConfig({"rng": "mt19937"})

    def test_seed_and_out_override(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 1}))
        cfg = PipelineConfig.load(path, out_dir=str(tmp_path / "o"), seed=42)
        assert cfg.seed == 42
        assert cfg.path("cdr") == tmp_path / "o" / "world" / "cdr.csv"

    def test_section_hash_ignores_other_sections(self):
        a = PipelineConfig({"detect": {"threshold": 5.0}})
        b = PipelineConfig({})
        assert a.section_hash("filters") == b.section_hash("filters")
        assert a.section_hash("detect") != b.section_hash("detect")

    def test_archetype_key_validation(self):
        with pytest.raises(InputError):
            PipelineConfig({"synth": {"archetypes": [
                {"kind": "sedentary", "weight": 1.0, "period": 2}]}})


SMALL = {"synth": {"n_users": 30}}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    cfg = PipelineConfig(SMALL, out_dir=str(out))
    run_all(cfg, quiet=True)
    return out


class TestPipeline:
    def test_all_exports_present(self, small_run):
        expected = [
            "world/arrondissements.json", "world/antennas.csv", "world/cdr.csv",
            "world/rain.csv", "world/calendar.json", "world/ground_truth.json",
            "ingest/events.csv", "ingest/ingest_report.json", "ingest/calendar.json",
            "homes/daily_homes.csv", "homes/monthly_homes.csv",
            "features/hauv.csv", "features/hlzuv.csv", "features/buv.csv",
            "filter/kept_users.json", "filter/rejection_report.json",
            "cluster/classes.json", "detect/flows.json", "detect/alerts.json",
            "markov/model.json", "markov/nonstationarity.json",
            "calendar/zone_reports.json", "calendar/rain_monthly.json",
        ]
        for rel in expected:
            assert (small_run / rel).exists(), rel

    def test_manifests_carry_provenance(self, small_run):
        doc = json.loads((small_run / "cluster" / "manifest.json").read_text())
        assert doc["stage"] == "cluster"
        assert doc["tool_version"]
        assert doc["config_hash"]
        assert doc["inputs"] and doc["outputs"]

    def test_rerun_is_noop(self, small_run):
        cfg = PipelineConfig(SMALL, out_dir=str(small_run))
        did_work = [run_stage(cfg, s, quiet=True) for s in STAGE_ORDER]
        assert did_work == [False] * len(STAGE_ORDER)

    def test_irrelevant_config_edit_keeps_upstream_cached(self, small_run):
        cfg = PipelineConfig({**SMALL, "detect": {"threshold": 6.0}},
                             out_dir=str(small_run))
        assert run_stage(cfg, "homes", quiet=True) is False
        assert run_stage(cfg, "detect", quiet=True) is True
        # restore the original detect output for other tests
        run_stage(PipelineConfig(SMALL, out_dir=str(small_run)), "detect", quiet=True)

    def test_missing_predecessor_names_stage(self, tmp_path):
        cfg = PipelineConfig(SMALL, out_dir=str(tmp_path / "fresh"))
        with pytest.raises(InputError, match="run 'synth' first"):
            run_stage(cfg, "ingest", quiet=True)
        with pytest.raises(InputError, match="run 'filter' first"):
            run_stage(cfg, "cluster", quiet=True)


class TestCli:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "mobcal.cli", *args],
                              capture_output=True, text=True)

    def test_show_config(self):
        proc = self.run_cli("show-config")
        assert proc.returncode == 0
        doc = json.loads(proc.stdout)
        assert doc["analysis_year"] == DEFAULTS["analysis_year"]

    def test_input_error_exit_code(self, tmp_path):
        proc = self.run_cli("ingest", "--out", str(tmp_path / "empty"))
        assert proc.returncode == 1
        assert "run 'synth' first" in proc.stderr

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"nope": 1}')
        proc = self.run_cli("all", "--config", str(bad))
        assert proc.returncode == 1

    def test_stage_run_via_cli(self, tmp_path):
        cfgfile = tmp_path / "c.json"
        cfgfile.write_text(json.dumps({"synth": {"n_users": 10}}))
        proc = self.run_cli("synth", "--config", str(cfgfile),
                            "--out", str(tmp_path / "o"), "--quiet")
        assert proc.returncode == 0
        assert (tmp_path / "o" / "world" / "cdr.csv").exists()
