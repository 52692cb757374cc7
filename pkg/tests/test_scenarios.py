import json

import pytest

from imsspoof.ims_core import ConfigError
from imsspoof.scenarios import (
    SCENARIOS,
    Run,
    ScenarioConfig,
    SimReport,
    World,
    emit_report,
    expected_matrix,
    flip_test,
    list_scenarios,
    run_scenario,
    spoof_matrix,
)
from imsspoof.defenses import MacConfig


def cfg(name, **kw):
    return ScenarioConfig.from_dict({"scenario_name": name, "seed": 7, **kw})


class TestConfig:
    def test_seed_required(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"scenario_name": "donation"})

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"scenario_name": "nope", "seed": 1})

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"scenario_name": "donation", "seed": 1, "sed": 2})

    def test_bad_security_mode(self):
        c = cfg("facebook_individual", carriers=[{"carrier_id": "OP-I", "security_mode": "TLS"}])
        with pytest.raises(ConfigError):
            World(c)

    def test_bad_mac_length(self):
        with pytest.raises(ConfigError):
            cfg("defense_mac", defenses={"mac": {"tag_length": 8}})

    def test_param_type_checked(self):
        with pytest.raises(ConfigError):
            run_scenario(cfg("like_farm", params={"victims": "fifty"}))

    def test_inline_catalog(self):
        rows = [
            {
                "name": "Tiny",
                "short_code": "11111",
                "service_model": "SubNotif",
                "enrollment_kind": "OneStep",
                "enroll_text": True,
                "recurring_notifications": True,
            }
        ]
        report = run_scenario(cfg("table1_audit", providers=rows))
        assert [r["predicted"] for r in report.threat_matrix] == ["SpamLawsuit"]

    def test_bad_catalog_path(self):
        with pytest.raises(ConfigError):
            cfg("table1_audit", providers="/nonexistent.json")


class TestScenarios:
    @pytest.mark.parametrize("name", sorted(SCENARIOS))
    def test_default_config_passes(self, name):
        report = run_scenario(cfg(name))
        assert report.verdicts and report.passed, report.verdicts

    def test_like_farm_count(self):
        report = run_scenario(cfg("like_farm", params={"victims": 12}))
        assert report.counters["result.page_likes"] == 12

    def test_strict_origin_carrier_override(self):
        report = run_scenario(cfg("facebook_individual", carriers=[{"carrier_id": "OP-I", "origin_check": "STRICT"}]))
        assert report.counters["result.victim_actions"] == 0
        assert not report.passed

    def test_strict_origin_defense_flag(self):
        report = run_scenario(cfg("like_farm", defenses={"strict_origin": True}))
        assert report.counters["result.page_likes"] == 0

    def test_mac_providers_flag(self):
        report = run_scenario(cfg("donation", defenses={"mac_providers": ["Red Cross"]}))
        assert report.counters["result.charges"] == 0

    def test_440_reports_both_outcomes(self):
        report = run_scenario(cfg("defense_440", params={"victims": 10}))
        assert report.counters["result.scope_440_charges"] == 10
        assert report.counters["result.strict_440_charges"] == 0
        assert "note" in report.details

    def test_spoof_matrix_expectations(self):
        run = Run(cfg("defense_strict_origin"))
        for mode in ("NONE", "CARRIER_SCOPE", "STRICT"):
            rows = spoof_matrix(run, mode)["rows"]
            assert [r["spoof_succeeded"] for r in rows] == expected_matrix(mode)
        rows = spoof_matrix(run, "NONE", legacy=True)["rows"]
        assert not any(r["spoof_succeeded"] for r in rows)

    def test_flip_test_uses_all_bits(self):
        assert flip_test(3, MacConfig()) == 256
        assert flip_test(3, MacConfig(16)) == 256

    def test_config_attack_script(self):
        devices = [
            {"number": "3105559000", "carrier": "OP-I", "role": "attacker", "attack_script": {
                "victim_numbers": ["3105554347"], "target_code": "32665", "message_template": "Like Config Page"}},
        ]
        report = run_scenario(cfg("facebook_individual", devices=devices))
        activity = report.details["victim_activity"]
        assert ["like", "Config Page", "3105554347"] in activity

    def test_terminates_within_duration_plus_drain(self):
        c = cfg("facebook_individual", duration=10_000)
        run = Run(c)
        from imsspoof.scenarios import facebook_attack, DRAIN_MS

        res = facebook_attack(run)
        assert res["world"].fabric.now <= 1000 + 10_000 + DRAIN_MS
        assert res["world"].fabric.pending == 0


class TestReport:
    def test_structured_stable(self):
        a = emit_report(run_scenario(cfg("privacy_leak")), "structured")
        b = emit_report(run_scenario(cfg("privacy_leak")), "structured")
        assert a == b
        doc = json.loads(a)
        assert list(doc) == sorted(doc)

    def test_seed_changes_log(self):
        a = run_scenario(cfg("privacy_leak"))
        b = run_scenario(ScenarioConfig.from_dict({"scenario_name": "privacy_leak", "seed": 8}))
        assert a.passed and b.passed
        assert a.fabric_log_sha256 != b.fabric_log_sha256

    def test_empty_report(self):
        report = SimReport("donation", 1)
        assert json.loads(emit_report(report, "structured"))["event_log"] == []
        assert "PASS" in emit_report(report, "text")

    def test_text_has_64_matrix_rows(self):
        text = emit_report(run_scenario(cfg("table1_audit")), "text")
        block = text.split("threat matrix\n")[1].split("\n\n")[0].splitlines()
        assert len(block) == 1 + 64

    def test_verbose_includes_fabric_log(self):
        quiet = run_scenario(cfg("facebook_individual"))
        loud = run_scenario(cfg("facebook_individual"), verbose=True)
        assert quiet.fabric_log is None and loud.fabric_log
        assert quiet.fabric_log_sha256 == loud.fabric_log_sha256

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_report(SimReport("x", 1), "xml")

    def test_catalog_listing(self):
        names = [n for n, _ in list_scenarios()]
        assert len(names) == 11 and "donation" in names
