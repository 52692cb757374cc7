"""Scenario catalog: builds a simulated world from a config and runs one attack or defense study."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from . import sip_codec as sip
from .defenses import Channel, MacConfig, SecretStore, canonical_bytes, compute_tag
from .ims_core import AGGREGATOR_PORT, Aggregator, CarrierPolicy, ConfigError, Directory, ImsCore, mt_envelope
from .netsim import Fabric
from .providers import (
    DonationService,
    EnrollmentKind,
    ProviderEndpoint,
    ProviderRecord,
    RuntimeAuth,
    SocialService,
    SubscriptionService,
    Threat,
    WebCodeEntry,
    WebLoginSignup,
    classify_threat,
    load_catalog,
    search_spoof_enrollment,
)
from .sms_codec import MAX_OCTETS, encode_pdu, make_deliver, UserData
from .ue import ATTACKER_SERVICE_MS, AttackScript, Device, default_routing_table, policy_from_config

ATTACKER = "3105552501"
VICTIM = "3105554347"
BOB = "3105550002"
PEER = "3105550003"
OTHER_CARRIER_VICTIM = "2135550100"
OTHER_CARRIER_ATTACKER = "2135550101"
INTERNET_HOST = "198.51.100.7"
AGGREGATOR_ADDR = "2001:db8:a::1"
THIRTY_MINUTES = 30 * 60 * 1000
DAY = 24 * 3600 * 1000
DRAIN_MS = 60_000

DEFAULT_CARRIERS = {
    "OP-I": {"carrier_id": "OP-I", "address": "2001:db8:1::5", "security_mode": "DIGEST_ONLY", "origin_check": "CARRIER_SCOPE"},
    "OP-II": {"carrier_id": "OP-II", "address": "2001:db8:2::5", "security_mode": "IPSEC_3GPP", "origin_check": "CARRIER_SCOPE"},
}


def victim_numbers(n: int, base: int = 5_600_000) -> list[str]:
    return [f"310{base + i:07d}" for i in range(n)]


@dataclass
class ScenarioConfig:
    scenario_name: str
    seed: int
    duration: Optional[int] = None
    carriers: list = field(default_factory=list)
    devices: list = field(default_factory=list)
    providers: object = None
    defenses: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"scenario_name", "seed", "duration", "carriers", "devices", "providers", "defenses", "params"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        name = d.get("scenario_name")
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; see list-scenarios")
        seed = d.get("seed")
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            raise ConfigError("seed is required and must be a 64-bit unsigned integer")
        duration = d.get("duration")
        if duration is not None and (not isinstance(duration, int) or duration <= 0):
            raise ConfigError("duration must be a positive number of virtual ms")
        for key in ("carriers", "devices"):
            if not isinstance(d.get(key, []), list):
                raise ConfigError(f"{key} must be a list")
        for key in ("defenses", "params"):
            if not isinstance(d.get(key, {}), dict):
                raise ConfigError(f"{key} must be an object")
        cfg = cls(name, seed, duration, list(d.get("carriers", [])), list(d.get("devices", [])), d.get("providers"), dict(d.get("defenses", {})), dict(d.get("params", {})))
        cfg.catalog()  # fail early on a bad catalog
        cfg.mac_config()
        return cfg

    def catalog(self) -> list[ProviderRecord]:
        try:
            if self.providers is None:
                return load_catalog()
            if isinstance(self.providers, str):
                return load_catalog(self.providers)
            return [ProviderRecord.from_dict(r) for r in self.providers]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad provider catalog: {exc}") from None

    def mac_config(self) -> MacConfig:
        block = self.defenses.get("mac") or {}
        try:
            return MacConfig(int(block.get("tag_length", 20)), str(block.get("hash_label", "sha256")))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def param(self, name: str, default):
        value = self.params.get(name, default)
        if type(value) is not type(default):
            raise ConfigError(f"param {name} must be {type(default).__name__}")
        return value


class World:
    """One simulated topology: carriers, one aggregator, providers, phones."""

    def __init__(self, cfg: ScenarioConfig, label: str = "", carriers: Optional[dict] = None, mac_providers=()) -> None:
        self.cfg = cfg
        self.label = label
        self.seed = cfg.seed
        self.fabric = Fabric(seed=cfg.seed)
        self.directory = Directory()
        self.events = self.directory.events
        self.secrets = SecretStore(random.Random(f"{cfg.seed}/secrets"))
        self.mac = cfg.mac_config()
        self.catalog = {r.name: r for r in cfg.catalog()}
        self.mac_providers = set(mac_providers) | set(cfg.defenses.get("mac_providers", []))
        self.carriers: dict[str, ImsCore] = {}
        self.devices: dict[str, Device] = {}
        self.providers: dict[str, ProviderEndpoint] = {}
        self._dev_count: dict[str, int] = {}
        blocks = {k: dict(v) for k, v in DEFAULT_CARRIERS.items()}
        for cid, over in (carriers or {}).items():
            blocks.setdefault(cid, {"carrier_id": cid, "address": f"2001:db8:{len(blocks) + 1}::5"}).update(over)
        for over in cfg.carriers:
            cid = over.get("carrier_id")
            if cid is None:
                raise ConfigError("carrier block needs carrier_id")
            blocks.setdefault(cid, {"carrier_id": cid, "address": f"2001:db8:{len(blocks) + 1}::5"}).update(over)
        for block in blocks.values():
            self._add_carrier(block)
        self.aggregator = Aggregator(self.fabric, "AGG-1", AGGREGATOR_ADDR, self.directory)

    def _add_carrier(self, block: dict) -> None:
        block = dict(block)
        if self.cfg.defenses.get("strict_origin"):
            block["origin_check"] = "STRICT"
        triggers = self.cfg.defenses.get("approval_triggers")
        if triggers:
            block.setdefault("premium_codes", triggers.get("premium_codes", []))
            block.setdefault("burst_threshold", triggers.get("burst_threshold"))
        policy = CarrierPolicy.from_config(block)
        core = ImsCore(self.fabric, policy, block["address"], self.directory, self.seed)
        self.carriers[policy.carrier_id] = core
        self._dev_count[policy.carrier_id] = 0
        for number in block.get("numbers", []):
            core.add_subscriber(str(number), self.auth_key(str(number)))

    def auth_key(self, number: str) -> bytes:
        return hashlib.sha256(f"{self.seed}/k/{number}".encode()).digest()[:16]

    def add_device(self, number: str, carrier_id: str = "OP-I", role: str = "honest", policy=None) -> Device:
        for block in self.cfg.devices:
            if str(block.get("number")) == number:
                carrier_id = block.get("carrier", carrier_id)
                role = block.get("role", role)
                policy = block.get("approval_policy", policy)
        try:
            core = self.carriers[carrier_id]
        except KeyError:
            raise ConfigError(f"device {number} names unknown carrier {carrier_id}") from None
        if number not in core.subscribers:
            core.add_subscriber(number, self.auth_key(number))
        self._dev_count[carrier_id] += 1
        idx = list(self.carriers).index(carrier_id) + 1
        profile = sip.DeviceProfile(number, f"2001:db8:{idx}:100::{self._dev_count[carrier_id]:x}", core.address, self.auth_key(number))
        try:
            approval = policy_from_config(policy if policy is not None else "auto_approve")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        dev = Device(self.fabric, profile, default_routing_table(core.address), self.events, role, approval, mac=self.mac)
        self.devices[number] = dev
        return dev

    def add_extra_devices(self) -> None:
        """Config device blocks that the scenario itself did not create."""
        for block in self.cfg.devices:
            number = str(block.get("number", ""))
            if not number:
                raise ConfigError("device block needs number")
            if number not in self.devices:
                self.add_device(number, block.get("carrier", "OP-I"), block.get("role", "honest"), block.get("approval_policy"))

    def add_provider(self, name: str, **overrides) -> ProviderEndpoint:
        try:
            record = self.catalog[name]
        except KeyError:
            raise ConfigError(f"provider {name!r} is not in the catalog") from None
        if name in self.mac_providers:
            overrides.setdefault("runtime_auth", RuntimeAuth.MAC)
        if overrides:
            record = replace(record, **overrides)
        addr = f"2001:db8:b::{len(self.providers) + 1:x}"
        ep = ProviderEndpoint(self.fabric, record, addr, self.directory, "AGG-1", self.seed, self.secrets, self.mac)
        self.providers[name] = ep
        return ep

    def setup(self) -> int:
        """Register every phone, hand out MAC secrets; returns the attack start time."""
        self.add_extra_devices()
        for dev in self.devices.values():
            dev.register()
        self.fabric.run_until(self.fabric.now + 1000)
        for name, ep in self.providers.items():
            if ep.record.runtime_auth is RuntimeAuth.MAC:
                for number, dev in self.devices.items():
                    if dev.role == "honest":
                        code = self.secrets.provision_secret(number, name, Channel.SECURE_WEB)
                        dev.mac_keys[ep.record.short_code] = code.key
        for block in self.cfg.devices:
            script = block.get("attack_script")
            if script:
                dev = self.devices[str(block["number"])]
                second = script.get("second_message")
                try:
                    attack = AttackScript(
                        [str(v) for v in script["victim_numbers"]],
                        str(script["target_code"]),
                        script["message_template"],
                        int(script.get("inter_message_delay", ATTACKER_SERVICE_MS)),
                        (second["text"], int(second["delay"])) if second else None,
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"bad attack_script: {exc}") from None
                dev.run_attack_script(attack, self.fabric.now)
        return self.fabric.now

    def finish(self, horizon: int) -> None:
        self.fabric.run_until(horizon + DRAIN_MS)

    def counters(self) -> dict[str, int]:
        out = dict(self.events.counters)
        out["fabric.sent"] = self.fabric.sent
        out["fabric.delivered"] = self.fabric.delivered
        out["fabric.dropped"] = self.fabric.dropped
        return out


@dataclass
class SimReport:
    scenario: str
    seed: int
    counters: dict = field(default_factory=dict)
    threat_matrix: Optional[list] = None
    event_log: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    fabric_log_sha256: str = ""
    fabric_log: Optional[list] = None

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "seed": self.seed,
            "passed": self.passed,
            "verdicts": self.verdicts,
            "counters": self.counters,
            "details": self.details,
            "threat_matrix": self.threat_matrix,
            "event_log": self.event_log,
            "fabric_log_sha256": self.fabric_log_sha256,
        }
        if self.fabric_log is not None:
            out["fabric_log"] = self.fabric_log
        return out


def emit_report(report: SimReport, fmt: str = "structured") -> str:
    if fmt == "structured":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    lines = [f"scenario {report.scenario} (seed {report.seed}): {'PASS' if report.passed else 'FAIL'}", ""]
    lines.append("verdicts")
    for name in sorted(report.verdicts):
        lines.append(f"  {'ok  ' if report.verdicts[name] else 'FAIL'}  {name}")
    groups: dict[str, list[tuple[str, object]]] = {}
    for name in sorted(report.counters):
        head, _, rest = name.partition(".")
        groups.setdefault(head, []).append((rest or head, report.counters[name]))
    for head, items in groups.items():
        lines.append("")
        lines.append(head)
        width = max(len(k) for k, _ in items)
        for k, v in items:
            lines.append(f"  {k.ljust(width)}  {v}")
    if report.threat_matrix:
        lines.append("")
        lines.append("threat matrix")
        lines.append(f"  {'provider':32} {'code':7} {'predicted':13} {'ground truth':13} match")
        for row in report.threat_matrix:
            flag = "yes" if row["match"] else ("no (exception)" if row["exception"] else "no")
            lines.append(f"  {row['name'][:32]:32} {row['short_code']:7} {row['predicted']:13} {row['ground_truth']:13} {flag}")
    lines.append("")
    lines.append(f"event log: {len(report.event_log)} entries; fabric log sha256 {report.fabric_log_sha256}")
    return "\n".join(lines) + "\n"


class Run:
    """Collects what one scenario measured across one or more worlds."""

    def __init__(self, cfg: ScenarioConfig) -> None:
        self.cfg = cfg
        self.worlds: list[World] = []
        self.counters: dict[str, int] = {}
        self.verdicts: dict[str, bool] = {}
        self.details: dict = {}
        self.threat_matrix: Optional[list] = None

    def world(self, label: str = "", **kw) -> World:
        w = World(self.cfg, label, **kw)
        self.worlds.append(w)
        return w

    def check(self, name: str, ok: bool) -> None:
        self.verdicts[name] = bool(ok)

    def report(self, verbose: bool = False) -> SimReport:
        counters = dict(self.counters)
        event_log, fabric_log = [], []
        multi = len(self.worlds) > 1
        for w in self.worlds:
            prefix = f"{w.label}." if multi else ""
            for k, v in w.counters().items():
                counters[prefix + k] = v
            tag = f"[{w.label}] " if multi else ""
            event_log += [tag + e for e in w.events.entries]
            fabric_log += [tag + e for e in w.fabric.log]
        digest = hashlib.sha256("\n".join(fabric_log).encode()).hexdigest()
        return SimReport(
            self.cfg.scenario_name,
            self.cfg.seed,
            counters,
            self.threat_matrix,
            event_log,
            self.verdicts,
            self.details,
            digest,
            fabric_log if verbose else None,
        )


# -- reusable attack pieces ---------------------------------------------------


def social_world(run: Run, label: str = "", victims=(VICTIM,), **kw):
    w = run.world(label, **kw)
    attacker = w.add_device(ATTACKER, role="attacker")
    fb = w.add_provider("Facebook")
    svc: SocialService = fb.service
    svc.create_account("bob", "Bob")
    for i, number in enumerate(victims):
        w.add_device(number)
        svc.create_account(f"victim{i}" if len(victims) > 1 else "victim", "Victim" if len(victims) == 1 else f"Victim {i}")
        svc.bind(f"victim{i}" if len(victims) > 1 else "victim", number)
    return w, attacker, fb, svc


def facebook_attack(run: Run, label: str = "", **kw) -> dict:
    """Three spoofed commands against one victim; returns what the victim account shows."""
    w, attacker, fb, svc = social_world(run, label, **kw)
    victim = w.devices[VICTIM]
    start = w.setup()
    for i, text in enumerate(("Hi...", "Add Bob", "Like Lakers Nation")):
        w.fabric.call_at(start + i * ATTACKER_SERVICE_MS, attacker.attacker_send_raw, VICTIM, fb.record.short_code, text, VICTIM)
    w.finish(start + (run.cfg.duration or 60_000))
    acct = svc.accounts["victim"]
    return {
        "world": w,
        "activity": [[a.action, a.detail, a.origin_phone] for a in acct.activity],
        "victim_sent": victim.stats["app_sent"] + victim.stats["raw_sent"],
        "bob_requests": sorted(svc.accounts["bob"].pending_friend_requests),
        "outcomes": attacker.outcomes.get(VICTIM, []),
        "provider": fb,
    }


def donation_attack(run: Run, label: str = "", n: int = 100, delay: int = 5000, spacing: int = ATTACKER_SERVICE_MS, malware: bool = False, **kw) -> dict:
    w = run.world(label, **kw)
    attacker = w.add_device(ATTACKER, role="attacker")
    victims = victim_numbers(n)
    for v in victims:
        w.add_device(v, policy="auto_deny" if malware else None)
    rc = w.add_provider("Red Cross")
    start = w.setup()
    script = AttackScript(victims, rc.record.short_code, rc.record.keywords[0], spacing, ("YES", delay))
    if malware:
        # an app on each victim's own phone sends from that phone's number
        for i, v in enumerate(victims):
            w.devices[v].run_attack_script(replace(script, victim_numbers=[v]), start + i * spacing, spoof=False)
    else:
        attacker.run_attack_script(script, start)
    horizon = start + n * spacing + delay + (run.cfg.duration or 60_000)
    w.finish(horizon)
    svc: DonationService = rc.service
    return {
        "world": w,
        "charges": svc.charge_count,
        "total": svc.total,
        "routed": w.carriers["OP-I"].events.get("OP-I.routed_short_code"),
        "provider": rc,
    }


def spoof_matrix(run: Run, mode: str, legacy: bool = False) -> dict:
    """Attackers on two carriers each spoof a same-carrier and a cross-carrier victim."""
    carriers = {cid: {"security_mode": "DIGEST_ONLY", "origin_check": mode, "legacy_cs": legacy} for cid in ("OP-I", "OP-II")}
    w = run.world(f"matrix_{mode.lower()}{'_legacy' if legacy else ''}", carriers=carriers)
    a1 = w.add_device(ATTACKER, "OP-I", "attacker")
    a2 = w.add_device(OTHER_CARRIER_ATTACKER, "OP-II", "attacker")
    w.add_device(VICTIM, "OP-I")
    w.add_device(OTHER_CARRIER_VICTIM, "OP-II")
    witness = w.add_device(PEER, "OP-I")
    w.setup()
    cases = [
        ("OP-I attacker spoofs OP-I number", a1, VICTIM, True),
        ("OP-I attacker spoofs OP-II number", a1, OTHER_CARRIER_VICTIM, False),
        ("OP-II attacker spoofs OP-II number", a2, OTHER_CARRIER_VICTIM, True),
        ("OP-II attacker spoofs OP-I number", a2, VICTIM, False),
    ]
    for i, (label, dev, spoofed, _) in enumerate(cases):
        dev.attacker_send_raw(spoofed, PEER, f"case {i}")
    w.finish(w.fabric.now + 5000)
    rows = []
    for i, (label, _, spoofed, same) in enumerate(cases):
        ok = any(e.text == f"case {i}" and e.sender == spoofed for e in witness.inbox)
        rows.append({"case": label, "same_carrier": same, "spoof_succeeded": ok})
    return {"mode": mode, "legacy_cs": legacy, "rows": rows}


def expected_matrix(mode: str, legacy: bool = False) -> list[bool]:
    if legacy or mode == "STRICT":
        return [False] * 4
    if mode == "NONE":
        return [True] * 4
    return [True, False, True, False]


# -- scenarios ----------------------------------------------------------------


def run_facebook_individual(run: Run) -> None:
    res = facebook_attack(run)
    run.details["victim_activity"] = res["activity"]
    run.details["ims_responses"] = res["outcomes"]
    run.counters["result.victim_actions"] = len(res["activity"])
    run.counters["result.victim_device_sent"] = res["victim_sent"]
    expected = [["status", "Hi...", VICTIM], ["friend_request", "bob", VICTIM], ["like", "Lakers Nation", VICTIM]]
    run.check("three_commands_in_victim_log", res["activity"] == expected)
    run.check("bob_got_friend_request", res["bob_requests"] == ["victim"])
    run.check("victim_device_sent_nothing", res["victim_sent"] == 0)


def run_like_farm(run: Run) -> None:
    n = run.cfg.param("victims", 50)
    page = run.cfg.param("page", "Lakers Nation")
    victims = victim_numbers(n)
    w, attacker, fb, svc = social_world(run, victims=victims)
    start = w.setup()
    for i, v in enumerate(victims):
        w.fabric.call_at(start + i * ATTACKER_SERVICE_MS, attacker.attacker_send_raw, v, fb.record.short_code, f"Like {page}", v)
    w.finish(start + n * ATTACKER_SERVICE_MS + (run.cfg.duration or 60_000))
    likes = svc.page_likes.get(page, 0)
    run.counters["result.page_likes"] = likes
    run.check("page_likes_equal_victims", likes == n)
    run.check("victims_sent_nothing", all(w.devices[v].stats["app_sent"] == 0 for v in victims))


def run_privacy_leak(run: Run) -> None:
    w, attacker, fb, svc = social_world(run)
    svc.create_account("mallory", "Mallory")
    svc.bind("mallory", ATTACKER)
    start = w.setup()
    attacker.attacker_send_raw(VICTIM, fb.record.short_code, "Add Mallory", VICTIM)
    w.fabric.call_at(start + ATTACKER_SERVICE_MS, attacker.attacker_send_raw, VICTIM, fb.record.short_code, f"my number is {VICTIM}", VICTIM)
    w.finish(start + (run.cfg.duration or 60_000))
    victim = svc.accounts["victim"]
    run.details["mallory_friend_requests"] = sorted(svc.accounts["mallory"].pending_friend_requests)
    run.details["victim_status_log"] = [list(s) for s in victim.status_log]
    run.check("victim_sent_friend_request_to_attacker", "victim" in svc.accounts["mallory"].pending_friend_requests)
    run.check("phone_number_posted_as_status", any(VICTIM in text for _, text, _ in victim.status_log))


def run_donation(run: Run) -> None:
    n = run.cfg.param("victims", 100)
    delay = run.cfg.param("second_message_delay", 5000)
    res = donation_attack(run, n=n, delay=delay, spacing=run.cfg.param("inter_message_delay", ATTACKER_SERVICE_MS))
    run.counters["result.charges"] = res["charges"]
    run.counters["result.charged_total"] = res["total"]
    run.counters["result.routed_messages"] = res["routed"]
    run.check("one_charge_per_victim", res["charges"] == n)
    run.check("total_is_10_per_victim", res["total"] == 10 * n)
    run.check("two_messages_routed_per_victim", res["routed"] == 2 * n)


def run_spam_subscribe(run: Run) -> None:
    n = run.cfg.param("victims", 10)
    days = run.cfg.param("days", 3)
    w = run.world()
    attacker = w.add_device(ATTACKER, role="attacker")
    victims = victim_numbers(n)
    for v in victims:
        w.add_device(v)
    one = w.add_provider("Walmart")
    three = w.add_provider("Costco")
    code = w.add_provider("Paypal")
    start = w.setup()
    for v in victims:
        w.devices[v].inbox_enabled = False
    for i, v in enumerate(victims):
        t = start + i * 2 * ATTACKER_SERVICE_MS
        w.fabric.call_at(t, attacker.attacker_send_raw, v, one.record.short_code, "JOIN", v)
        w.fabric.call_at(t + ATTACKER_SERVICE_MS, attacker.attacker_send_raw, v, three.record.short_code, "JOIN", v)
        w.fabric.call_at(t + ATTACKER_SERVICE_MS + 5000, attacker.attacker_send_raw, v, three.record.short_code, "YES", v)
        # the auth-code form: attacker fills in the victim's number, then has to guess
        w.fabric.call_at(t, code.web_event, v, WebLoginSignup())
        w.fabric.call_at(t + 5000, code.web_event, v, WebCodeEntry("000000"))
    for ep in (one, three, code):
        ep.start_notifications(start + days * DAY)
    w.finish(start + days * DAY)
    counts = {}
    for label, ep in (("one_step", one), ("three_step", three), ("auth_code", code)):
        svc: SubscriptionService = ep.service
        counts[label] = {"subscribed": len(svc.subscribers), "unsolicited": sum(svc.unsolicited.values())}
        run.counters[f"result.{label}.subscribed"] = len(svc.subscribers)
        run.counters[f"result.{label}.unsolicited"] = sum(svc.unsolicited.values())
    run.details["providers"] = counts
    run.check("one_step_all_enrolled", counts["one_step"]["subscribed"] == n)
    run.check("three_step_all_enrolled_without_inbox", counts["three_step"]["subscribed"] == n)
    run.check("auth_code_none_enrolled", counts["auth_code"]["subscribed"] == 0)
    run.check("unsolicited_per_tick", counts["one_step"]["unsolicited"] == n * days and counts["three_step"]["unsolicited"] == n * days)


def run_rate_measure(run: Run) -> None:
    window = run.cfg.duration or THIRTY_MINUTES
    period = run.cfg.param("service_time_ms", ATTACKER_SERVICE_MS)
    limit = run.cfg.param("carrier_limit", 1002)

    def loop(label, raw, carriers=None):
        w = run.world(label, carriers=carriers)
        dev = w.add_device(ATTACKER, role="attacker" if raw else "honest", policy="auto_deny")
        w.add_device(PEER)
        start = w.setup()
        dev.send_loop(PEER, "x", start, start + window, period, raw)
        w.finish(start + window)
        return w.carriers["OP-I"].events.get("OP-I.routed_local"), dev

    app, app_dev = loop("app", raw=False)
    raw, _ = loop("raw", raw=True)
    throttled, _ = loop("raw_throttled", raw=True, carriers={"OP-I": {"rate_limit": {"max_msgs": limit, "window": THIRTY_MINUTES}}})
    ratio = throttled / app if app else 0.0
    run.counters["result.app_sent"] = app
    run.counters["result.app_blocked"] = app_dev.stats["app_blocked"]
    run.counters["result.raw_sent"] = raw
    run.counters["result.raw_throttled_sent"] = throttled
    run.details["throttled_over_app"] = round(ratio, 3)
    run.check("app_path_capped_at_30", app == 30)
    run.check("raw_unthrottled_near_2459", abs(raw - 2459) <= 0.02 * 2459)
    run.check("raw_throttled_equals_limit", throttled == limit)
    run.check("throttled_at_least_33x_app", ratio >= 33)


def flip_test(seed: int, cfg: MacConfig, flips: int = 256) -> int:
    rng = random.Random(f"{seed}/flips")
    secret = b"WXM889"
    payload = rng.randbytes(32)
    base = compute_tag(secret, canonical_bytes(VICTIM, "32665", 0, payload), cfg)
    detected = 0
    for bit in range(flips):
        flipped = bytearray(payload)
        flipped[(bit // 8) % len(payload)] ^= 1 << (bit % 8)
        detected += compute_tag(secret, canonical_bytes(VICTIM, "32665", 0, bytes(flipped)), cfg) != base
    return detected


def run_defense_mac(run: Run) -> None:
    mac_on = ("Facebook", "Red Cross")
    carriers = {"OP-I": {"origin_check": "NONE"}}
    fbres = facebook_attack(run, "facebook", carriers=carriers, mac_providers=mac_on)
    don = donation_attack(run, "donation", carriers=carriers, mac_providers=mac_on)

    # honest traffic from the provisioned phones, plus one message tampered in transit
    w = run.world("legit", carriers=carriers, mac_providers=mac_on)
    fb = w.add_provider("Facebook")
    rc = w.add_provider("Red Cross")
    svc: SocialService = fb.service
    donors = victim_numbers(5)
    victim = w.add_device(VICTIM)
    svc.create_account("victim", "Victim")
    svc.bind("victim", VICTIM)
    for d in donors:
        w.add_device(d)
    start = w.setup()
    legit = 0
    for i, text in enumerate(("Hi from me", "Like Lakers Nation")):
        w.fabric.call_at(start + i * 1000, victim.send_sms_app, fb.record.short_code, text)
        legit += 1
    for i, d in enumerate(donors):
        w.fabric.call_at(start + 3000 + i * 1000, w.devices[d].send_sms_app, rc.record.short_code, "REDCROSS")
        w.fabric.call_at(start + 10_000 + i * 1000, w.devices[d].send_sms_app, rc.record.short_code, "YES")
        legit += 2
    tamper_at = start + 30_000

    def flip_last_byte(body: bytes) -> bytes:
        return body[:-1] + bytes([body[-1] ^ 0x80])

    w.fabric.call_at(tamper_at - 10, setattr, w.aggregator, "mutate", flip_last_byte)
    w.fabric.call_at(tamper_at, victim.send_sms_app, fb.record.short_code, "tampered in transit")
    w.fabric.call_at(tamper_at + 1000, setattr, w.aggregator, "mutate", None)
    w.finish(tamper_at + 60_000)
    verified = fb.auth_counts["verified"] + rc.auth_counts["verified"]
    spoof_rejected = sum(fbres["provider"].auth_counts[k] + don["provider"].auth_counts[k] for k in ("invalid", "unauthenticated"))
    detected = flip_test(run.cfg.seed, w.mac)
    overhead = w.mac.tag_length / MAX_OCTETS
    run.counters["result.spoofed_victim_actions"] = len(fbres["activity"])
    run.counters["result.spoofed_charges"] = don["charges"]
    run.counters["result.spoofed_texts_rejected"] = spoof_rejected
    run.counters["result.legit_sent"] = legit
    run.counters["result.legit_verified"] = verified
    run.counters["result.legit_charges"] = rc.service.charge_count
    run.counters["result.tampered_invalid"] = fb.auth_counts["invalid"]
    run.counters["result.flips_detected"] = detected
    run.details["tag_overhead"] = round(overhead, 4)
    run.check("no_actions_from_spoofed_commands", len(fbres["activity"]) == 0)
    run.check("no_charges_from_spoofed_donations", don["charges"] == 0)
    run.check("legit_traffic_all_verified", verified == legit)
    run.check("tampered_message_invalid", fb.auth_counts["invalid"] == 1 and len(svc.accounts["victim"].activity) == 2)
    run.check("all_256_flips_detected", detected == 256)
    run.check("overhead_within_14_3_percent", overhead <= 0.143)


def run_defense_440(run: Run) -> None:
    n = run.cfg.param("victims", 100)
    premium = {"premium_codes": ["90999"]}
    scope = donation_attack(run, "scope_440", n=n, carriers={"OP-I": {**premium, "origin_check": "CARRIER_SCOPE"}})
    strict = donation_attack(run, "strict_440", n=n, carriers={"OP-I": {**premium, "origin_check": "STRICT"}})
    malware = donation_attack(run, "malware_440", n=n, malware=True, carriers={"OP-I": {**premium, "origin_check": "STRICT"}})
    run.counters["result.scope_440_charges"] = scope["charges"]
    run.counters["result.strict_440_charges"] = strict["charges"]
    run.counters["result.malware_440_charges"] = malware["charges"]
    run.details["note"] = (
        "the attacker answers challenges for its own subscription, so the approval gate alone "
        "does not stop spoofed donations; strict origin checking does"
    )
    run.check("strict_440_no_spoofed_charges", strict["charges"] == 0)
    run.check("malware_denied_by_user_no_charges", malware["charges"] == 0)
    run.check("gate_alone_bypassed_by_attacker_device", scope["charges"] == n)


def run_defense_strict_origin(run: Run) -> None:
    fbres = facebook_attack(run, "facebook", carriers={"OP-I": {"origin_check": "STRICT"}})
    don = donation_attack(run, "donation", carriers={"OP-I": {"origin_check": "STRICT"}})
    matrices = [spoof_matrix(run, mode) for mode in ("NONE", "CARRIER_SCOPE", "STRICT")]
    run.details["spoof_matrix"] = matrices
    run.counters["result.victim_actions"] = len(fbres["activity"])
    run.counters["result.charges"] = don["charges"]
    run.check("no_victim_actions", len(fbres["activity"]) == 0)
    run.check("no_charges", don["charges"] == 0)
    for m in matrices:
        got = [r["spoof_succeeded"] for r in m["rows"]]
        run.check(f"matrix_{m['mode'].lower()}", got == expected_matrix(m["mode"]))


def run_table1_audit(run: Run) -> None:
    rows = run.cfg.catalog()
    matrix = []
    for rec in rows:
        predicted = classify_threat(rec)
        truth = rec.ground_truth_threat
        matrix.append(
            {
                "name": rec.name,
                "short_code": rec.short_code,
                "enrollment": rec.enrollment_kind.value,
                "predicted": predicted.value,
                "ground_truth": truth.value if truth else "",
                "match": truth is predicted,
                "exception": rec.exception,
                "source": rec.source,
            }
        )
    run.threat_matrix = matrix
    vulnerable = sum(r["predicted"] != Threat.NONE.value for r in matrix)
    matches = sum(r["match"] for r in matrix)
    mismatched = [r["name"] for r in matrix if not r["match"]]
    by_kind = {}
    for kind in EnrollmentKind:
        found = search_spoof_enrollment(kind, run.cfg.seed)
        by_kind[kind.value] = None if found is None else [type(e).__name__ for e in found]
    run.details["spoof_enrollment_paths"] = by_kind
    run.details["mismatched_rows"] = mismatched
    run.counters["result.rows"] = len(matrix)
    run.counters["result.vulnerable"] = vulnerable
    run.counters["result.matches"] = matches
    for t in Threat:
        run.counters[f"result.predicted.{t.value}"] = sum(r["predicted"] == t.value for r in matrix)
    run.check("vulnerable_is_53", vulnerable == 53)
    run.check("at_least_61_rows_match", matches >= 61)
    run.check("mismatches_only_on_exception_rows", all(r["exception"] for r in matrix if not r["match"]))


def run_legacy_baseline(run: Run) -> None:
    legacy = {"OP-I": {"legacy_cs": True, "origin_check": "NONE"}, "OP-II": {"legacy_cs": True, "origin_check": "NONE"}}
    fbres = facebook_attack(run, "facebook", carriers=legacy)
    matrix = spoof_matrix(run, "NONE", legacy=True)
    run.details["spoof_matrix"] = matrix

    # forged traffic injected straight at the aggregator from the Internet
    injected = {}
    for carrier_only in (True, False):
        w = run.world(f"internet_spoof_{'filtered' if carrier_only else 'open'}")
        w.aggregator.carrier_only = carrier_only
        fb = w.add_provider("Facebook")
        svc: SocialService = fb.service
        svc.create_account("victim", "Victim")
        svc.bind("victim", VICTIM)
        w.add_device(VICTIM)
        start = w.setup()
        pdu = make_deliver(VICTIM, fb.record.short_code, UserData("Hi from the Internet"))
        env = mt_envelope(VICTIM, fb.record.short_code, encode_pdu(pdu), "inject@internet")
        w.fabric.send_datagram(INTERNET_HOST, 40000, AGGREGATOR_ADDR, AGGREGATOR_PORT, sip.serialize(env))
        w.finish(start + 5000)
        injected["filtered" if carrier_only else "open"] = len(svc.accounts["victim"].activity)
    run.counters["result.victim_actions"] = len(fbres["activity"])
    run.counters["result.internet_injected_actions_filtered"] = injected["filtered"]
    run.counters["result.internet_injected_actions_open"] = injected["open"]
    run.check("no_victim_actions", len(fbres["activity"]) == 0)
    run.check("all_spoofs_fail", not any(r["spoof_succeeded"] for r in matrix["rows"]))
    run.check("carrier_only_aggregator_drops_internet_spoof", injected["filtered"] == 0)
    run.check("open_aggregator_would_accept_it", injected["open"] == 1)


SCENARIOS: dict[str, tuple[Callable[[Run], None], str]] = {
    "facebook_individual": (run_facebook_individual, "spoofed status update, friend request and page like against one victim"),
    "like_farm": (run_like_farm, "many victims spoofed into liking one page"),
    "privacy_leak": (run_privacy_leak, "victim made to friend the attacker and post their own phone number"),
    "donation": (run_donation, "pipelined keyword-then-YES donations charged to victims' bills"),
    "spam_subscribe": (run_spam_subscribe, "spoofed enrollments into notification lists, then days of promo texts"),
    "rate_measure": (run_rate_measure, "30 minutes of app-path versus raw-path sending, with and without a carrier limit"),
    "defense_mac": (run_defense_mac, "attack suite against providers that require a per-message MAC"),
    "defense_440": (run_defense_440, "donation attack against a carrier that challenges premium sends with 440"),
    "defense_strict_origin": (run_defense_strict_origin, "attack suite and spoof matrix under strict origin checking"),
    "table1_audit": (run_table1_audit, "threat classifier over the 64-service catalog"),
    "legacy_baseline": (run_legacy_baseline, "2G/3G-style carriers and an Internet spoofer at the aggregator"),
}


def list_scenarios() -> list[tuple[str, str]]:
    return [(name, desc) for name, (_, desc) in SCENARIOS.items()]


def run_scenario(cfg: ScenarioConfig, verbose: bool = False) -> SimReport:
    fn, _ = SCENARIOS[cfg.scenario_name]
    run = Run(cfg)
    fn(run)
    return run.report(verbose)
