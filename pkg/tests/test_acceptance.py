"""The nine acceptance criteria, each at its stated tolerance and runtime budget.

Every check records one PASS/FAIL line; conftest.py prints them at the end of
the session, and running this file directly prints them as they finish.
"""

import sys
import time

import pytest

from imsspoof.defenses import MacConfig
from imsspoof.providers import EnrollmentKind as K
from imsspoof.providers import attacker_alphabet, search_spoof_enrollment
from imsspoof.scenarios import (
    SCENARIOS,
    Run,
    ScenarioConfig,
    donation_attack,
    emit_report,
    expected_matrix,
    facebook_attack,
    run_scenario,
    spoof_matrix,
    VICTIM,
)
from imsspoof.sms_codec import MAX_OCTETS, BearerData, MessageKind, SmsAddress, SmsPdu, UserData, decode_pdu, encode_pdu

RESULTS = []
SEED = 20170625


def record(number, title, ok, detail, elapsed):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({detail}; {elapsed:.2f}s)"
    RESULTS.append(line)
    if __name__ == "__main__":
        print(line)
    return ok


def timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


def cfg(name, **kw):
    return ScenarioConfig.from_dict({"scenario_name": name, "seed": SEED, **kw})


def criterion_1():
    pdu = SmsPdu(dest=SmsAddress("32665"), bearer=BearerData(0, UserData("yyyy8"), MessageKind.DELIVER))
    data = encode_pdu(pdu)
    fields = {
        "teleservice 4098": (4098).to_bytes(2, "big") in data,
        "dest 32665 with 5 fields": bytes.fromhex("014c9994") in data,
        # message identifier record: kind nibble 1 (deliver), id 0
        "message kind deliver": bytes.fromhex("0003100000") in data,
        # user data record: 5-bit encoding 2, num_fields 5, then "yyyy8" in septets
        "encoding 2, 5 fields, yyyy8": bytes.fromhex("0106102f9f3e7cb8") in data,
    }
    roundtrip = decode_pdu(data) == pdu
    ok = all(fields.values()) and roundtrip
    missing = [k for k, v in fields.items() if not v]
    return ok, f"{data.hex()} roundtrip={roundtrip} missing={missing}", 1.0


def criterion_2():
    run = Run(cfg("defense_strict_origin"))
    got = {}
    for mode in ("NONE", "CARRIER_SCOPE", "STRICT"):
        m = spoof_matrix(run, mode)
        got[mode] = [r["spoof_succeeded"] for r in m["rows"]]
    ok = all(got[m] == expected_matrix(m) for m in got)
    detail = " ".join(f"{m}={sum(v)}/4" for m, v in got.items())
    return ok, detail, 5.0


def criterion_3():
    res = facebook_attack(Run(cfg("facebook_individual")))
    expected = [["status", "Hi...", VICTIM], ["friend_request", "bob", VICTIM], ["like", "Lakers Nation", VICTIM]]
    ok = res["activity"] == expected and res["victim_sent"] == 0
    return ok, f"victim actions={len(res['activity'])} victim device sent={res['victim_sent']}", 5.0


def criterion_4():
    report = run_scenario(cfg("rate_measure", duration=30 * 60 * 1000))
    c = report.counters
    app, raw, throttled = c["result.app_sent"], c["result.raw_sent"], c["result.raw_throttled_sent"]
    ratio = throttled / app if app else 0
    ok = app == 30 and abs(raw - 2459) <= 0.02 * 2459 and throttled == 1002 and ratio >= 33
    return ok, f"app={app} raw={raw} (2459 +/- 2%) throttled={throttled} ratio={ratio:.1f}", 10.0


def criterion_5():
    run = Run(cfg("donation"))
    don = donation_attack(run, "donation", n=100, delay=5000)
    premium = {"premium_codes": ["90999"], "origin_check": "STRICT"}
    strict = donation_attack(run, "strict_440", n=100, carriers={"OP-I": premium})
    malware = donation_attack(run, "malware_440", n=100, malware=True, carriers={"OP-I": premium})
    ok = don["charges"] == 100 and don["total"] == 1000 and don["routed"] == 200 and strict["charges"] == 0 and malware["charges"] == 0
    detail = f"charges={don['charges']} total={don['total']} routed={don['routed']} strict+440={strict['charges']} denied+440={malware['charges']}"
    return ok, detail, 5.0


def criterion_6():
    bad = []
    no_inbox = attacker_alphabet(inbox=False)
    for seed in range(100):
        if search_spoof_enrollment(K.ONE_STEP, seed, 6, no_inbox) is None:
            bad.append(("OneStep", seed))
        if search_spoof_enrollment(K.THREE_STEP_SIMPLE, seed, 6, no_inbox) is None:
            bad.append(("ThreeStepSimple", seed))
        if search_spoof_enrollment(K.FOUR_STEP_AUTH_CODE, seed, 6, no_inbox) is not None:
            bad.append(("FourStepAuthCode", seed))
    report = run_scenario(cfg("spam_subscribe"))
    three = report.counters["result.three_step.subscribed"]
    ok = not bad and three == 10
    return ok, f"100 seeds, counterexamples={bad[:3]} three-step enrolled with inbox off={three}/10", 30.0


def criterion_7():
    report = run_scenario(cfg("table1_audit"))
    m = report.threat_matrix
    vulnerable = sum(r["predicted"] != "None" for r in m)
    matches = sum(r["match"] for r in m)
    only_exceptions = all(r["exception"] for r in m if not r["match"])
    exceptions = sum(r["exception"] for r in m)
    ok = len(m) == 64 and vulnerable == 53 and matches >= 61 and only_exceptions and exceptions == 3
    return ok, f"rows={len(m)} vulnerable={vulnerable}/64 matches={matches} mismatches on exception rows only={only_exceptions}", 1.0


def criterion_8():
    report = run_scenario(cfg("defense_mac"))
    c = report.counters
    overhead = MacConfig().tag_length / MAX_OCTETS
    ok = (
        c["result.spoofed_victim_actions"] == 0
        and c["result.spoofed_charges"] == 0
        and c["result.legit_verified"] == c["result.legit_sent"]
        and overhead <= 0.143
        and c["result.flips_detected"] == 256
    )
    detail = (
        f"spoofed actions={c['result.spoofed_victim_actions']} charges={c['result.spoofed_charges']} "
        f"legit verified={c['result.legit_verified']}/{c['result.legit_sent']} overhead={overhead:.4f} flips={c['result.flips_detected']}/256"
    )
    return ok, detail, 10.0


def criterion_9():
    differing = []
    for name in SCENARIOS:
        config = cfg(name)
        a = emit_report(run_scenario(config), "structured")
        b = emit_report(run_scenario(config), "structured")
        if a != b:
            differing.append(name)
    return not differing, f"{len(SCENARIOS)} scenarios run twice, differing={differing}", None


CRITERIA = [
    (1, "codec golden message", criterion_1),
    (2, "spoofing matrix", criterion_2),
    (3, "individual social-network attack", criterion_3),
    (4, "rate reproduction", criterion_4),
    (5, "donation attack and 440 defense", criterion_5),
    (6, "enrollment soundness", criterion_6),
    (7, "catalog threat audit", criterion_7),
    (8, "MAC defense", criterion_8),
    (9, "determinism", criterion_9),
]


@pytest.mark.parametrize("number,title,fn", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(number, title, fn):
    (ok, detail, budget), elapsed = timed(fn)
    within = budget is None or elapsed < budget
    if not within:
        detail += f"; over the {budget:.0f}s budget"
    assert record(number, title, ok and within, detail, elapsed), detail


if __name__ == "__main__":
    failed = 0
    for number, title, fn in CRITERIA:
        (ok, detail, budget), elapsed = timed(fn)
        within = budget is None or elapsed < budget
        failed += not record(number, title, ok and within, detail, elapsed)
    sys.exit(1 if failed else 0)
