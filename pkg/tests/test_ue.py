import pytest

from helpers import Net
from imsspoof.ims_core import ApprovalTriggers, CarrierPolicy, OriginCheck, SecurityMode
from imsspoof.ue import (
    ATTACKER_SERVICE_MS,
    AttackScript,
    AutoApprove,
    AutoDeny,
    DiscoveryError,
    Manual,
    Outcome,
    Script,
    discover_ims_address,
    policy_from_config,
)

ATTACKER = "3105552501"
VICTIM = "3105554347"
PEER = "3105550000"


class CountingPolicy(AutoDeny):
    def __init__(self):
        self.calls = 0

    def decide(self, prompt):
        self.calls += 1
        return False


class TestDiscovery:
    def test_appendix_table(self):
        table = "default via fe80:xxx::5dc8 dev rmnet0 metric 1024\n2001:xxxx:y:fe03:fa:104:0:5 via fe80::1 dev rmnet1\n"
        assert discover_ims_address(table) == ("2001:xxxx:y:fe03:fa:104:0:5", "rmnet1")

    def test_symmetric(self):
        table = "default via fe80::1 dev rmnet1\n2001:db8::5 via fe80::2 dev rmnet0\n"
        assert discover_ims_address(table) == ("2001:db8::5", "rmnet0")

    def test_lowest_interface_wins(self):
        table = "default via fe80::1 dev rmnet0\n2001:db8::7 via fe80::2 dev rmnet3\n2001:db8::5 via fe80::2 dev rmnet2\n"
        assert discover_ims_address(table) == ("2001:db8::5", "rmnet2")

    def test_only_default(self):
        with pytest.raises(DiscoveryError):
            discover_ims_address("default via fe80::1 dev rmnet0\n")


class TestRegister:
    def test_honest(self):
        net = Net()
        assert net.device(VICTIM).registered

    def test_wrong_key(self):
        net = Net()
        dev = net.device(VICTIM, register=False)
        dev.profile.auth_key = b"nope"
        dev.register()
        net.settle()
        assert not dev.registered

    def test_ipsec_sends_carry_tags(self):
        net = Net(CarrierPolicy("OP-I", SecurityMode.IPSEC_3GPP))
        sender = net.device(VICTIM)
        peer = net.device(PEER)
        assert sender.session_key is not None
        sender.send_sms_app(PEER, "tagged")
        net.settle()
        assert [e.text for e in peer.inbox] == ["tagged"]


class TestAppPath:
    def test_short_code_autodeny_blocked(self):
        net = Net()
        dev = net.device(VICTIM, approval_policy=AutoDeny())
        assert dev.send_sms_app("32665", "F") is Outcome.BLOCKED
        assert dev.stats["app_blocked"] == 1

    def test_ordinary_number_no_prompt(self):
        net = Net()
        policy = CountingPolicy()
        dev = net.device(VICTIM, approval_policy=policy)
        net.device(PEER)
        for _ in range(5):
            assert dev.send_sms_app(PEER, "hi") is Outcome.SENT
        assert policy.calls == 0

    def test_31st_message(self):
        for policy, expected in ((AutoDeny(), Outcome.BLOCKED), (AutoApprove(), Outcome.SENT)):
            net = Net()
            dev = net.device(VICTIM, approval_policy=policy)
            net.device(PEER)
            for _ in range(30):
                assert dev.send_sms_app(PEER, "x") is Outcome.SENT
            assert dev.send_sms_app(PEER, "x") is expected

    def test_window_resets_after_30_minutes(self):
        net = Net()
        dev = net.device(VICTIM, approval_policy=AutoDeny())
        net.device(PEER)
        for _ in range(30):
            dev.send_sms_app(PEER, "x")
        net.fabric.run_until(net.fabric.now + 30 * 60 * 1000)
        assert dev.send_sms_app(PEER, "x") is Outcome.SENT

    def test_manual_awaits(self):
        net = Net()
        dev = net.device(VICTIM, approval_policy=Manual())
        peer = net.device("3105551111")
        assert dev.send_sms_app("32665", "F") is Outcome.AWAITING_USER_CONFIRM
        for _ in range(30):
            dev.send_sms_app(peer.number, "x")
        assert dev.send_sms_app(peer.number, "x") is Outcome.AWAITING_RATE_APPROVAL
        assert dev.resolve_waiting(False) is Outcome.BLOCKED
        assert dev.resolve_waiting(True) is Outcome.SENT

    def test_from_always_own_number(self):
        net = Net()
        dev = net.device(VICTIM)
        net.device(PEER)
        sent = []
        orig = net.fabric.send_datagram

        def spy(*args, **kw):
            sent.append(args[4])
            return orig(*args, **kw)

        net.fabric.send_datagram = spy
        for _ in range(3):
            dev.send_sms_app(PEER, "hello")
        froms = [p for p in sent if p.startswith(b"MESSAGE")]
        assert froms and all(b"From: <tel:3105554347>" in p for p in froms)


class TestRawPath:
    def test_gate_bypass(self):
        net = Net(CarrierPolicy("OP-I", origin_check=OriginCheck.NONE))
        policy = CountingPolicy()
        attacker = net.device(ATTACKER, role="attacker", approval_policy=policy)
        net.device(VICTIM)
        for _ in range(40):
            attacker.attacker_send_raw(VICTIM, "32665", "Hi...")
        net.settle(5000)
        assert attacker.app_window_count == 0
        assert policy.calls == 0
        assert attacker.stats["raw_sent"] == 40

    def test_varied_ports_all_accepted(self):
        net = Net()
        attacker = net.device(ATTACKER, role="attacker")
        net.device(VICTIM)
        witness = net.device(PEER)
        ports = set()
        orig = net.fabric.send_datagram

        def spy(src, sport, *rest, **kw):
            if src == attacker.address and sport != 5060:
                ports.add(sport)
            return orig(src, sport, *rest, **kw)

        net.fabric.send_datagram = spy
        for _ in range(10):
            attacker.attacker_send_raw(VICTIM, PEER, "x")
        net.settle(3000)
        assert len(ports) == 10
        assert len(witness.inbox) == 10

    def test_strict_rejects(self):
        net = Net(CarrierPolicy("OP-I", origin_check=OriginCheck.STRICT))
        attacker = net.device(ATTACKER, role="attacker")
        net.device(VICTIM)
        witness = net.device(PEER)
        attacker.attacker_send_raw(VICTIM, PEER, "x", victim=VICTIM)
        net.settle()
        assert witness.inbox == []
        assert attacker.outcomes[VICTIM] == [403]


class TestAttackScript:
    def test_pipelined_interleaving(self):
        net = Net()
        attacker = net.device(ATTACKER, role="attacker")
        victims = ["3105550001", "3105550002", "3105550003"]
        witnesses = [net.device(v) for v in victims]
        script = AttackScript(victims, PEER, "REDCROSS", 1000, ("YES", 5000))
        witness = net.device(PEER)
        t0 = net.fabric.now
        attacker.run_attack_script(script, start=t0)
        net.settle(10_000)
        texts = [(e.sender, e.text) for e in witness.inbox]
        assert len(texts) == 6
        # all three first messages precede the first YES
        assert [t for _, t in texts[:3]] == ["REDCROSS"] * 3
        assert {s for s, _ in texts} == set(victims)
        assert all(codes == [200, 200] for codes in attacker.outcomes.values())
        assert all(w.stats["app_sent"] == 0 for w in witnesses)

    def test_empty(self):
        net = Net()
        attacker = net.device(ATTACKER, role="attacker")
        attacker.run_attack_script(AttackScript([], "32665", "x"))
        net.settle()
        assert attacker.stats["raw_sent"] == 0

    def test_100_victims_zero_delay(self):
        net = Net(CarrierPolicy("OP-I", origin_check=OriginCheck.NONE))
        attacker = net.device(ATTACKER, role="attacker")
        witness = net.device(PEER)
        victims = [f"31055{i:05d}" for i in range(100, 200)]
        attacker.run_attack_script(AttackScript(victims, PEER, "A {victim}", 0, ("B", 0)))
        net.settle(5000)
        assert attacker.stats["raw_sent"] == 200
        assert net.a.events.get("OP-I.routed_local") == 200
        assert len(witness.inbox) == 200

    def test_negative_delay(self):
        with pytest.raises(ValueError):
            AttackScript([], "1", "x", -1)

    def test_service_time_constant(self):
        assert 30 * 60 * 1000 // ATTACKER_SERVICE_MS + 1 == 2466


class TestHandle440:
    def _net(self):
        return Net(CarrierPolicy("OP-I", approval_triggers=ApprovalTriggers(frozenset({PEER}))))

    def test_auto_approve_delivered(self):
        net = self._net()
        dev = net.device(VICTIM, approval_policy=AutoApprove())
        witness = net.device(PEER)
        dev.send_sms_app(PEER, "pay")
        net.settle()
        assert [e.text for e in witness.inbox] == ["pay"]
        assert dev.stats["approvals_440"] == 1

    def test_auto_deny_never_delivered(self):
        net = self._net()
        dev = net.device(VICTIM)
        dev.approval_policy = AutoDeny()
        witness = net.device(PEER)
        dev.send_sms_app(PEER, "pay")
        net.settle()
        assert witness.inbox == []
        assert dev.stats["abandoned_440"] == 1

    def test_script_deny_then_approve(self):
        net = self._net()
        dev = net.device(VICTIM, approval_policy=Script([False, True]))
        witness = net.device(PEER)
        dev.send_sms_app(PEER, "first")
        net.settle()
        dev.send_sms_app(PEER, "second")
        net.settle()
        assert [e.text for e in witness.inbox] == ["second"]

    def test_attacker_answers_own_challenge(self):
        net = self._net()
        attacker = net.device(ATTACKER, role="attacker", approval_policy=AutoDeny())
        net.device(VICTIM)
        witness = net.device(PEER)
        attacker.attacker_send_raw(VICTIM, PEER, "spoofed premium")
        net.settle()
        assert [e.sender for e in witness.inbox] == [VICTIM]


class TestPolicyConfig:
    def test_names(self):
        assert isinstance(policy_from_config("auto_deny"), AutoDeny)
        assert isinstance(policy_from_config({"script": [0, 1]}), Script)
        with pytest.raises(ValueError):
            policy_from_config("maybe")
