"""Simulated phones: the OS-mediated app path and the raw-socket attacker path."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from . import sip_codec as sip
from .defenses import MacConfig, sign_pdu
from .ims_core import REPORT_HEADER, THIRTY_MINUTES, derive_session_key
from .netsim import Datagram, EventLog, Fabric, RouteEntry, parse_routing_table
from .sms_codec import CodecError, decode_pdu, encode_pdu, make_submit

APP_WINDOW_LIMIT = 30
ATTACKER_SERVICE_MS = 730


class DiscoveryError(RuntimeError):
    pass


class Outcome(enum.Enum):
    SENT = "sent"
    BLOCKED = "blocked"
    AWAITING_USER_CONFIRM = "awaiting_user_confirm"
    AWAITING_RATE_APPROVAL = "awaiting_rate_approval"


class ApprovalPolicy:
    """Stands in for the user answering a confirmation dialog."""

    name = "policy"

    def decide(self, prompt: str) -> Optional[bool]:
        raise NotImplementedError


class AutoApprove(ApprovalPolicy):
    name = "auto_approve"

    def decide(self, prompt: str) -> Optional[bool]:
        return True


class AutoDeny(ApprovalPolicy):
    name = "auto_deny"

    def decide(self, prompt: str) -> Optional[bool]:
        return False


class Script(ApprovalPolicy):
    """Answers from a fixed list; denies once the list runs out."""

    name = "script"

    def __init__(self, decisions) -> None:
        self.decisions = list(decisions)
        self.asked = 0

    def decide(self, prompt: str) -> Optional[bool]:
        self.asked += 1
        return self.decisions.pop(0) if self.decisions else False


class Manual(ApprovalPolicy):
    """Never answers on its own; the prompt stays pending until resolved."""

    name = "manual"

    def decide(self, prompt: str) -> Optional[bool]:
        return None


def policy_from_config(value) -> ApprovalPolicy:
    if isinstance(value, ApprovalPolicy):
        return value
    if isinstance(value, dict) and "script" in value:
        return Script(bool(x) for x in value["script"])
    if isinstance(value, list):
        return Script(bool(x) for x in value)
    table = {"auto_approve": AutoApprove, "auto_deny": AutoDeny, "manual": Manual}
    try:
        return table[str(value).lower()]()
    except KeyError:
        raise ValueError(f"unknown approval policy {value!r}") from None


def discover_ims_address(routing_table_text: str) -> tuple[str, str]:
    """IMS server address and interface from ``ip -6 route``-style text.

    The default route's interface carries Internet traffic; the IMS server
    sits behind a host route on some other interface.
    """
    entries = parse_routing_table(routing_table_text)
    inet_dev = next(e.dev for e in entries if e.prefix == "default")
    candidates = sorted((e.dev, e.prefix) for e in entries if e.prefix != "default" and e.dev != inet_dev)
    if not candidates:
        raise DiscoveryError("no route on an interface other than the default one")
    dev, prefix = candidates[0]
    return prefix.split("/")[0], dev


def default_routing_table(ims_address: str) -> str:
    return (
        f"default via fe80::5dc8 dev rmnet0 metric 1024\n"
        f"{ims_address} via fe80::1 dev rmnet1\n"
    )


@dataclass(frozen=True)
class InboxEntry:
    t: int
    sender: str
    text: str


@dataclass
class AttackScript:
    victim_numbers: list[str]
    target_code: str
    message_template: str
    inter_message_delay: int = ATTACKER_SERVICE_MS
    second_message: Optional[tuple[str, int]] = None

    def __post_init__(self) -> None:
        if self.inter_message_delay < 0:
            raise ValueError("inter_message_delay must be >= 0")


@dataclass
class _Pending:
    kind: str
    recipient: str = ""
    from_number: str = ""
    port: int = sip.SIP_PORT
    victim: Optional[str] = None
    policy: Optional[ApprovalPolicy] = None


@dataclass
class AppRequest:
    recipient: str
    text: str
    reason: str


class Device:
    def __init__(
        self,
        fabric: Fabric,
        profile: sip.DeviceProfile,
        routing_table: str,
        events: Optional[EventLog] = None,
        role: str = "honest",
        approval_policy: Optional[ApprovalPolicy] = None,
        mac: Optional[MacConfig] = None,
    ) -> None:
        self.fabric = fabric
        self.profile = profile
        self.events = events or EventLog()
        self.role = role
        self.approval_policy = approval_policy or AutoApprove()
        # An attacker's own tooling answers IMS 440 challenges itself; on an
        # honest phone the OS asks the user, whoever asked for the send.
        self.raw_440_policy: ApprovalPolicy = AutoApprove() if role == "attacker" else self.approval_policy
        self.mac = mac or MacConfig()
        self.mac_keys: dict[str, bytes] = {}
        self.mac_seq: dict[str, int] = {}
        self.routing_table: list[RouteEntry] = parse_routing_table(routing_table)
        self.ims_address, self.ims_interface = discover_ims_address(routing_table)
        profile.ims_server_address = self.ims_address
        self.registered = False
        self.session_key: Optional[bytes] = None
        self._pending_nonce = ""
        self.inbox: list[InboxEntry] = []
        self.inbox_enabled = True
        self.app_window_count = 0
        self.app_window_start = 0
        self.waiting: list[AppRequest] = []
        self.outcomes: dict[str, list[int]] = {}
        self.stats = {
            "app_sent": 0,
            "app_blocked": 0,
            "raw_sent": 0,
            "prompts": 0,
            "approvals_440": 0,
            "abandoned_440": 0,
            "delivery_reports": 0,
        }
        self._pending: dict[str, _Pending] = {}
        fabric.bind(profile.device_address, sip.SIP_PORT, self._on_datagram)

    @property
    def number(self) -> str:
        return self.profile.phone_number

    @property
    def address(self) -> str:
        return self.profile.device_address

    def _log(self, text: str) -> None:
        self.events.record(self.fabric.now, f"ue[{self.number}]", text)

    # -- sending -------------------------------------------------------------

    def _dispatch(self, env: sip.SipEnvelope, port: int, pending: _Pending) -> None:
        if self.session_key is not None and port == sip.SIP_PORT:
            env = sip.attach_integrity_tag(self.session_key, env)
        self._pending[env.header("Call-ID")] = pending
        self.fabric.send_datagram(self.address, port, self.ims_address, sip.SIP_PORT, sip.serialize(env))

    def register(self) -> None:
        """Start the REGISTER / 401 / REGISTER / 200 exchange."""
        env = sip.build_register(self.profile)
        self._dispatch(env, sip.SIP_PORT, _Pending("register"))

    def _build(self, from_number: str, recipient: str, text: str | bytes) -> sip.SipEnvelope:
        pdu = make_submit(recipient, text, self.profile.call_id_counter + 1)
        key = self.mac_keys.get(recipient)
        if key is not None and from_number == self.number:
            seq = self.mac_seq.get(recipient, 0)
            self.mac_seq[recipient] = seq + 1
            pdu = sign_pdu(pdu, from_number, seq, key, self.mac)
        return sip.build_message_request(self.profile, from_number, recipient, encode_pdu(pdu))

    @staticmethod
    def _is_short_code(number: str) -> bool:
        # the phone only sees the number's shape, not the carrier's code table
        return number.isdigit() and 5 <= len(number) <= 6

    def send_sms_app(self, recipient: str, text: str, now: Optional[int] = None) -> Outcome:
        """The messaging-app path: device gates first, then an honest MESSAGE."""
        if not self.registered:
            raise RuntimeError(f"{self.number} is not registered")
        now = self.fabric.now if now is None else now
        if self.app_window_count and now - self.app_window_start >= THIRTY_MINUTES:
            self.app_window_count = 0
        gates = []
        if self._is_short_code(recipient):
            gates.append(("short_code", f"{recipient} may be a premium number. Send anyway?"))
        if self.app_window_count >= APP_WINDOW_LIMIT:
            gates.append(("rate", "This app is sending a large number of SMS messages. Allow?"))
        for reason, prompt in gates:
            self.stats["prompts"] += 1
            answer = self.approval_policy.decide(prompt)
            if answer is None:
                self.waiting.append(AppRequest(recipient, text, reason))
                return Outcome.AWAITING_USER_CONFIRM if reason == "short_code" else Outcome.AWAITING_RATE_APPROVAL
            if not answer:
                self.stats["app_blocked"] += 1
                return Outcome.BLOCKED
        self._send_app_now(recipient, text)
        return Outcome.SENT

    def _send_app_now(self, recipient: str, text: str) -> None:
        env = self._build(self.number, recipient, text)
        assert sip.tel_number(env.header("From")) == self.number
        if self.app_window_count == 0:
            self.app_window_start = self.fabric.now
        self.app_window_count += 1
        self.stats["app_sent"] += 1
        self._dispatch(env, sip.SIP_PORT, _Pending("message", recipient, self.number, policy=self.approval_policy))

    def resolve_waiting(self, approve: bool) -> Outcome:
        """Answer the oldest pending app prompt (Manual policy)."""
        req = self.waiting.pop(0)
        if not approve:
            self.stats["app_blocked"] += 1
            return Outcome.BLOCKED
        self._send_app_now(req.recipient, req.text)
        return Outcome.SENT

    def attacker_send_raw(self, from_number: str, recipient: str, text: str | bytes, victim: Optional[str] = None) -> None:
        """Hand-built MESSAGE on a raw socket: no device gates, any From."""
        if not self.registered:
            raise RuntimeError(f"{self.number} is not registered")
        env = self._build(from_number, recipient, text)
        port = self.fabric.free_port(self.address)
        self.fabric.bind(self.address, port, self._on_datagram)
        self.stats["raw_sent"] += 1
        pending = _Pending("message", recipient, from_number, port, victim, self.raw_440_policy)
        self._pending[env.header("Call-ID")] = pending
        self.fabric.send_datagram(self.address, port, self.ims_address, sip.SIP_PORT, sip.serialize(env))

    def run_attack_script(self, script: AttackScript, start: Optional[int] = None, spoof: bool = True) -> None:
        """Schedule a pipelined spoofing run; outcomes land in ``self.outcomes``."""
        t = self.fabric.now if start is None else start
        for victim in script.victim_numbers:
            self.outcomes.setdefault(victim, [])
            sender = victim if spoof else self.number
            first = script.message_template.format(victim=victim)
            self.fabric.call_at(t, self.attacker_send_raw, sender, script.target_code, first, victim)
            if script.second_message is not None:
                text, delay = script.second_message
                self.fabric.call_at(t + delay, self.attacker_send_raw, sender, script.target_code, text.format(victim=victim), victim)
            t += script.inter_message_delay

    def send_loop(self, recipient: str, text: str, start: int, until: int, period: int, raw: bool) -> None:
        """One send every ``period`` ms in ``[start, until)``."""
        send = (lambda: self.attacker_send_raw(self.number, recipient, text)) if raw else (lambda: self.send_sms_app(recipient, text))
        t = start
        while t < until:
            self.fabric.call_at(t, send)
            t += period

    # -- receiving -----------------------------------------------------------

    def _on_datagram(self, d: Datagram) -> None:
        try:
            env = sip.parse(d.payload)
        except sip.SipParseError:
            return
        if env.is_request:
            self._on_incoming(env)
            return
        pending = self._pending.pop(env.header("Call-ID") or "", None)
        if pending is None:
            return
        if pending.kind == "register":
            self._on_register_response(env)
            return
        if env.code == 440:
            self.handle_440(env, pending)
            return
        if pending.victim is not None:
            self.outcomes.setdefault(pending.victim, []).append(env.code)
        if pending.port != sip.SIP_PORT:
            self.fabric.unbind(self.address, pending.port)

    def _on_incoming(self, env: sip.SipEnvelope) -> None:
        if env.header(REPORT_HEADER) is not None:
            self.stats["delivery_reports"] += 1
            return
        if not self.inbox_enabled:
            return
        try:
            pdu = decode_pdu(env.body)
        except CodecError:
            return
        sender = pdu.orig.digits if pdu.orig is not None else sip.tel_number(env.header("From")) or ""
        self.inbox.append(InboxEntry(self.fabric.now, sender, pdu.text))

    def _on_register_response(self, env: sip.SipEnvelope) -> None:
        if env.code == 401:
            challenge = sip.parse_challenge(env)
            uri = sip.register_uri(self.profile)
            response = sip.compute_digest_response(self.profile.auth_key, challenge, "REGISTER", uri)
            auth = sip.authorization_header(self.number, challenge, uri, response)
            self._pending_nonce = challenge.nonce
            self._dispatch(sip.build_register(self.profile, auth), sip.SIP_PORT, _Pending("register"))
        elif env.code == 200:
            if env.header(sip.IPSEC_TAG_HEADER) is not None:
                key = derive_session_key(self.profile.auth_key, self._pending_nonce)
                if not sip.verify_integrity_tag(key, env):
                    self._log("REGISTER 200 failed integrity check")
                    return
                self.session_key = key
            self.registered = True
            self._log("registered")
        else:
            self.registered = False
            self._log(f"REGISTER failed with {env.code}")

    def handle_440(self, env: sip.SipEnvelope, pending: _Pending) -> None:
        """Ask the approval policy, then answer the challenge or abandon."""
        prompt = env.header(sip.APPROVAL_HEADER) or ""
        policy = pending.policy or self.approval_policy
        self.stats["prompts"] += 1
        answer = policy.decide(prompt)
        if not answer:
            self.stats["abandoned_440"] += 1
            self._log(f"abandoned held message to {pending.recipient}")
            if pending.victim is not None:
                self.outcomes.setdefault(pending.victim, []).append(440)
            if pending.port != sip.SIP_PORT:
                self.fabric.unbind(self.address, pending.port)
            return
        try:
            challenge = sip.parse_challenge(env)
        except sip.SipParseError:
            self.stats["abandoned_440"] += 1
            return
        self.stats["approvals_440"] += 1
        uri = f"tel:{pending.recipient};phone-context={self.profile.phone_context}"
        response = sip.compute_digest_response(self.profile.auth_key, challenge, "MESSAGE", uri)
        answer_env = sip.build_message_request(self.profile, pending.from_number, pending.recipient, b"")
        answer_env.headers.insert(len(answer_env.headers) - 1, ("Authorization", sip.authorization_header(self.number, challenge, uri, response)))
        if pending.port == sip.SIP_PORT:
            self._dispatch(answer_env, pending.port, pending)
        else:
            self._pending[answer_env.header("Call-ID")] = pending
            self.fabric.send_datagram(self.address, pending.port, self.ims_address, sip.SIP_PORT, sip.serialize(answer_env))
