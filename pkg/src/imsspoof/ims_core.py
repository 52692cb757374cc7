"""The carrier side: IMS registrar and MESSAGE router, SMSC, aggregators.

A MESSAGE arriving on the IMS SIP port goes through, in order: source
admission, integrity (IPsec-3GPP only), origin check, rate limit, approval
triggers, then routing to an aggregator (short codes), the local SMSC, or a
peer carrier over the interconnect port.
"""

from __future__ import annotations

import enum
import hashlib
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from . import sip_codec as sip
from .netsim import Datagram, EventLog, Fabric
from .sms_codec import CodecError, SmsPdu, decode_pdu, encode_pdu, make_deliver

INTERCONNECT_PORT = 5070
AGGREGATOR_PORT = 2775
SMSC_RETRY_MS = 60_000
SMSC_MAX_AGE_MS = 24 * 3600 * 1000
SMSC_QUEUE_LIMIT = 10_000
THIRTY_MINUTES = 30 * 60 * 1000

ORIGIN_AUDIT_HEADER = "X-Origin-Audit"
CARRIER_HEADER = "X-Carrier"
REPORT_HEADER = "X-Delivery-Report"


class ConfigError(ValueError):
    pass


class SecurityMode(enum.Enum):
    DIGEST_ONLY = "DIGEST_ONLY"
    IPSEC_3GPP = "IPSEC_3GPP"


# Options a carrier could pick that this simulator refuses to model.
REJECTED_SECURITY_MODES = {"TLS", "IPSEC_IKE", "IPSEC_MAIN"}


class OriginCheck(enum.Enum):
    NONE = "NONE"
    CARRIER_SCOPE = "CARRIER_SCOPE"
    STRICT = "STRICT"


class Verdict(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class RateLimit:
    max_msgs: int
    window: int = THIRTY_MINUTES


@dataclass(frozen=True)
class ApprovalTriggers:
    premium_codes: frozenset[str] = frozenset()
    burst_threshold: Optional[int] = None
    burst_window: int = THIRTY_MINUTES


@dataclass
class CarrierPolicy:
    carrier_id: str
    security_mode: SecurityMode = SecurityMode.DIGEST_ONLY
    origin_check: OriginCheck = OriginCheck.CARRIER_SCOPE
    rate_limit: Optional[RateLimit] = None
    approval_triggers: ApprovalTriggers = field(default_factory=ApprovalTriggers)
    legacy_cs: bool = False

    @property
    def effective_origin_check(self) -> OriginCheck:
        # a CS-domain submission has no originating address to forge
        return OriginCheck.STRICT if self.legacy_cs else self.origin_check

    @classmethod
    def from_config(cls, block: dict) -> "CarrierPolicy":
        try:
            carrier_id = block["carrier_id"]
        except KeyError:
            raise ConfigError("carrier block needs carrier_id") from None
        mode = str(block.get("security_mode", "DIGEST_ONLY")).upper()
        if mode in REJECTED_SECURITY_MODES:
            raise ConfigError(f"security mode {mode} is not modeled; use DIGEST_ONLY or IPSEC_3GPP")
        try:
            security_mode = SecurityMode(mode)
            origin = OriginCheck(str(block.get("origin_check", "CARRIER_SCOPE")).upper())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        rate = block.get("rate_limit")
        rate_limit = None
        if rate is not None:
            try:
                if isinstance(rate, dict):
                    rate_limit = RateLimit(int(rate["max_msgs"]), int(rate.get("window", THIRTY_MINUTES)))
                else:
                    rate_limit = RateLimit(int(rate[0]), int(rate[1]))
            except (KeyError, IndexError, TypeError, ValueError):
                raise ConfigError(f"rate_limit must be {{max_msgs, window}} or [max_msgs, window], got {rate!r}") from None
        threshold = block.get("burst_threshold")
        codes = block.get("premium_codes", ())
        try:
            if isinstance(codes, str):
                raise TypeError
            triggers = ApprovalTriggers(frozenset(str(c) for c in codes), int(threshold) if threshold is not None else None)
        except (TypeError, ValueError):
            raise ConfigError("premium_codes must be a list of short codes and burst_threshold an integer") from None
        return cls(
            carrier_id=carrier_id,
            security_mode=security_mode,
            origin_check=origin,
            rate_limit=rate_limit,
            approval_triggers=triggers,
            legacy_cs=bool(block.get("legacy_cs", False)),
        )


class RegState(enum.Enum):
    CHALLENGED = "challenged"
    REGISTERED = "registered"


@dataclass
class Registration:
    identity: str
    endpoint: tuple[str, int]
    state: RegState = RegState.CHALLENGED
    nonce_issued: Optional[str] = None
    session_key: Optional[bytes] = None


@dataclass
class HeldMessage:
    identity: str
    from_number: str
    recipient: str
    pdu: SmsPdu
    request_uri: str
    challenge: sip.DigestChallenge
    src: tuple[str, int]


def derive_session_key(auth_key: bytes, nonce: str) -> bytes:
    return hashlib.sha256(auth_key + nonce.encode("ascii")).digest()


class SlidingWindowLimiter:
    """At most ``max_events`` per key in any half-open window ``(now - window, now]``."""

    def __init__(self, max_events: Optional[int], window: int) -> None:
        self.max_events = max_events
        self.window = window
        self._log: dict[str, deque[int]] = {}

    def _trim(self, key: str, now: int) -> deque[int]:
        q = self._log.setdefault(key, deque())
        while q and q[0] <= now - self.window:
            q.popleft()
        return q

    def count(self, key: str, now: int) -> int:
        return len(self._trim(key, now))

    def allow(self, key: str, now: int) -> bool:
        q = self._trim(key, now)
        if self.max_events is not None and len(q) >= self.max_events:
            return False
        q.append(now)
        return True


def origin_check(from_number: str, auth_identity: str, policy: CarrierPolicy, carrier_numbers) -> Verdict:
    mode = policy.effective_origin_check
    if mode is OriginCheck.NONE:
        return Verdict.ACCEPT
    if mode is OriginCheck.CARRIER_SCOPE:
        return Verdict.ACCEPT if from_number in carrier_numbers else Verdict.REJECT
    return Verdict.ACCEPT if from_number == auth_identity else Verdict.REJECT


@dataclass
class _CodeEntry:
    aggregator_id: str
    provider_id: str
    keywords: tuple[str, ...] = ()


class ShortCodeRegistry:
    """Short code -> aggregator and provider(s); shared codes dispatch on text."""

    def __init__(self) -> None:
        self._codes: dict[str, list[_CodeEntry]] = {}
        self._last: dict[tuple[str, str], str] = {}

    def register(self, code: str, aggregator_id: str, provider_id: str, keywords=()) -> None:
        if not (code.isdigit() and 5 <= len(code) <= 6):
            raise ConfigError(f"short code {code!r} must be 5-6 digits")
        entries = self._codes.setdefault(code, [])
        if entries and entries[0].aggregator_id != aggregator_id:
            raise ConfigError(f"short code {code} already served by aggregator {entries[0].aggregator_id}")
        entries.append(_CodeEntry(aggregator_id, provider_id, tuple(k.upper() for k in keywords)))

    def is_short_code(self, number: str) -> bool:
        return number in self._codes

    def aggregator_for(self, code: str) -> str:
        return self._codes[code][0].aggregator_id

    def providers_for(self, code: str) -> list[str]:
        return [e.provider_id for e in self._codes.get(code, [])]

    def resolve(self, code: str, text: str, phone: str) -> Optional[str]:
        entries = self._codes.get(code)
        if not entries:
            return None
        if len(entries) == 1:
            return entries[0].provider_id
        head = text.strip().upper()
        for entry in entries:
            if any(head.startswith(k) for k in entry.keywords):
                self._last[(code, phone)] = entry.provider_id
                return entry.provider_id
        return self._last.get((code, phone), entries[0].provider_id)


class Directory:
    """Who is where: carriers, aggregators, providers, short codes."""

    def __init__(self, events: Optional[EventLog] = None) -> None:
        self.carriers: dict[str, "ImsCore"] = {}
        self.aggregators: dict[str, "Aggregator"] = {}
        self.provider_addresses: dict[str, str] = {}
        self.short_codes = ShortCodeRegistry()
        self.events = events or EventLog()

    def carrier_of(self, number: str) -> Optional["ImsCore"]:
        for carrier in self.carriers.values():
            if number in carrier.subscribers:
                return carrier
        return None

    def carrier_by_address(self, addr: str) -> Optional["ImsCore"]:
        for carrier in self.carriers.values():
            if carrier.address == addr:
                return carrier
        return None


def mt_envelope(from_number: str, to_number: str, body: bytes, call_id: str, extra=()) -> sip.SipEnvelope:
    headers = [
        ("From", sip.tel_uri(from_number)),
        ("To", sip.tel_uri(to_number)),
        ("Call-ID", call_id),
        ("CSeq", "1 MESSAGE"),
        ("Content-Type", "application/vnd.3gpp2.sms"),
        *extra,
        ("Content-Length", str(len(body))),
    ]
    return sip.SipEnvelope(method="MESSAGE", request_uri=f"tel:{to_number}", headers=headers, body=body)


class ImsCore:
    """One carrier's IMS: registrar, MESSAGE acceptance pipeline, SMSC."""

    def __init__(
        self,
        fabric: Fabric,
        policy: CarrierPolicy,
        address: str,
        directory: Directory,
        seed: int = 0,
        phone_context: str = sip.DEFAULT_PHONE_CONTEXT,
    ) -> None:
        self.fabric = fabric
        self.policy = policy
        self.address = address
        self.directory = directory
        self.events = directory.events
        self.phone_context = phone_context
        self.realm = f"ims.{policy.carrier_id.lower()}"
        self.rng = random.Random(f"{seed}/ims/{policy.carrier_id}")
        self.subscribers: dict[str, bytes] = {}
        self.registrations: dict[str, Registration] = {}
        self._by_addr: dict[str, str] = {}
        self.holds: dict[str, HeldMessage] = {}
        rl = policy.rate_limit
        self.limiter = SlidingWindowLimiter(rl.max_msgs if rl else None, rl.window if rl else THIRTY_MINUTES)
        self.burst = SlidingWindowLimiter(None, policy.approval_triggers.burst_window)
        self.smsc_queue = 0
        self.deliveries: list[tuple[int, str, str, int]] = []
        self.mutate_mt: Optional[Callable[[bytes], bytes]] = None
        self._mt_counter = 0
        directory.carriers[policy.carrier_id] = self
        fabric.bind(address, sip.SIP_PORT, self._on_sip)
        fabric.bind(address, INTERCONNECT_PORT, self._on_interconnect)

    @property
    def carrier_id(self) -> str:
        return self.policy.carrier_id

    def add_subscriber(self, number: str, auth_key: bytes) -> None:
        if number in self.subscribers:
            raise ConfigError(f"number {number} already assigned in {self.carrier_id}")
        self.subscribers[number] = auth_key

    def registered_identity(self, addr: str) -> Optional[str]:
        identity = self._by_addr.get(addr)
        if identity is None:
            return None
        reg = self.registrations.get(identity)
        return identity if reg is not None and reg.state is RegState.REGISTERED else None

    def _count(self, name: str) -> None:
        self.events.count(f"{self.carrier_id}.{name}")

    def _log(self, text: str) -> None:
        self.events.record(self.fabric.now, f"ims[{self.carrier_id}]", text)

    def _nonce(self) -> str:
        return f"{self.rng.getrandbits(128):032x}"

    # -- network entry points ------------------------------------------------

    def _reply(self, d: Datagram, env: sip.SipEnvelope) -> None:
        self.fabric.send_datagram(self.address, sip.SIP_PORT, d.src_addr, d.src_port, sip.serialize(env))

    def _on_sip(self, d: Datagram) -> None:
        try:
            env = sip.parse(d.payload)
        except sip.SipParseError as exc:
            self._count("malformed")
            self._log(f"malformed SIP from {d.src_addr}: {exc}")
            self._reply(d, sip.build_response(400))
            return
        if not env.is_request:
            return
        src = (d.src_addr, d.src_port)
        if env.method == "REGISTER":
            resp = self.handle_register(env, src)
        elif env.method == "MESSAGE":
            resp = self.handle_message(env, src, self.fabric.now)
        else:
            resp = sip.build_response(400)
        call_id = env.header("Call-ID")
        if call_id is not None and resp.header("Call-ID") is None:
            resp.headers.insert(0, ("Call-ID", call_id))
        self._reply(d, resp)

    def _on_interconnect(self, d: Datagram) -> None:
        trusted = self.directory.carrier_by_address(d.src_addr) is not None or any(
            a.address == d.src_addr for a in self.directory.aggregators.values()
        )
        if not trusted:
            self._count("interconnect_untrusted")
            return
        try:
            env = sip.parse(d.payload)
            pdu = decode_pdu(env.body)
        except (sip.SipParseError, CodecError) as exc:
            self._count("malformed")
            self._log(f"malformed interconnect message: {exc}")
            return
        recipient = sip.tel_number(env.header("To"))
        if recipient not in self.subscribers:
            self._count("unknown_recipient")
            return
        self.smsc_forward(pdu, recipient, self.fabric.now)

    # -- registration --------------------------------------------------------

    def handle_register(self, env: sip.SipEnvelope, src: tuple[str, int]) -> sip.SipEnvelope:
        identity = sip.tel_number(env.header("From"))
        if identity is None or identity not in self.subscribers:
            self._count("register_unknown")
            return sip.build_response(403)
        auth = sip.parse_authorization(env)
        if auth is None:
            nonce = self._nonce()
            reg = self.registrations.get(identity)
            if reg is None or reg.state is not RegState.REGISTERED:
                self.registrations[identity] = Registration(identity, src, RegState.CHALLENGED, nonce)
            else:
                reg.nonce_issued = nonce
            self._log(f"REGISTER {identity} challenged")
            return sip.build_response(401, sip.DigestChallenge(self.realm, nonce))
        reg = self.registrations.get(identity)
        if reg is None or reg.nonce_issued is None or auth.get("nonce") != reg.nonce_issued:
            self._count("register_stale")
            return sip.build_response(403)
        challenge = sip.DigestChallenge(self.realm, reg.nonce_issued)
        reg.nonce_issued = None
        expected = sip.compute_digest_response(self.subscribers[identity], challenge, "REGISTER", env.request_uri)
        if auth.get("response") != expected:
            self._count("register_failed")
            self._log(f"REGISTER {identity} bad digest")
            return sip.build_response(403)
        old = reg.endpoint[0]
        if self._by_addr.get(old) == identity:
            del self._by_addr[old]
        reg.endpoint = src
        reg.state = RegState.REGISTERED
        self._by_addr[src[0]] = identity
        self._count("registered")
        self._log(f"REGISTER {identity} ok from {src[0]}")
        headers = [("Contact", f"<sip:[{src[0]}]:{src[1]}>")]
        if env.header("Call-ID") is not None:
            headers.insert(0, ("Call-ID", env.header("Call-ID")))
        resp = sip.build_response(200, headers=headers)
        if self.policy.security_mode is SecurityMode.IPSEC_3GPP:
            reg.session_key = derive_session_key(self.subscribers[identity], challenge.nonce)
            resp = sip.attach_integrity_tag(reg.session_key, resp)
        return resp

    # -- MESSAGE pipeline ----------------------------------------------------

    def handle_message(self, env: sip.SipEnvelope, src: tuple[str, int], now: int) -> sip.SipEnvelope:
        self._count("message_received")
        identity = self.registered_identity(src[0])
        if identity is None:
            self._count("rejected_unregistered")
            self._log(f"MESSAGE from unregistered {src[0]} dropped")
            return sip.build_response(403)
        reg = self.registrations[identity]
        if self.policy.security_mode is SecurityMode.IPSEC_3GPP:
            if reg.session_key is None or not sip.verify_integrity_tag(reg.session_key, env):
                self._count("rejected_integrity")
                self._log(f"MESSAGE from {identity} failed integrity check")
                return sip.build_response(403)
        auth = sip.parse_authorization(env)
        if auth is not None:
            return self._answer_hold(auth, identity, now)
        recipient = sip.tel_number(env.request_uri) or sip.tel_number(env.header("To"))
        from_number = sip.tel_number(env.header("From"))
        if recipient is None or from_number is None:
            self._count("rejected_malformed")
            return sip.build_response(400)
        try:
            pdu = decode_pdu(env.body)
        except CodecError as exc:
            self._count("rejected_malformed")
            self._log(f"MESSAGE from {identity} has bad PDU: {exc}")
            return sip.build_response(400)
        if origin_check(from_number, identity, self.policy, self.subscribers) is Verdict.REJECT:
            self._count("rejected_origin")
            self._log(f"policy reject: From {from_number} sent by {identity}")
            return sip.build_response(403)
        if not self.limiter.allow(identity, now):
            self._count("rejected_rate")
            return sip.build_response(429)
        triggers = self.policy.approval_triggers
        self.burst.allow(identity, now)
        burst = self.burst.count(identity, now)
        premium = recipient in triggers.premium_codes
        bursting = triggers.burst_threshold is not None and burst > triggers.burst_threshold
        if premium or bursting:
            challenge = sip.DigestChallenge(self.realm, self._nonce())
            self.holds[challenge.nonce] = HeldMessage(identity, from_number, recipient, pdu, env.request_uri, challenge, src)
            self._count("held_for_approval")
            if premium:
                text = f"Sending a message to {recipient} will produce extra cost. Do you agree with it?"
            else:
                text = f"You have sent {burst} messages in a short time. Do you want to send another one?"
            self._log(f"440 to {identity} for message to {recipient}")
            return sip.build_response(440, challenge, text)
        return self._route(identity, from_number, recipient, pdu, now, src)

    def _answer_hold(self, auth: dict[str, str], identity: str, now: int) -> sip.SipEnvelope:
        held = self.holds.get(auth.get("nonce", ""))
        if held is None or held.identity != identity:
            self._count("approval_stale")
            return sip.build_response(403)
        expected = sip.compute_digest_response(self.subscribers[identity], held.challenge, "MESSAGE", held.request_uri)
        if auth.get("response") != expected:
            self._count("approval_failed")
            return sip.build_response(403)
        del self.holds[held.challenge.nonce]
        self._count("approval_answered")
        return self._route(identity, held.from_number, held.recipient, held.pdu, now, held.src)

    def _route(self, identity: str, from_number: str, recipient: str, pdu: SmsPdu, now: int, src) -> sip.SipEnvelope:
        mt = make_deliver(from_number, recipient, pdu.bearer.user_data, pdu.bearer.message_id)
        audit = "match" if from_number == identity else "mismatch"
        if self.directory.short_codes.is_short_code(recipient):
            agg = self.directory.aggregators[self.directory.short_codes.aggregator_for(recipient)]
            self._mt_counter += 1
            env = mt_envelope(
                from_number,
                recipient,
                encode_pdu(mt),
                f"mt{self._mt_counter:08x}@{self.address}",
                [(CARRIER_HEADER, self.carrier_id), (ORIGIN_AUDIT_HEADER, audit)],
            )
            self.fabric.send_datagram(self.address, INTERCONNECT_PORT, agg.address, AGGREGATOR_PORT, sip.serialize(env))
            self._count("routed_short_code")
            self._log(f"route {from_number} -> short code {recipient} via {agg.aggregator_id} (origin {audit})")
        elif recipient in self.subscribers:
            self.smsc_forward(mt, recipient, now, report_to=src)
            self._count("routed_local")
        else:
            peer = self.directory.carrier_of(recipient)
            if peer is None:
                self._count("rejected_unknown_recipient")
                return sip.build_response(404)
            self._mt_counter += 1
            env = mt_envelope(from_number, recipient, encode_pdu(mt), f"mt{self._mt_counter:08x}@{self.address}")
            self.fabric.send_datagram(self.address, INTERCONNECT_PORT, peer.address, INTERCONNECT_PORT, sip.serialize(env))
            self._count("routed_interconnect")
        return sip.build_response(200)

    # -- SMSC ----------------------------------------------------------------

    def smsc_forward(self, pdu: SmsPdu, recipient: str, now: int, report_to: Optional[tuple[str, int]] = None) -> None:
        """Store-and-forward ``pdu`` to ``recipient``, retrying every 60 s for 24 h."""
        if self.smsc_queue >= SMSC_QUEUE_LIMIT:
            self._count("smsc_overflow")
            return
        self.smsc_queue += 1
        self._attempt(pdu, recipient, now, 0, report_to)

    def _attempt(self, pdu: SmsPdu, recipient: str, first: int, tries: int, report_to) -> None:
        now = self.fabric.now
        reg = self.registrations.get(recipient)
        if reg is not None and reg.state is RegState.REGISTERED and self.fabric.is_bound(*reg.endpoint):
            self.smsc_queue -= 1
            self._mt_counter += 1
            body = encode_pdu(pdu)
            if self.mutate_mt is not None:
                body = self.mutate_mt(body)
            env = mt_envelope(pdu.orig.digits if pdu.orig else "", recipient, body, f"mt{self._mt_counter:08x}@{self.address}")
            self.fabric.send_datagram(self.address, sip.SIP_PORT, reg.endpoint[0], reg.endpoint[1], sip.serialize(env))
            self.deliveries.append((now, recipient, pdu.orig.digits if pdu.orig else "", tries))
            self._count("smsc_delivered")
            if report_to is not None:
                report = mt_envelope(recipient, recipient, b"", f"dr{self._mt_counter:08x}@{self.address}", [(REPORT_HEADER, "delivered")])
                self.fabric.send_datagram(self.address, sip.SIP_PORT, report_to[0], report_to[1], sip.serialize(report))
            return
        if now - first + SMSC_RETRY_MS > SMSC_MAX_AGE_MS:
            self.smsc_queue -= 1
            self._count("smsc_expired")
            return
        self._count("smsc_retry")
        self.fabric.call_later(SMSC_RETRY_MS, self._attempt, pdu, recipient, first, tries + 1, report_to)


class Aggregator:
    """Relays short-code traffic between carriers and providers."""

    def __init__(
        self,
        fabric: Fabric,
        aggregator_id: str,
        address: str,
        directory: Directory,
        carrier_only: bool = True,
        mutate: Optional[Callable[[bytes], bytes]] = None,
    ) -> None:
        self.fabric = fabric
        self.aggregator_id = aggregator_id
        self.address = address
        self.directory = directory
        self.carrier_only = carrier_only
        self.mutate = mutate
        directory.aggregators[aggregator_id] = self
        fabric.bind(address, AGGREGATOR_PORT, self._on_datagram)

    def _count(self, name: str) -> None:
        self.directory.events.count(f"aggregator.{name}")

    def _on_datagram(self, d: Datagram) -> None:
        try:
            env = sip.parse(d.payload)
            pdu = decode_pdu(env.body)
        except (sip.SipParseError, CodecError):
            self._count("malformed")
            return
        if d.src_addr in self.directory.provider_addresses.values():
            self._to_subscriber(env)
            return
        if self.directory.carrier_by_address(d.src_addr) is None and self.carrier_only:
            self._count("dropped_non_carrier")
            self.directory.events.record(self.fabric.now, f"aggregator[{self.aggregator_id}]", f"dropped non-carrier traffic from {d.src_addr}")
            return
        code = sip.tel_number(env.header("To"))
        phone = sip.tel_number(env.header("From")) or ""
        provider_id = self.directory.short_codes.resolve(code, pdu.text, phone) if code else None
        if provider_id is None:
            self._count("unknown_code")
            return
        body = env.body
        if self.mutate is not None:
            body = self.mutate(body)
            env = replace(env, headers=[(k, str(len(body)) if k == "Content-Length" else v) for k, v in env.headers], body=body)
        self._count("forwarded_to_provider")
        self.fabric.send_datagram(self.address, AGGREGATOR_PORT, self.directory.provider_addresses[provider_id], AGGREGATOR_PORT, sip.serialize(env))

    def _to_subscriber(self, env: sip.SipEnvelope) -> None:
        phone = sip.tel_number(env.header("To"))
        carrier = self.directory.carrier_of(phone) if phone else None
        if carrier is None:
            self._count("unknown_subscriber")
            return
        self._count("forwarded_to_carrier")
        self.fabric.send_datagram(self.address, AGGREGATOR_PORT, carrier.address, INTERCONNECT_PORT, sip.serialize(env))
