"""Mobile services behind short codes.

Holds the enrollment automata, the attacker-reachability search over them,
the runtime services (social network, donations, notification lists), the
network endpoint that hosts a service, and the threat classifier.
"""

from __future__ import annotations

import enum
import json
import random
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Optional, Union

from . import sip_codec as sip
from .defenses import AuthStatus, MacConfig, SecretStore, SequenceState, verify_and_strip
from .ims_core import AGGREGATOR_PORT, ORIGIN_AUDIT_HEADER, Directory, mt_envelope
from .netsim import Datagram, Fabric
from .sms_codec import CodecError, UserData, decode_pdu, encode_pdu, make_deliver

FIXED_REPLIES = frozenset({"YES", "Y", "GO"})
AUTH_CODE_TTL = 10 * 60 * 1000
DONATION_AMOUNT = 10
DONATION_WINDOW = 15 * 60 * 1000
NOTIFY_PERIOD = 24 * 3600 * 1000
SEARCH_DEPTH = 6


class ServiceModel(enum.Enum):
    REQ_RESP = "ReqResp"
    SUB_NOTIF = "SubNotif"


class EnrollmentKind(enum.Enum):
    ONE_STEP = "OneStep"
    TWO_STEP = "TwoStep"
    THREE_STEP_SIMPLE = "ThreeStepSimple"
    FOUR_STEP_SIMPLE = "FourStepSimple"
    FOUR_STEP_AUTH_CODE = "FourStepAuthCode"
    ALWAYS_ON = "AlwaysOn"


class RuntimeAuth(enum.Enum):
    NONE = "None"
    WEAK_CONFIRM = "WeakConfirm"
    MAC = "Mac"


class Threat(enum.Enum):
    ACCOUNT_ABUSE = "AccountAbuse"
    DONATION = "Donation"
    SPAM_LAWSUIT = "SpamLawsuit"
    NONE = "None"


@dataclass(frozen=True)
class ProviderRecord:
    name: str
    short_code: str
    industry: str = ""
    service_model: ServiceModel = ServiceModel.SUB_NOTIF
    enrollment_kind: EnrollmentKind = EnrollmentKind.ONE_STEP
    money_involved: bool = False
    runtime_auth: RuntimeAuth = RuntimeAuth.NONE
    enroll_web: bool = False
    enroll_text: bool = True
    non_query_ops: bool = False
    recurring_notifications: bool = True
    keywords: tuple[str, ...] = ()
    ground_truth_threat: Optional[Threat] = None
    exception: bool = False
    source: str = "table"
    rank: str = ""
    operations: str = ""
    assumed_fields: tuple[str, ...] = ()
    note: str = ""

    def __post_init__(self) -> None:
        if self.enrollment_kind is EnrollmentKind.ALWAYS_ON and not self.money_involved:
            raise ValueError(f"{self.name}: always-on enrollment is only used by money services")

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderRecord":
        gt = d.get("ground_truth_threat")
        return cls(
            name=d["name"],
            short_code=str(d["short_code"]),
            industry=d.get("industry", ""),
            service_model=ServiceModel(d.get("service_model", "SubNotif")),
            enrollment_kind=EnrollmentKind(d.get("enrollment_kind", "OneStep")),
            money_involved=bool(d.get("money_involved", False)),
            runtime_auth=RuntimeAuth(d.get("runtime_auth", "None")),
            enroll_web=bool(d.get("enroll_web", False)),
            enroll_text=bool(d.get("enroll_text", True)),
            non_query_ops=bool(d.get("non_query_ops", False)),
            recurring_notifications=bool(d.get("recurring_notifications", True)),
            keywords=tuple(d.get("keywords", ())),
            ground_truth_threat=Threat(gt) if gt is not None else None,
            exception=bool(d.get("exception", False)),
            source=d.get("source", "table"),
            rank=str(d.get("rank", "")),
            operations=d.get("operations", ""),
            assumed_fields=tuple(d.get("assumed_fields", ())),
            note=d.get("note", ""),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, enum.Enum):
                out[key] = value.value
            elif isinstance(value, tuple):
                out[key] = list(value)
        return out


def load_catalog(path: Optional[str] = None) -> list[ProviderRecord]:
    if path is None:
        text = resources.files("imsspoof").joinpath("data/services.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return [ProviderRecord.from_dict(d) for d in json.loads(text)]


# -- enrollment automata ------------------------------------------------------


class EState(enum.Enum):
    IDLE = "Idle"
    WEB_PENDING = "WebPending"
    PENDING_CONFIRM_REPLY = "PendingConfirmReply"
    PENDING_AUTH_CODE = "PendingAuthCode"
    SUBSCRIBED = "Subscribed"


@dataclass(frozen=True)
class Enrollment:
    state: EState = EState.IDLE
    code: Optional[str] = None
    expiry: Optional[int] = None
    issued: int = 0
    last_event_time: int = 0


@dataclass(frozen=True)
class WebSignup:
    pass


@dataclass(frozen=True)
class WebLoginSignup:
    """Web form behind a login; the attacker can only log into their own account."""


@dataclass(frozen=True)
class TextJoin:
    pass


@dataclass(frozen=True)
class TextFixedReply:
    token: str = "YES"


@dataclass(frozen=True)
class WebCodeEntry:
    code: str


Event = Union[WebSignup, WebLoginSignup, TextJoin, TextFixedReply, WebCodeEntry]
EVENT_TYPES = (WebSignup, WebLoginSignup, TextJoin, TextFixedReply, WebCodeEntry)


def auth_code(seed, n: int) -> str:
    """The n-th one-time code a provider seeded with ``seed`` hands out."""
    return f"{random.Random(f'{seed}/authcode/{n}').randrange(10**6):06d}"


def is_fixed_reply(text: str) -> bool:
    return text.strip().upper() in FIXED_REPLIES


def enrollment_advance(
    kind: EnrollmentKind, st: Enrollment, event: Event, now: int, seed=0
) -> tuple[Enrollment, Optional[str]]:
    """One step of the enrollment machine for ``kind``; returns (state, text to send)."""
    if kind is EnrollmentKind.ALWAYS_ON:
        return Enrollment(EState.SUBSCRIBED, last_event_time=now), None
    if st.state is EState.SUBSCRIBED:
        return replace(st, last_event_time=now), None
    nxt = replace(st, last_event_time=now)
    subscribed = Enrollment(EState.SUBSCRIBED, issued=st.issued, last_event_time=now)
    confirm = "Reply YES to confirm your subscription."
    welcome = "You are subscribed. Msg&data rates may apply."
    if isinstance(event, TextFixedReply):
        if st.state is EState.PENDING_CONFIRM_REPLY and is_fixed_reply(event.token):
            return subscribed, welcome
        return nxt, None
    if kind is EnrollmentKind.ONE_STEP:
        if isinstance(event, (WebSignup, TextJoin)):
            return subscribed, welcome
    elif kind is EnrollmentKind.TWO_STEP:
        if isinstance(event, WebLoginSignup):
            return subscribed, welcome
    elif kind is EnrollmentKind.THREE_STEP_SIMPLE:
        if isinstance(event, (WebSignup, TextJoin)):
            return replace(nxt, state=EState.PENDING_CONFIRM_REPLY), confirm
    elif kind is EnrollmentKind.FOUR_STEP_SIMPLE:
        if isinstance(event, (WebLoginSignup, TextJoin)):
            return replace(nxt, state=EState.PENDING_CONFIRM_REPLY), confirm
    elif kind is EnrollmentKind.FOUR_STEP_AUTH_CODE:
        if isinstance(event, (WebLoginSignup, TextJoin)):
            code = auth_code(seed, st.issued)
            pending = Enrollment(EState.PENDING_AUTH_CODE, code, now + AUTH_CODE_TTL, st.issued + 1, now)
            return pending, f"Your confirmation code is {code}"
        if isinstance(event, WebCodeEntry) and st.state is EState.PENDING_AUTH_CODE:
            if event.code == st.code and st.expiry is not None and now <= st.expiry:
                return subscribed, welcome
    return nxt, None


# -- attacker reachability ----------------------------------------------------


@dataclass(frozen=True)
class Wait:
    ms: int = 11 * 60 * 1000


@dataclass(frozen=True)
class InboxCodeEntry:
    """Enter whatever code the victim's inbox last received (needs inbox access)."""


ATTACK_GUESSES = ("000000", "123456", "999999")
STEP_MS = 5_000


def attacker_alphabet(enroll_web: bool = True, enroll_text: bool = True, inbox: bool = False) -> list:
    """What a spoofing attacker can do without the victim's phone."""
    alphabet: list = [TextFixedReply("YES"), Wait()]
    if enroll_text:
        alphabet.append(TextJoin())
    if enroll_web:
        alphabet += [WebSignup(), WebLoginSignup()] + [WebCodeEntry(g) for g in ATTACK_GUESSES]
    if inbox:
        alphabet.append(InboxCodeEntry())
    return alphabet


def _apply(kind, st: Enrollment, now: int, action, seed) -> tuple[Enrollment, int]:
    if isinstance(action, Wait):
        return st, now + action.ms
    if isinstance(action, InboxCodeEntry):
        action = WebCodeEntry(st.code or "")
    new, _ = enrollment_advance(kind, st, action, now, seed)
    return new, now + STEP_MS


def _key(st: Enrollment, now: int):
    return (st.state, st.code, None if st.expiry is None else st.expiry - now, st.issued)


def search_spoof_enrollment(kind: EnrollmentKind, seed=0, depth: int = SEARCH_DEPTH, alphabet=None) -> Optional[list]:
    """Breadth-first search for an action sequence reaching Subscribed.

    Returns the shortest such sequence, or None if none exists within
    ``depth`` actions. States that differ only in absolute time are merged.
    """
    alphabet = attacker_alphabet() if alphabet is None else alphabet
    start = Enrollment()
    if kind is EnrollmentKind.ALWAYS_ON:
        return []
    queue = deque([(start, 0, [])])
    seen = {_key(start, 0)}
    while queue:
        st, now, path = queue.popleft()
        if len(path) >= depth:
            continue
        for action in alphabet:
            new, t = _apply(kind, st, now, action, seed)
            if new.state is EState.SUBSCRIBED:
                return path + [action]
            k = _key(new, t)
            if k not in seen:
                seen.add(k)
                queue.append((new, t, path + [action]))
    return None


def enumerate_sequences(kind: EnrollmentKind, seed=0, length: int = 4, alphabet=None) -> bool:
    """Brute-force cross-check of the search: try every sequence up to ``length``."""
    alphabet = attacker_alphabet() if alphabet is None else alphabet

    def walk(st, now, left):
        if st.state is EState.SUBSCRIBED:
            return True
        if left == 0:
            return False
        return any(walk(*_apply(kind, st, now, a, seed), left - 1) for a in alphabet)

    return walk(Enrollment(), 0, length)


def spoof_enrollable(record: ProviderRecord, seed=0) -> bool:
    alphabet = attacker_alphabet(record.enroll_web, record.enroll_text)
    return search_spoof_enrollment(record.enrollment_kind, seed, alphabet=alphabet) is not None


def classify_threat(record: ProviderRecord) -> Threat:
    """Threat a text-spoofing attacker poses to ``record``, rules tried in order."""
    weak = record.runtime_auth in (RuntimeAuth.NONE, RuntimeAuth.WEAK_CONFIRM)
    if record.money_involved and record.enrollment_kind is EnrollmentKind.ALWAYS_ON and weak:
        return Threat.DONATION
    if record.service_model is ServiceModel.REQ_RESP and record.runtime_auth is RuntimeAuth.NONE and record.non_query_ops:
        return Threat.ACCOUNT_ABUSE
    if record.service_model is ServiceModel.SUB_NOTIF and record.recurring_notifications and spoof_enrollable(record):
        return Threat.SPAM_LAWSUIT
    return Threat.NONE


# -- runtime services ---------------------------------------------------------


@dataclass
class Activity:
    t: int
    action: str
    detail: str
    origin_phone: str


@dataclass
class SocialAccount:
    account_id: str
    display_name: str
    bound_phone: Optional[str] = None
    friends: set = field(default_factory=set)
    likes: set = field(default_factory=set)
    following: set = field(default_factory=set)
    status_log: list = field(default_factory=list)
    pending_friend_requests: set = field(default_factory=set)
    activity: list = field(default_factory=list)
    awaiting_binding: bool = False


class SocialService:
    """Account-bound text commands: once a phone is bound, its texts act on the account."""

    TRIGGER = "F"

    def __init__(self, record: ProviderRecord, seed=0) -> None:
        self.record = record
        self.seed = seed
        self.accounts: dict[str, SocialAccount] = {}
        self.by_phone: dict[str, str] = {}
        self.page_likes: dict[str, int] = {}
        self._codes: dict[str, tuple[str, int]] = {}
        self._issued = 0
        self.log: list[str] = []

    def create_account(self, account_id: str, display_name: Optional[str] = None) -> SocialAccount:
        acct = SocialAccount(account_id, display_name or account_id)
        self.accounts[account_id] = acct
        return acct

    def bind(self, account_id: str, phone: str) -> None:
        """Record a finished binding (used to seed scenarios)."""
        acct = self.accounts[account_id]
        if phone in self.by_phone or acct.bound_phone is not None:
            raise ValueError(f"{phone} or {account_id} already bound")
        acct.bound_phone = phone
        acct.awaiting_binding = False
        self.by_phone[phone] = account_id

    def web_request_binding(self, account_id: str) -> None:
        self.accounts[account_id].awaiting_binding = True

    def web_code_entry(self, account_id: str, code: str, now: int) -> bool:
        acct = self.accounts[account_id]
        if not acct.awaiting_binding:
            return False
        for phone, (issued, expiry) in list(self._codes.items()):
            if issued == code:
                del self._codes[phone]
                if now > expiry or phone in self.by_phone:
                    return False
                self.bind(account_id, phone)
                return True
        return False

    def _account(self, key: str) -> Optional[SocialAccount]:
        if key in self.by_phone:
            return self.accounts[self.by_phone[key]]
        for acct in self.accounts.values():
            if acct.display_name.lower() == key.lower() or acct.account_id == key:
                return acct
        return None

    def handle_text(self, phone: str, text: str, now: int) -> list[str]:
        body = text.strip()
        if body.upper() == self.TRIGGER:
            code = auth_code(f"{self.seed}/{self.record.name}", self._issued)
            self._issued += 1
            self._codes[phone] = (code, now + AUTH_CODE_TTL)
            return [f"Your confirmation code is {code}"]
        account_id = self.by_phone.get(phone)
        if account_id is None:
            return ["This phone is not linked to an account."]
        acct = self.accounts[account_id]
        word, _, rest = body.partition(" ")
        verb = word.upper()
        rest = rest.strip()
        if verb == "ADD" and rest:
            target = self._account(rest)
            if target is None or target is acct:
                return [f"Could not find {rest}."]
            target.pending_friend_requests.add(acct.account_id)
            acct.activity.append(Activity(now, "friend_request", target.account_id, phone))
            return [f"Friend request sent to {target.display_name}."]
        if verb == "LIKE" and rest:
            if rest not in acct.likes:
                acct.likes.add(rest)
                self.page_likes[rest] = self.page_likes.get(rest, 0) + 1
            acct.activity.append(Activity(now, "like", rest, phone))
            return [f"You like {rest}."]
        if verb in ("SUBSCRIBE", "UNSUBSCRIBE") and rest:
            if verb == "SUBSCRIBE":
                acct.following.add(rest)
            else:
                acct.following.discard(rest)
            acct.activity.append(Activity(now, verb.lower(), rest, phone))
            return []
        acct.status_log.append((now, body, phone))
        acct.activity.append(Activity(now, "status", body, phone))
        return []


@dataclass
class Charge:
    t: int
    keyword: str
    amount: int
    spoofed: bool = False


class DonationService:
    """Always-on giving: keyword, then a fixed confirmation, then a bill charge."""

    def __init__(self, record: ProviderRecord, amount: int = DONATION_AMOUNT, window: int = DONATION_WINDOW, confirm_tokens=("YES",)) -> None:
        self.record = record
        self.amount = amount
        self.window = window
        self.confirm_tokens = {t.upper() for t in confirm_tokens}
        self.pending: dict[str, tuple[str, int, int]] = {}
        self.charges: dict[str, list[Charge]] = {}

    @property
    def total(self) -> int:
        return sum(c.amount for cs in self.charges.values() for c in cs)

    @property
    def charge_count(self) -> int:
        return sum(len(cs) for cs in self.charges.values())

    def handle_text(self, phone: str, text: str, now: int, spoofed: bool = False) -> list[str]:
        body = text.strip().upper()
        if body in self.confirm_tokens:
            pending = self.pending.pop(phone, None)
            if pending is None or now > pending[2]:
                return []
            keyword, amount, _ = pending
            self.charges.setdefault(phone, []).append(Charge(now, keyword, amount, spoofed))
            return [f"Thank you! {amount} will be added to your phone bill."]
        for keyword in self.record.keywords:
            if body.startswith(keyword.upper()):
                self.pending[phone] = (keyword, self.amount, now + self.window)
                return [f"Reply YES to confirm your {self.amount} donation to {self.record.name}."]
        return [f"Text {self.record.keywords[0] if self.record.keywords else 'GIVE'} to give. Reply STOP to end."]


class SubscriptionService:
    """Notification list whose sign-up follows the record's enrollment machine."""

    def __init__(self, record: ProviderRecord, seed=0) -> None:
        self.record = record
        self.seed = f"{seed}/{record.name}"
        self.enrollments: dict[str, Enrollment] = {}
        self.spoof_touched: set[str] = set()
        self.unsolicited: dict[str, int] = {}
        self.sent = 0

    def subscribed(self, phone: str) -> bool:
        if self.record.enrollment_kind is EnrollmentKind.ALWAYS_ON:
            return True
        st = self.enrollments.get(phone)
        return st is not None and st.state is EState.SUBSCRIBED

    @property
    def subscribers(self) -> list[str]:
        return sorted(p for p, st in self.enrollments.items() if st.state is EState.SUBSCRIBED)

    def advance(self, phone: str, event: Event, now: int, spoofed: bool = False) -> Optional[str]:
        if spoofed:
            self.spoof_touched.add(phone)
        st, text = enrollment_advance(self.record.enrollment_kind, self.enrollments.get(phone, Enrollment()), event, now, self.seed)
        self.enrollments[phone] = st
        return text

    def text_event(self, text: str) -> Optional[Event]:
        body = text.strip().upper()
        if body in FIXED_REPLIES:
            return TextFixedReply(body)
        if any(body.startswith(k.upper()) for k in self.record.keywords):
            return TextJoin()
        return None

    def handle_text(self, phone: str, text: str, now: int, spoofed: bool = False) -> list[str]:
        if text.strip().upper() == "STOP":
            self.enrollments.pop(phone, None)
            return ["You are unsubscribed."]
        event = self.text_event(text)
        if event is None:
            return []
        reply = self.advance(phone, event, now, spoofed)
        return [reply] if reply else []

    def notification_tick(self, now: int) -> list[tuple[str, str]]:
        out = []
        for phone in self.subscribers:
            out.append((phone, f"{self.record.name}: this week's deals are here!"))
            if phone in self.spoof_touched:
                self.unsolicited[phone] = self.unsolicited.get(phone, 0) + 1
        self.sent += len(out)
        return out


def make_service(record: ProviderRecord, seed=0):
    if record.enrollment_kind is EnrollmentKind.ALWAYS_ON:
        return DonationService(record)
    if record.service_model is ServiceModel.REQ_RESP and record.non_query_ops and record.enrollment_kind is EnrollmentKind.FOUR_STEP_AUTH_CODE and record.runtime_auth is not RuntimeAuth.WEAK_CONFIRM:
        return SocialService(record, seed)
    return SubscriptionService(record, seed)


class ProviderEndpoint:
    """Network face of one provider: receives texts from its aggregator, replies through it."""

    def __init__(
        self,
        fabric: Fabric,
        record: ProviderRecord,
        address: str,
        directory: Directory,
        aggregator_id: str,
        seed=0,
        secrets: Optional[SecretStore] = None,
        mac: Optional[MacConfig] = None,
        notify_period: int = NOTIFY_PERIOD,
    ) -> None:
        self.fabric = fabric
        self.record = record
        self.address = address
        self.directory = directory
        self.events = directory.events
        self.secrets = secrets or SecretStore()
        self.mac = mac or MacConfig()
        self.service = make_service(record, seed)
        self.seq_states: dict[str, SequenceState] = {}
        self.notify_period = notify_period
        self.received = 0
        self.auth_counts = {s.value: 0 for s in AuthStatus}
        directory.provider_addresses[record.name] = address
        directory.short_codes.register(record.short_code, aggregator_id, record.name, record.keywords)
        self.aggregator_id = aggregator_id
        fabric.bind(address, AGGREGATOR_PORT, self._on_datagram)

    @property
    def name(self) -> str:
        return self.record.name

    def _log(self, text: str) -> None:
        self.events.record(self.fabric.now, f"provider[{self.name}]", text)

    def _count(self, name: str) -> None:
        self.events.count(f"provider.{self.name}.{name}")

    def _on_datagram(self, d: Datagram) -> None:
        try:
            env = sip.parse(d.payload)
            pdu = decode_pdu(env.body)
        except (sip.SipParseError, CodecError):
            self._count("malformed")
            return
        self.received += 1
        phone = pdu.orig.digits if pdu.orig is not None else sip.tel_number(env.header("From")) or ""
        # the audit header is measurement only: services never branch on it
        spoofed = env.header(ORIGIN_AUDIT_HEADER) == "mismatch"
        if self.record.runtime_auth is RuntimeAuth.MAC:
            secret = self.secrets.get(phone, self.name)
            state = self.seq_states.setdefault(phone, SequenceState())
            payload, status = verify_and_strip(pdu, secret.key if secret else None, self.mac, state, phone)
            self.auth_counts[status.value] += 1
            self._count(f"auth_{status.value}")
            if status is not AuthStatus.VERIFIED:
                self._log(f"discarded {status.value} text from {phone}")
                return
            text = payload.decode("latin-1")
        else:
            text = pdu.text
        self.deliver_text(phone, text, spoofed)

    def deliver_text(self, phone: str, text: str, spoofed: bool = False) -> None:
        now = self.fabric.now
        svc = self.service
        if isinstance(svc, SocialService):
            replies = svc.handle_text(phone, text, now)
            self._log(f"text from {phone}: {text!r}")
        else:
            before = svc.charge_count if isinstance(svc, DonationService) else None
            replies = svc.handle_text(phone, text, now, spoofed)
            if before is not None and svc.charge_count > before:
                self._count("charges")
                self._log(f"charged {phone} {svc.amount} units")
        self._count("texts_handled")
        for reply in replies:
            self.send_text(phone, reply)

    def send_text(self, phone: str, text: str) -> None:
        pdu = make_deliver(self.record.short_code, phone, UserData(text))
        env = mt_envelope(self.record.short_code, phone, encode_pdu(pdu), f"p{self.fabric.sent:08x}@{self.address}")
        agg = self.directory.aggregators[self.aggregator_id]
        self.fabric.send_datagram(self.address, AGGREGATOR_PORT, agg.address, AGGREGATOR_PORT, sip.serialize(env))
        self._count("texts_sent")

    def web_event(self, phone: str, event: Event) -> None:
        """A sign-up submitted on the provider's web site."""
        if not isinstance(self.service, SubscriptionService):
            raise TypeError(f"{self.name} has no web enrollment form")
        reply = self.service.advance(phone, event, self.fabric.now)
        if reply:
            self.send_text(phone, reply)

    def start_notifications(self, until: int) -> None:
        if not isinstance(self.service, SubscriptionService):
            return
        t = self.fabric.now + self.notify_period
        while t <= until:
            self.fabric.call_at(t, self._tick)
            t += self.notify_period

    def _tick(self) -> None:
        for phone, text in self.service.notification_tick(self.fabric.now):
            self.send_text(phone, text)
