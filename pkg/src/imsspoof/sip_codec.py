"""SIP subset used for SMS over IMS: REGISTER, MESSAGE and a handful of responses.

Text framing follows RFC 3261 (start-line, ``Name: value`` headers, CRLF,
blank line, raw body). The digest computation is a simplified single hash
and does not interoperate with real IMS cores.
"""

from __future__ import annotations

import hashlib
import hmac
import re
from dataclasses import dataclass, field
from typing import Optional

SIP_VERSION = "SIP/2.0"
SIP_PORT = 5060
DEFAULT_PHONE_CONTEXT = "vzims.com"
DEFAULT_HASH = "sha256"
CRLF = "\r\n"

REASONS = {
    200: "OK",
    400: "Bad Request",
    401: "Unauthorized",
    403: "Forbidden",
    404: "Not Found",
    429: "Too Many Requests",
    440: "User Approval Required",
}

APPROVAL_HEADER = "X-Approval-Info"
IPSEC_TAG_HEADER = "X-Sim-Ipsec-Tag"

# Values of these do not influence acceptance; every device sends the same ones.
FILLER_HEADERS = {
    "Max-Forwards": "70",
    "CSeq": "1 MESSAGE",
    "Content-Type": "application/vnd.3gpp2.sms",
    "Allow": "MESSAGE",
    "Request-Disposition": "no-fork",
    "Accept-Contact": "*;+g.3gpp.smsip",
    "User-Agent": "SM-G900V-UserAgent/KOT49H",
}

# Header order of a built MESSAGE; Request-Line is line 1, so header i is line i + 2.
MESSAGE_HEADER_ORDER = (
    "Max-Forwards",
    "Route",
    "Via",
    "CSeq",
    "From",
    "To",
    "Content-Type",
    "P-Preferred-Identity",
    "Allow",
    "Request-Disposition",
    "Accept-Contact",
    "User-Agent",
    "Call-ID",
    "Content-Length",
)
PROFILE_HEADERS = ("Route", "Via", "From", "To", "P-Preferred-Identity", "Call-ID", "Content-Length")

_TEL_RE = re.compile(r"tel:([0-9*#+]+)")
_PARAM_RE = re.compile(r'(\w+)=(?:"([^"]*)"|([^\s,]+))')


class SipError(ValueError):
    """Invalid arguments to a SIP builder."""


class SipParseError(ValueError):
    """Bytes that are not a well-framed SIP message."""


@dataclass
class DeviceProfile:
    phone_number: str
    device_address: str
    ims_server_address: str
    auth_key: bytes
    call_id_counter: int = 0
    phone_context: str = DEFAULT_PHONE_CONTEXT

    def next_call_id(self) -> str:
        self.call_id_counter += 1
        return f"{self.call_id_counter:08x}@{self.device_address}"


@dataclass(frozen=True)
class DigestChallenge:
    realm: str
    nonce: str
    algorithm_label: str = DEFAULT_HASH


@dataclass
class SipEnvelope:
    method: Optional[str] = None
    request_uri: Optional[str] = None
    code: Optional[int] = None
    reason: Optional[str] = None
    headers: list[tuple[str, str]] = field(default_factory=list)
    body: bytes = b""

    @property
    def is_request(self) -> bool:
        return self.method is not None

    @property
    def start_line(self) -> str:
        if self.is_request:
            return f"{self.method} {self.request_uri} {SIP_VERSION}"
        return f"{SIP_VERSION} {self.code} {self.reason}"

    def header(self, name: str, default: Optional[str] = None) -> Optional[str]:
        lname = name.lower()
        for key, value in self.headers:
            if key.lower() == lname:
                return value
        return default

    def header_names(self) -> list[str]:
        return [k for k, _ in self.headers]

    def set_header(self, name: str, value: str) -> None:
        lname = name.lower()
        for i, (key, _) in enumerate(self.headers):
            if key.lower() == lname:
                self.headers[i] = (key, value)
                return
        self.headers.insert(max(len(self.headers) - 1, 0), (name, value))

    def without_header(self, name: str) -> "SipEnvelope":
        lname = name.lower()
        return SipEnvelope(
            self.method,
            self.request_uri,
            self.code,
            self.reason,
            [(k, v) for k, v in self.headers if k.lower() != lname],
            self.body,
        )

    def copy(self) -> "SipEnvelope":
        return SipEnvelope(self.method, self.request_uri, self.code, self.reason, list(self.headers), self.body)


def tel_uri(number: str) -> str:
    return f"<tel:{number}>"


def tel_number(value: Optional[str]) -> Optional[str]:
    """Phone number inside a header or URI carrying a tel: URI."""
    if value is None:
        return None
    m = _TEL_RE.search(value)
    return m.group(1) if m else None


def _finish(headers: list[tuple[str, str]], body: bytes) -> list[tuple[str, str]]:
    return headers + [("Content-Length", str(len(body)))]


def build_message_request(profile: DeviceProfile, from_number: str, recipient: str, body: bytes) -> SipEnvelope:
    """Build a MESSAGE carrying an SMS PDU.

    ``from_number`` is taken verbatim; nothing here checks it against the
    profile, so a caller can place any number in From and P-Preferred-Identity.
    """
    if not recipient:
        raise SipError("recipient must not be empty")
    if not from_number:
        raise SipError("from_number must not be empty")
    values = dict(FILLER_HEADERS)
    values.update(
        {
            "Route": f"<sip:[{profile.ims_server_address}]:{SIP_PORT};lr>",
            "Via": f"SIP/2.0/UDP [{profile.device_address}]:{SIP_PORT};branch=z9hG4bK{profile.call_id_counter + 1:06d}",
            "From": tel_uri(from_number),
            "To": tel_uri(recipient),
            "P-Preferred-Identity": tel_uri(from_number),
            "Call-ID": profile.next_call_id(),
        }
    )
    headers = [(name, values[name]) for name in MESSAGE_HEADER_ORDER[:-1]]
    return SipEnvelope(
        method="MESSAGE",
        request_uri=f"tel:{recipient};phone-context={profile.phone_context}",
        headers=_finish(headers, body),
        body=body,
    )


def build_register(profile: DeviceProfile, authorization: Optional[str] = None) -> SipEnvelope:
    headers = [
        ("Via", f"SIP/2.0/UDP [{profile.device_address}]:{SIP_PORT};branch=z9hG4bKreg{profile.call_id_counter + 1:06d}"),
        ("Max-Forwards", "70"),
        ("From", tel_uri(profile.phone_number)),
        ("To", tel_uri(profile.phone_number)),
        ("Contact", f"<sip:[{profile.device_address}]:{SIP_PORT}>"),
        ("CSeq", "1 REGISTER"),
        ("Call-ID", profile.next_call_id()),
    ]
    if authorization is not None:
        headers.append(("Authorization", authorization))
    return SipEnvelope(method="REGISTER", request_uri=register_uri(profile), headers=_finish(headers, b""))


def register_uri(profile: DeviceProfile) -> str:
    return f"sip:[{profile.ims_server_address}]"


def validate_message_headers(env: SipEnvelope) -> list[str]:
    """Problems with a built MESSAGE; empty when it has every profile and filler header."""
    problems = []
    if env.method != "MESSAGE":
        problems.append(f"not a MESSAGE request: {env.start_line}")
    if tel_number(env.request_uri) is None:
        problems.append("Request-Line has no tel: recipient")
    names = env.header_names()
    for name in PROFILE_HEADERS:
        if names.count(name) != 1:
            problems.append(f"header {name} appears {names.count(name)} times")
    for name, value in FILLER_HEADERS.items():
        if env.header(name) != value:
            problems.append(f"filler header {name} is {env.header(name)!r}, expected {value!r}")
    extra = set(names) - set(MESSAGE_HEADER_ORDER) - {IPSEC_TAG_HEADER, "Authorization"}
    if extra:
        problems.append(f"unexpected headers {sorted(extra)}")
    if env.header("Content-Length") != str(len(env.body)):
        problems.append("Content-Length does not match body")
    for name in ("From", "To", "P-Preferred-Identity"):
        if tel_number(env.header(name)) is None:
            problems.append(f"{name} has no tel: URI")
    return problems


def serialize(env: SipEnvelope) -> bytes:
    if env.header("Content-Length") != str(len(env.body)):
        raise SipError("Content-Length does not match body length")
    lines = [env.start_line] + [f"{k}: {v}" for k, v in env.headers]
    return (CRLF.join(lines) + CRLF + CRLF).encode("utf-8") + env.body


def parse(data: bytes) -> SipEnvelope:
    head, sep, body = data.partition(b"\r\n\r\n")
    if not sep:
        raise SipParseError("missing blank line after headers")
    try:
        text = head.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SipParseError(f"header block is not UTF-8: {exc}") from None
    lines = text.split(CRLF)
    start = lines[0].split(" ", 2)
    if len(start) != 3:
        raise SipParseError(f"malformed start-line {lines[0]!r}")
    if start[0] == SIP_VERSION:
        if not start[1].isdigit() or len(start[1]) != 3:
            raise SipParseError(f"malformed status code in {lines[0]!r}")
        env = SipEnvelope(code=int(start[1]), reason=start[2])
    else:
        if start[2] != SIP_VERSION or not start[0].isalpha() or not start[0].isupper():
            raise SipParseError(f"malformed request line {lines[0]!r}")
        env = SipEnvelope(method=start[0], request_uri=start[1])
    for lineno, line in enumerate(lines[1:], start=2):
        name, colon, value = line.partition(":")
        if not colon or not name or name != name.strip():
            raise SipParseError(f"malformed header on line {lineno}: {line!r}")
        env.headers.append((name, value.strip()))
    declared = env.header("Content-Length")
    if declared is None or not declared.isdigit():
        raise SipParseError("missing or invalid Content-Length")
    if int(declared) != len(body):
        raise SipParseError(f"Content-Length {declared} but body has {len(body)} bytes")
    env.body = body
    return env


def compute_digest_response(auth_key: bytes, challenge: DigestChallenge, method: str, request_uri: str) -> str:
    material = f"{auth_key.hex()}:{challenge.nonce}:{method}:{request_uri}"
    return hashlib.new(challenge.algorithm_label, material.encode("utf-8")).hexdigest()


def www_authenticate(challenge: DigestChallenge) -> str:
    return f'Digest realm="{challenge.realm}", nonce="{challenge.nonce}", algorithm={challenge.algorithm_label}'


def parse_challenge(env: SipEnvelope) -> DigestChallenge:
    value = env.header("WWW-Authenticate")
    if value is None:
        raise SipParseError("no WWW-Authenticate header")
    params = _digest_params(value)
    try:
        return DigestChallenge(params["realm"], params["nonce"], params.get("algorithm", DEFAULT_HASH))
    except KeyError as exc:
        raise SipParseError(f"challenge missing {exc}") from None


def authorization_header(number: str, challenge: DigestChallenge, uri: str, response: str) -> str:
    return (
        f'Digest username="{number}", realm="{challenge.realm}", nonce="{challenge.nonce}", '
        f'uri="{uri}", response="{response}", algorithm={challenge.algorithm_label}'
    )


def parse_authorization(env: SipEnvelope) -> Optional[dict[str, str]]:
    value = env.header("Authorization")
    return None if value is None else _digest_params(value)


def _digest_params(value: str) -> dict[str, str]:
    if not value.startswith("Digest "):
        raise SipParseError(f"not a Digest header: {value!r}")
    return {m.group(1): m.group(2) if m.group(2) is not None else m.group(3) for m in _PARAM_RE.finditer(value[7:])}


def build_response(
    code: int,
    challenge: Optional[DigestChallenge] = None,
    display_text: Optional[str] = None,
    headers: Optional[list[tuple[str, str]]] = None,
) -> SipEnvelope:
    """Build a response; 401 and 440 carry a digest challenge, 440 also a prompt."""
    if code not in REASONS:
        raise SipError(f"unsupported response code {code}")
    if code in (401, 440) and challenge is None:
        raise SipError(f"response {code} needs a challenge")
    if code == 440 and not display_text:
        raise SipError("response 440 needs display text")
    hdrs = list(headers or [])
    if challenge is not None:
        hdrs.append(("WWW-Authenticate", www_authenticate(challenge)))
    if code == 440:
        hdrs.append((APPROVAL_HEADER, display_text))
    return SipEnvelope(code=code, reason=REASONS[code], headers=_finish(hdrs, b""))


def integrity_tag(session_key: bytes, env: SipEnvelope, hash_label: str = DEFAULT_HASH) -> str:
    """Keyed tag over the envelope minus any existing tag header."""
    data = serialize(env.without_header(IPSEC_TAG_HEADER))
    return hmac.new(session_key, data, hash_label).hexdigest()


def attach_integrity_tag(session_key: bytes, env: SipEnvelope, hash_label: str = DEFAULT_HASH) -> SipEnvelope:
    tagged = env.without_header(IPSEC_TAG_HEADER)
    tagged.headers.insert(len(tagged.headers) - 1, (IPSEC_TAG_HEADER, integrity_tag(session_key, env, hash_label)))
    return tagged


def verify_integrity_tag(session_key: bytes, env: SipEnvelope, hash_label: str = DEFAULT_HASH) -> bool:
    tag = env.header(IPSEC_TAG_HEADER)
    if tag is None:
        return False
    return hmac.compare_digest(tag, integrity_tag(session_key, env, hash_label))
