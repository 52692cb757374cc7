"""Per-message MAC runtime authentication and secret-code provisioning."""

from __future__ import annotations

import enum
import hmac
import random
import string
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

from .sms_codec import MAX_OCTETS, Encoding, SmsPdu, UserData

SEQUENCE_WINDOW = 5


class MacError(ValueError):
    pass


class ProvisioningError(ValueError):
    pass


class Channel(enum.Enum):
    SECURE_WEB = "secure_web"
    TEXT = "text"


class AuthStatus(enum.Enum):
    VERIFIED = "verified"
    UNAUTHENTICATED = "unauthenticated"
    INVALID = "invalid"


@dataclass(frozen=True)
class MacConfig:
    tag_length: int = 20
    hash_label: str = "sha256"

    def __post_init__(self) -> None:
        if not 16 <= self.tag_length <= 20:
            raise MacError(f"tag_length must be 16..20 bytes, got {self.tag_length}")

    @property
    def overhead(self) -> float:
        return self.tag_length / MAX_OCTETS


@dataclass(frozen=True)
class SecretCode:
    code: str

    @property
    def key(self) -> bytes:
        return self.code.encode("ascii")


def _draw_code(rng: random.Random) -> str:
    return "".join(rng.choice(string.ascii_uppercase) for _ in range(3)) + "".join(
        rng.choice(string.digits) for _ in range(3)
    )


@dataclass
class SecretStore:
    """Secrets shared between phones and providers, keyed by (phone, provider)."""

    rng: random.Random = field(default_factory=lambda: random.Random(0))
    secrets: dict[tuple[str, str], SecretCode] = field(default_factory=dict)

    def provision_secret(self, phone: str, provider: str, channel: Channel) -> SecretCode:
        if channel is not Channel.SECURE_WEB:
            raise ProvisioningError(f"secret codes may only be provisioned over a secure web session, not {channel.value}")
        taken = {c.code for pair, c in self.secrets.items() if pair != (phone, provider)}
        code = _draw_code(self.rng)
        while code in taken:
            code = _draw_code(self.rng)
        secret = SecretCode(code)
        self.secrets[(phone, provider)] = secret
        return secret

    def get(self, phone: str, provider: str) -> Optional[SecretCode]:
        return self.secrets.get((phone, provider))


def canonical_bytes(orig_number: str, dest: str, sequence_number: int, payload: bytes) -> bytes:
    out = b""
    for part in (orig_number.encode("ascii"), dest.encode("ascii"), struct.pack(">I", sequence_number), payload):
        out += struct.pack(">H", len(part)) + part
    return out


def parse_canonical(data: bytes) -> tuple[str, str, int, bytes]:
    parts = []
    i = 0
    while i < len(data):
        (n,) = struct.unpack_from(">H", data, i)
        parts.append(data[i + 2 : i + 2 + n])
        i += 2 + n
    if len(parts) != 4 or len(parts[2]) != 4:
        raise MacError("malformed canonical form")
    return parts[0].decode("ascii"), parts[1].decode("ascii"), struct.unpack(">I", parts[2])[0], parts[3]


def compute_tag(secret: bytes, canonical: bytes, cfg: MacConfig) -> bytes:
    return hmac.new(secret, canonical, cfg.hash_label).digest()[: cfg.tag_length]


def payload_bytes(ud: UserData) -> bytes:
    return ud.payload if isinstance(ud.payload, bytes) else ud.payload.encode("ascii")


def attach_tag(pdu: SmsPdu, tag: bytes) -> SmsPdu:
    payload = payload_bytes(pdu.bearer.user_data) + tag
    if len(payload) > MAX_OCTETS:
        raise MacError(f"payload plus tag is {len(payload)} bytes, limit {MAX_OCTETS}")
    return replace(pdu, bearer=replace(pdu.bearer, user_data=UserData(payload, Encoding.OCTET)))


def sign_pdu(pdu: SmsPdu, orig_number: str, sequence_number: int, secret: bytes, cfg: MacConfig) -> SmsPdu:
    """Tag ``pdu`` as sent by ``orig_number`` to its destination."""
    body = payload_bytes(pdu.bearer.user_data)
    canon = canonical_bytes(orig_number, pdu.dest.digits, sequence_number, body)
    return attach_tag(pdu, compute_tag(secret, canon, cfg))


@dataclass
class SequenceState:
    expected: int = 0


def verify_and_strip(
    pdu: SmsPdu,
    secret: Optional[bytes],
    cfg: MacConfig,
    seq_state: SequenceState,
    orig_number: Optional[str] = None,
) -> tuple[bytes, AuthStatus]:
    """Check the trailing tag of ``pdu``.

    Without a secret the payload is returned untouched as UNAUTHENTICATED.
    Otherwise the tag is recomputed for each sequence number in the receive
    window; a match advances the window past it.
    """
    payload = payload_bytes(pdu.bearer.user_data)
    if secret is None:
        return payload, AuthStatus.UNAUTHENTICATED
    if orig_number is None:
        if pdu.orig is None:
            return payload, AuthStatus.INVALID
        orig_number = pdu.orig.digits
    if len(payload) < cfg.tag_length:
        return payload, AuthStatus.INVALID
    body, tag = payload[: -cfg.tag_length], payload[-cfg.tag_length :]
    for seq in range(seq_state.expected, seq_state.expected + SEQUENCE_WINDOW):
        canon = canonical_bytes(orig_number, pdu.dest.digits, seq, body)
        if hmac.compare_digest(compute_tag(secret, canon, cfg), tag):
            seq_state.expected = seq + 1
            return body, AuthStatus.VERIFIED
    return payload, AuthStatus.INVALID
