"""IS-637-A point-to-point SMS codec (transport + teleservice layers).

Only the subset carried inside a SIP MESSAGE body is supported:
teleservice id, originating/destination address and bearer data holding a
message identifier and user data. Parameter records are framed as
``param_id (1 byte) | length (1 byte) | value``; bearer data nests
subparameter records with the same framing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

TELESERVICE_CMT = 4098

MSG_TYPE_POINT_TO_POINT = 0x00

PARAM_TELESERVICE = 0x00
PARAM_ORIG_ADDRESS = 0x02
PARAM_DEST_ADDRESS = 0x04
PARAM_BEARER_DATA = 0x08

SUBPARAM_MESSAGE_ID = 0x00
SUBPARAM_USER_DATA = 0x01

MAX_DIGITS = 20
MAX_OCTETS = 140
MAX_SEPTETS = 160

_DTMF_ENCODE = {str(d): d for d in range(1, 10)}
_DTMF_ENCODE.update({"0": 10, "*": 11, "#": 12})
_DTMF_DECODE = {v: k for k, v in _DTMF_ENCODE.items()}


class CodecError(ValueError):
    """Raised for any malformed or unencodable SMS structure."""


class DigitMode(enum.IntEnum):
    DTMF = 0
    EIGHT_BIT = 1


class NumberMode(enum.IntEnum):
    ANSI_T1_607 = 0
    DATA_NETWORK = 1


class Encoding(enum.IntEnum):
    OCTET = 0
    SEVEN_BIT_ASCII = 2


class MessageKind(enum.IntEnum):
    DELIVER = 1
    SUBMIT = 2


@dataclass(frozen=True)
class SmsAddress:
    digits: str
    digit_mode: DigitMode = DigitMode.DTMF
    number_mode: NumberMode = NumberMode.ANSI_T1_607

    def validate(self) -> None:
        if not 1 <= len(self.digits) <= MAX_DIGITS:
            raise CodecError(f"address must have 1..{MAX_DIGITS} digits, got {len(self.digits)}")
        for ch in self.digits:
            if self.digit_mode is DigitMode.DTMF:
                if ch not in _DTMF_ENCODE:
                    raise CodecError(f"invalid DTMF digit {ch!r}")
            elif not 0x20 <= ord(ch) <= 0x7E:
                raise CodecError(f"invalid address character {ch!r}")


@dataclass(frozen=True)
class UserData:
    payload: str | bytes = ""
    encoding: Encoding = Encoding.SEVEN_BIT_ASCII

    @property
    def num_fields(self) -> int:
        return len(self.payload)

    @property
    def text(self) -> str:
        if isinstance(self.payload, bytes):
            return self.payload.decode("latin-1")
        return self.payload

    def validate(self) -> None:
        if self.encoding is Encoding.SEVEN_BIT_ASCII:
            if not isinstance(self.payload, str):
                raise CodecError("7-bit ASCII user data must be a str")
            if len(self.payload) > MAX_SEPTETS:
                raise CodecError(f"7-bit user data longer than {MAX_SEPTETS} characters")
            for ch in self.payload:
                if not 0x20 <= ord(ch) <= 0x7E:
                    raise CodecError(f"non-printable character {ch!r} in 7-bit user data")
        elif self.encoding is Encoding.OCTET:
            if not isinstance(self.payload, bytes):
                raise CodecError("octet user data must be bytes")
            if len(self.payload) > MAX_OCTETS:
                raise CodecError(f"octet user data longer than {MAX_OCTETS} bytes")
        else:
            raise CodecError(f"unsupported encoding {self.encoding!r}")


@dataclass(frozen=True)
class BearerData:
    message_id: int
    user_data: UserData
    message_kind: MessageKind = MessageKind.SUBMIT

    def validate(self) -> None:
        if not 0 <= self.message_id <= 0xFFFF:
            raise CodecError(f"message id {self.message_id} does not fit in 16 bits")
        self.user_data.validate()


@dataclass(frozen=True)
class SmsPdu:
    dest: Optional[SmsAddress]
    bearer: BearerData
    orig: Optional[SmsAddress] = None
    teleservice_id: int = TELESERVICE_CMT

    @property
    def text(self) -> str:
        return self.bearer.user_data.text


class _BitWriter:
    def __init__(self) -> None:
        self._value = 0
        self._nbits = 0

    def write(self, value: int, width: int) -> None:
        if value < 0 or value >> width:
            raise CodecError(f"value {value} does not fit in {width} bits")
        self._value = (self._value << width) | value
        self._nbits += width

    def to_bytes(self) -> bytes:
        pad = -self._nbits % 8
        total = self._nbits + pad
        return (self._value << pad).to_bytes(total // 8, "big")


class _BitReader:
    def __init__(self, data: bytes) -> None:
        self._value = int.from_bytes(data, "big")
        self._total = len(data) * 8
        self._pos = 0

    @property
    def remaining(self) -> int:
        return self._total - self._pos

    def read(self, width: int) -> int:
        if width > self.remaining:
            raise CodecError(f"truncated field: need {width} bits, have {self.remaining}")
        self._pos += width
        return (self._value >> (self._total - self._pos)) & ((1 << width) - 1)

    def check_padding(self) -> None:
        if self.remaining >= 8:
            raise CodecError(f"{self.remaining} trailing bits after last field")
        if self.read(self.remaining) != 0:
            raise CodecError("nonzero pad bits")


def encode_address(addr: SmsAddress) -> bytes:
    addr.validate()
    w = _BitWriter()
    w.write(int(addr.digit_mode), 1)
    w.write(int(addr.number_mode), 1)
    w.write(len(addr.digits), 8)
    for ch in addr.digits:
        if addr.digit_mode is DigitMode.DTMF:
            w.write(_DTMF_ENCODE[ch], 4)
        else:
            w.write(ord(ch), 8)
    return w.to_bytes()


def decode_address(data: bytes) -> SmsAddress:
    r = _BitReader(data)
    digit_mode = DigitMode(r.read(1))
    number_mode = NumberMode(r.read(1))
    count = r.read(8)
    if not 1 <= count <= MAX_DIGITS:
        raise CodecError(f"address digit count {count} out of range")
    digits = []
    for _ in range(count):
        if digit_mode is DigitMode.DTMF:
            code = r.read(4)
            if code not in _DTMF_DECODE:
                raise CodecError(f"invalid DTMF code {code}")
            digits.append(_DTMF_DECODE[code])
        else:
            digits.append(chr(r.read(8)))
    r.check_padding()
    addr = SmsAddress("".join(digits), digit_mode, number_mode)
    addr.validate()
    return addr


def pack_user_data(ud: UserData) -> bytes:
    ud.validate()
    w = _BitWriter()
    w.write(int(ud.encoding), 5)
    w.write(ud.num_fields, 8)
    if ud.encoding is Encoding.SEVEN_BIT_ASCII:
        for ch in ud.payload:
            w.write(ord(ch), 7)
    else:
        for b in ud.payload:
            w.write(b, 8)
    return w.to_bytes()


def unpack_user_data(data: bytes) -> UserData:
    r = _BitReader(data)
    try:
        encoding = Encoding(r.read(5))
    except ValueError as exc:
        raise CodecError(str(exc)) from None
    count = r.read(8)
    width = 7 if encoding is Encoding.SEVEN_BIT_ASCII else 8
    if count * width > r.remaining:
        raise CodecError(f"num_fields {count} needs {count * width} bits, only {r.remaining} available")
    values = [r.read(width) for _ in range(count)]
    r.check_padding()
    if encoding is Encoding.SEVEN_BIT_ASCII:
        ud = UserData("".join(map(chr, values)), encoding)
    else:
        ud = UserData(bytes(values), encoding)
    ud.validate()
    return ud


def user_data_size(num_chars: int) -> int:
    """Bytes occupied by a 7-bit user data subparameter value of ``num_chars``."""
    return -(-(5 + 8 + 7 * num_chars) // 8)


def _record(ident: int, value: bytes) -> bytes:
    if len(value) > 0xFF:
        raise CodecError(f"parameter 0x{ident:02x} value too long ({len(value)} bytes)")
    return bytes((ident, len(value))) + value


def _records(data: bytes) -> list[tuple[int, bytes]]:
    out = []
    i = 0
    while i < len(data):
        if i + 2 > len(data):
            raise CodecError("truncated parameter header")
        ident, length = data[i], data[i + 1]
        if i + 2 + length > len(data):
            raise CodecError(f"parameter 0x{ident:02x} length {length} exceeds buffer")
        out.append((ident, data[i + 2 : i + 2 + length]))
        i += 2 + length
    return out


def _encode_bearer(bearer: BearerData) -> bytes:
    bearer.validate()
    w = _BitWriter()
    w.write(int(bearer.message_kind), 4)
    w.write(bearer.message_id, 16)
    w.write(0, 4)
    return _record(SUBPARAM_MESSAGE_ID, w.to_bytes()) + _record(
        SUBPARAM_USER_DATA, pack_user_data(bearer.user_data)
    )


def _decode_bearer(data: bytes) -> BearerData:
    fields: dict[int, bytes] = {}
    for ident, value in _records(data):
        if ident not in (SUBPARAM_MESSAGE_ID, SUBPARAM_USER_DATA):
            raise CodecError(f"unknown bearer subparameter 0x{ident:02x}")
        if ident in fields:
            raise CodecError(f"duplicate bearer subparameter 0x{ident:02x}")
        fields[ident] = value
    if SUBPARAM_MESSAGE_ID not in fields or SUBPARAM_USER_DATA not in fields:
        raise CodecError("bearer data needs message identifier and user data")
    mid = fields[SUBPARAM_MESSAGE_ID]
    if len(mid) != 3:
        raise CodecError(f"message identifier must be 3 bytes, got {len(mid)}")
    r = _BitReader(mid)
    try:
        kind = MessageKind(r.read(4))
    except ValueError as exc:
        raise CodecError(str(exc)) from None
    message_id = r.read(16)
    if r.read(4):
        raise CodecError("nonzero reserved bits in message identifier")
    return BearerData(message_id, unpack_user_data(fields[SUBPARAM_USER_DATA]), kind)


def encode_pdu(pdu: SmsPdu) -> bytes:
    if pdu.dest is None:
        raise CodecError("destination address is mandatory")
    if not 0 <= pdu.teleservice_id <= 0xFFFF:
        raise CodecError(f"teleservice id {pdu.teleservice_id} out of range")
    out = bytes((MSG_TYPE_POINT_TO_POINT,))
    out += _record(PARAM_TELESERVICE, pdu.teleservice_id.to_bytes(2, "big"))
    if pdu.orig is not None:
        out += _record(PARAM_ORIG_ADDRESS, encode_address(pdu.orig))
    out += _record(PARAM_DEST_ADDRESS, encode_address(pdu.dest))
    out += _record(PARAM_BEARER_DATA, _encode_bearer(pdu.bearer))
    return out


def decode_pdu(data: bytes) -> SmsPdu:
    if not data:
        raise CodecError("empty PDU")
    if data[0] != MSG_TYPE_POINT_TO_POINT:
        raise CodecError(f"unsupported transport message type 0x{data[0]:02x}")
    params: dict[int, bytes] = {}
    for ident, value in _records(data[1:]):
        if ident not in (PARAM_TELESERVICE, PARAM_ORIG_ADDRESS, PARAM_DEST_ADDRESS, PARAM_BEARER_DATA):
            raise CodecError(f"unknown transport parameter 0x{ident:02x}")
        if ident in params:
            raise CodecError(f"duplicate transport parameter 0x{ident:02x}")
        params[ident] = value
    for ident, name in (
        (PARAM_TELESERVICE, "teleservice"),
        (PARAM_DEST_ADDRESS, "destination"),
        (PARAM_BEARER_DATA, "bearer data"),
    ):
        if ident not in params:
            raise CodecError(f"missing {name} parameter")
    if len(params[PARAM_TELESERVICE]) != 2:
        raise CodecError("teleservice parameter must be 2 bytes")
    orig = params.get(PARAM_ORIG_ADDRESS)
    return SmsPdu(
        dest=decode_address(params[PARAM_DEST_ADDRESS]),
        bearer=_decode_bearer(params[PARAM_BEARER_DATA]),
        orig=decode_address(orig) if orig is not None else None,
        teleservice_id=int.from_bytes(params[PARAM_TELESERVICE], "big"),
    )


def make_submit(dest: str, text: str | bytes, message_id: int = 0) -> SmsPdu:
    """Mobile-originated PDU: no originating address."""
    encoding = Encoding.OCTET if isinstance(text, bytes) else Encoding.SEVEN_BIT_ASCII
    return SmsPdu(
        dest=SmsAddress(dest),
        bearer=BearerData(message_id & 0xFFFF, UserData(text, encoding), MessageKind.SUBMIT),
    )


def make_deliver(orig: str, dest: str, user_data: UserData, message_id: int = 0) -> SmsPdu:
    return SmsPdu(
        dest=SmsAddress(dest),
        orig=SmsAddress(orig),
        bearer=BearerData(message_id & 0xFFFF, user_data, MessageKind.DELIVER),
    )
