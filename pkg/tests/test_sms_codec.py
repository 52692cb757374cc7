import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imsspoof.sms_codec import (
    BearerData,
    CodecError,
    DigitMode,
    Encoding,
    MessageKind,
    SmsAddress,
    SmsPdu,
    UserData,
    decode_address,
    decode_pdu,
    encode_address,
    encode_pdu,
    pack_user_data,
    unpack_user_data,
    user_data_size,
)

DTMF = {**{str(d): d for d in range(1, 10)}, "0": 10, "*": 11, "#": 12}


def bitstring_oracle(fields):
    """Concatenate (value, width) pairs as a '0'/'1' string, zero-pad, return bytes."""
    s = "".join(format(v, f"0{w}b") for v, w in fields)
    s += "0" * (-len(s) % 8)
    return bytes(int(s[i : i + 8], 2) for i in range(0, len(s), 8))


def address_oracle(digits):
    return bitstring_oracle([(0, 1), (0, 1), (len(digits), 8)] + [(DTMF[c], 4) for c in digits])


# frozen from a standalone bit-string script
CAPTURED_PDU_HEX = "00000210020404014c9994080d00031000000106102f9f3e7cb8"


class TestAddress:
    def test_captured_destination(self):
        data = encode_address(SmsAddress("32665"))
        assert data == bytes.fromhex("014c9994")
        assert len(data) == 4  # "Length: 4" in the capture
        # num_fields split: 6 MSB in byte 0, 2 LSB at the top of byte 1
        assert data[0] & 0x3F == 0b000001
        assert data[1] >> 6 == 0b01
        nibbles = [(int.from_bytes(data, "big") >> (32 - 10 - 4 * (i + 1))) & 0xF for i in range(5)]
        assert nibbles == [3, 2, 6, 6, 5]
        assert data[-1] & 0b11 == 0

    def test_single_digit(self):
        data = encode_address(SmsAddress("1"))
        # 1 + 1 + 8 + 4 = 14 bits -> 2 bytes, 2 pad bits
        assert len(data) == 2
        assert data[-1] & 0b11 == 0
        assert decode_address(data).digits == "1"

    def test_zero_maps_to_ten(self):
        data = encode_address(SmsAddress("90999"))
        assert data == address_oracle("90999")
        value = int.from_bytes(data, "big")
        nibbles = [(value >> (32 - 10 - 4 * (i + 1))) & 0xF for i in range(5)]
        assert nibbles == [9, 10, 9, 9, 9]
        assert decode_address(data).digits == "90999"

    def test_roundtrip(self):
        assert decode_address(encode_address(SmsAddress("32665"))) == SmsAddress("32665")

    def test_pad_bit_set_rejected(self):
        data = bytearray(encode_address(SmsAddress("32665")))
        data[-1] |= 0x01
        with pytest.raises(CodecError, match="pad"):
            decode_address(bytes(data))

    @pytest.mark.parametrize("code", [0, 13, 15])
    def test_bad_digit_code(self, code):
        data = bitstring_oracle([(0, 1), (0, 1), (1, 8), (code, 4)])
        with pytest.raises(CodecError):
            decode_address(data)

    def test_invalid_character_named(self):
        with pytest.raises(CodecError, match="'A'"):
            encode_address(SmsAddress("12A4"))

    @pytest.mark.parametrize("digits", ["", "1" * 21])
    def test_length_bounds(self, digits):
        with pytest.raises(CodecError):
            encode_address(SmsAddress(digits))

    def test_eight_bit_mode_roundtrip(self):
        addr = SmsAddress("+15551234", digit_mode=DigitMode.EIGHT_BIT)
        assert decode_address(encode_address(addr)) == addr

    @given(st.text(alphabet="0123456789*#", min_size=1, max_size=20))
    def test_matches_oracle(self, digits):
        assert encode_address(SmsAddress(digits)) == address_oracle(digits)


class TestUserData:
    def test_captured_user_data(self):
        data = pack_user_data(UserData("yyyy8"))
        assert len(data) == 6  # "Length: 6" in the capture
        assert data[0] >> 3 == 2  # encoding 7-bit ASCII
        assert ((int.from_bytes(data, "big") >> (48 - 13)) & 0xFF) == 5
        # character area, before the 13-bit prefix shift
        chars = bitstring_oracle([(ord(c), 7) for c in "yyyy8"])
        assert chars == bytes.fromhex("f3e7cf9700")
        assert data == bitstring_oracle([(2, 5), (5, 8)] + [(ord(c), 7) for c in "yyyy8"])

    def test_empty(self):
        data = pack_user_data(UserData(""))
        assert data == bitstring_oracle([(2, 5), (0, 8)])
        assert unpack_user_data(data) == UserData("")

    def test_octet_140(self):
        payload = bytes(range(140))
        data = pack_user_data(UserData(payload, Encoding.OCTET))
        ud = unpack_user_data(data)
        assert ud.num_fields == 140
        assert ud.payload == payload

    def test_octet_too_long(self):
        with pytest.raises(CodecError):
            pack_user_data(UserData(bytes(141), Encoding.OCTET))

    def test_septets_too_long(self):
        with pytest.raises(CodecError):
            pack_user_data(UserData("a" * 161))

    def test_non_printable_rejected(self):
        with pytest.raises(CodecError):
            pack_user_data(UserData("bell\x07"))

    def test_roundtrip(self):
        assert unpack_user_data(pack_user_data(UserData("yyyy8"))).payload == "yyyy8"

    def test_truncated(self):
        # claims 6 characters but only carries bits for 5
        data = bitstring_oracle([(2, 5), (6, 8)] + [(ord(c), 7) for c in "yyyy8"])
        with pytest.raises(CodecError):
            unpack_user_data(data)

    def test_nonzero_pad(self):
        data = bytearray(pack_user_data(UserData("ab")))
        data[-1] |= 1
        with pytest.raises(CodecError):
            unpack_user_data(bytes(data))

    @pytest.mark.parametrize("n", range(0, 161))
    def test_capacity_formula(self, n):
        data = pack_user_data(UserData("x" * n))
        assert len(data) == math.ceil((5 + 8 + 7 * n) / 8) == user_data_size(n)

    @given(st.text(alphabet=st.characters(min_codepoint=0x20, max_codepoint=0x7E), min_size=100, max_size=100))
    def test_random_ascii_roundtrip(self, text):
        assert unpack_user_data(pack_user_data(UserData(text))).payload == text


addresses = st.builds(SmsAddress, st.text(alphabet="0123456789*#", min_size=1, max_size=20))
user_datas = st.one_of(
    st.builds(UserData, st.text(alphabet=st.characters(min_codepoint=0x20, max_codepoint=0x7E), max_size=160)),
    st.builds(UserData, st.binary(max_size=140), st.just(Encoding.OCTET)),
)
pdus = st.builds(
    SmsPdu,
    dest=addresses,
    bearer=st.builds(BearerData, st.integers(0, 0xFFFF), user_datas, st.sampled_from(list(MessageKind))),
    orig=st.none() | addresses,
    teleservice_id=st.just(4098),
)


class TestPdu:
    def captured(self):
        return SmsPdu(
            dest=SmsAddress("32665"),
            bearer=BearerData(0, UserData("yyyy8"), MessageKind.DELIVER),
        )

    def test_captured_golden(self):
        data = encode_pdu(self.captured())
        assert data.hex() == CAPTURED_PDU_HEX
        assert (4098).to_bytes(2, "big") in data
        assert bytes.fromhex("0404014c9994") in data
        assert bytes.fromhex("0106102f9f3e7cb8") in data
        assert decode_pdu(data) == self.captured()

    def test_missing_dest(self):
        with pytest.raises(CodecError):
            encode_pdu(SmsPdu(dest=None, bearer=BearerData(1, UserData("x"))))

    def test_decode_missing_dest(self):
        data = bytes.fromhex("00000210020800")
        with pytest.raises(CodecError):
            decode_pdu(data)

    def test_unknown_parameter(self):
        data = encode_pdu(self.captured()) + bytes((0x33, 1, 0))
        with pytest.raises(CodecError, match="unknown"):
            decode_pdu(data)

    def test_bad_length(self):
        data = bytearray(encode_pdu(self.captured()))
        data[-7] += 3  # user data length now overruns the bearer record
        with pytest.raises(CodecError):
            decode_pdu(bytes(data))

    def test_orig_encoded_before_dest(self):
        pdu = SmsPdu(dest=SmsAddress("32665"), orig=SmsAddress("3105554347"), bearer=BearerData(7, UserData("Hi...")))
        data = encode_pdu(pdu)
        assert data.index(bytes((0x02,))) < data.index(bytes.fromhex("0404"))
        assert decode_pdu(data) == pdu

    @settings(max_examples=1000)
    @given(pdus)
    def test_roundtrip_property(self, pdu):
        data = encode_pdu(pdu)
        assert decode_pdu(data) == pdu
        assert encode_pdu(decode_pdu(data)) == data
