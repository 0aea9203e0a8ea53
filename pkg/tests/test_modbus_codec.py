import random
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from teeplc.modbus import codec
from teeplc.modbus.codec import (
    BadProtocolId,
    DecodeError,
    LengthMismatch,
    MalformedPdu,
    MbapHeader,
    Pdu,
    Truncated,
    UnknownFunction,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
)

# Reference frames written out byte-for-byte from the Modbus/TCP framing rules
# (MBAP: txn, proto=0, length=unit+pdu, unit; then fc and big-endian fields).
READ_COILS_FRAME = bytes.fromhex("0001 0000 0006 01 01 0000 0008".replace(" ", ""))
WRITE_COIL_ON_FRAME = bytes.fromhex("0000 0000 0006 01 05 0000 FF00".replace(" ", ""))


def test_read_coils_frame_bytes():
    frame = encode_request(MbapHeader(1, 1), codec.read_coils(0, 8))
    assert frame == READ_COILS_FRAME


def test_write_single_coil_frame_bytes():
    frame = encode_request(MbapHeader(0, 1), codec.write_single_coil(0, True))
    assert frame == WRITE_COIL_ON_FRAME


def test_length_field_is_recomputed():
    frame = encode_request(MbapHeader(1, 1, length=999), codec.read_coils(0, 8))
    assert struct.unpack(">H", frame[4:6])[0] == 6


@pytest.mark.parametrize("pdu", [
    codec.read_coils(0, 0),
    codec.read_coils(0, 2001),
    codec.read_holding_registers(0, 0),
    codec.read_holding_registers(0, 126),
])
def test_bad_quantities_rejected(pdu):
    with pytest.raises(MalformedPdu):
        encode_request(MbapHeader(1, 1), pdu)


def test_decode_first_example_round_trip():
    header, pdu = decode_request(READ_COILS_FRAME)
    assert (header.transaction_id, header.unit_id, header.protocol_id) == (1, 1, 0)
    assert pdu == codec.read_coils(0, 8)


def test_bad_protocol_id():
    frame = bytearray(READ_COILS_FRAME)
    frame[2:4] = b"\x00\x01"
    with pytest.raises(BadProtocolId):
        decode_request(bytes(frame))


def test_truncated_body():
    # declared length 6, only 4 bytes after the length field
    with pytest.raises(Truncated):
        decode_request(READ_COILS_FRAME[:-2])


def test_short_header():
    with pytest.raises(Truncated):
        decode_request(READ_COILS_FRAME[:5])


def test_trailing_garbage():
    with pytest.raises(LengthMismatch):
        decode_request(READ_COILS_FRAME + b"\x00")


def test_unknown_function():
    frame = bytes.fromhex("000100000002012B")
    with pytest.raises(UnknownFunction) as info:
        decode_request(frame)
    assert info.value.function_code == 0x2B


def test_exception_response_round_trip():
    pdu = codec.exception_pdu(codec.READ_COILS, codec.ILLEGAL_DATA_ADDRESS)
    header, out = decode_response(encode_response(MbapHeader(7, 1), pdu))
    assert out.is_exception and out.exception_code == 0x02
    assert header.transaction_id == 7


@given(st.lists(st.integers(0, 1), max_size=2000))
def test_coil_packing_identity(bits):
    assert codec.unpack_bits(codec.pack_bits(bits), len(bits)) == bits


def test_coil_packing_is_lsb_first():
    assert codec.pack_bits([1, 0, 1, 1, 0, 0, 0, 0, 1]) == bytes([0b00001101, 0b00000001])


# -- strategies ---------------------------------------------------------------

addr = st.integers(0, 0xFFFF)


@st.composite
def requests(draw):
    kind = draw(st.sampled_from(["rc", "rh", "wc", "wr", "wmc", "wmr"]))
    if kind == "rc":
        q = draw(st.integers(1, 2000))
        a = draw(st.integers(0, 0x10000 - q))
        return codec.read_coils(a, q)
    if kind == "rh":
        q = draw(st.integers(1, 125))
        a = draw(st.integers(0, 0x10000 - q))
        return codec.read_holding_registers(a, q)
    if kind == "wc":
        return codec.write_single_coil(draw(addr), draw(st.booleans()))
    if kind == "wr":
        return codec.write_single_register(draw(addr), draw(st.integers(0, 0xFFFF)))
    if kind == "wmc":
        bits = draw(st.lists(st.integers(0, 1), min_size=1, max_size=1968))
        a = draw(st.integers(0, 0x10000 - len(bits)))
        return codec.write_multiple_coils(a, bits)
    words = draw(st.lists(st.integers(0, 0xFFFF), min_size=1, max_size=123))
    a = draw(st.integers(0, 0x10000 - len(words)))
    return codec.write_multiple_registers(a, words)


headers = st.builds(MbapHeader, st.integers(0, 0xFFFF), st.integers(0, 0xFF))


@given(headers, requests())
def test_request_round_trip(header, pdu):
    h, p = decode_request(encode_request(header, pdu))
    assert (h, p) == (header, pdu)


@given(st.binary(max_size=300))
def test_decoder_never_crashes(data):
    for decode in (decode_request, decode_response):
        try:
            decode(data)
        except (DecodeError, MalformedPdu):
            pass


def test_decoder_survives_structured_noise():
    # random frames that get past the header check exercise the PDU validators
    rng = random.Random(5)
    for _ in range(5000):
        body = bytes([rng.choice([1, 3, 5, 6, 15, 16, 0x81, 0x83, 0x2B])]) + rng.randbytes(rng.randint(0, 12))
        frame = struct.pack(">HHHB", rng.getrandbits(16), 0, len(body) + 1, 1) + body
        for decode in (decode_request, decode_response):
            try:
                decode(frame)
            except (DecodeError, MalformedPdu):
                pass
