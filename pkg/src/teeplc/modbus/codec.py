"""Modbus/TCP framing: MBAP header + PDU for the supported function subset."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

READ_COILS = 0x01
READ_HOLDING_REGISTERS = 0x03
WRITE_SINGLE_COIL = 0x05
WRITE_SINGLE_REGISTER = 0x06
WRITE_MULTIPLE_COILS = 0x0F
WRITE_MULTIPLE_REGISTERS = 0x10

FUNCTION_CODES = frozenset(
    {
        READ_COILS,
        READ_HOLDING_REGISTERS,
        WRITE_SINGLE_COIL,
        WRITE_SINGLE_REGISTER,
        WRITE_MULTIPLE_COILS,
        WRITE_MULTIPLE_REGISTERS,
    }
)

ILLEGAL_FUNCTION = 0x01
ILLEGAL_DATA_ADDRESS = 0x02
ILLEGAL_DATA_VALUE = 0x03
SERVER_DEVICE_FAILURE = 0x04

MAX_READ_COILS = 2000
MAX_READ_REGISTERS = 125
MAX_WRITE_COILS = 1968
MAX_WRITE_REGISTERS = 123

MBAP_SIZE = 7
MAX_PDU = 253

COIL_ON = 0xFF00


class ModbusError(Exception):
    pass


class MalformedPdu(ModbusError):
    pass


class DecodeError(ModbusError):
    pass


class Truncated(DecodeError):
    pass


class BadProtocolId(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class UnknownFunction(DecodeError):
    def __init__(self, function_code, header=None):
        super().__init__(f"unknown function code 0x{function_code:02X}")
        self.function_code = function_code
        self.header = header


@dataclass(frozen=True)
class MbapHeader:
    transaction_id: int
    unit_id: int
    protocol_id: int = 0
    length: int = field(default=0, compare=False)  # recomputed on encode


@dataclass(frozen=True)
class Pdu:
    function_code: int
    payload: bytes = b""

    @property
    def is_exception(self) -> bool:
        return self.function_code & 0x80 != 0

    @property
    def exception_code(self) -> int | None:
        return self.payload[0] if self.is_exception and self.payload else None

    def to_bytes(self) -> bytes:
        return bytes([self.function_code]) + self.payload


def pack_bits(bits) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, bit in enumerate(bits):
        if bit:
            out[i >> 3] |= 1 << (i & 7)
    return bytes(out)


def unpack_bits(data: bytes, count: int) -> list[int]:
    if count > len(data) * 8:
        raise MalformedPdu("not enough bytes for bit count")
    return [(data[i >> 3] >> (i & 7)) & 1 for i in range(count)]


# -- request builders -------------------------------------------------------

def read_coils(address: int, quantity: int) -> Pdu:
    return Pdu(READ_COILS, struct.pack(">HH", address, quantity))


def read_holding_registers(address: int, quantity: int) -> Pdu:
    return Pdu(READ_HOLDING_REGISTERS, struct.pack(">HH", address, quantity))


def write_single_coil(address: int, value: bool) -> Pdu:
    return Pdu(WRITE_SINGLE_COIL, struct.pack(">HH", address, COIL_ON if value else 0))


def write_single_register(address: int, value: int) -> Pdu:
    return Pdu(WRITE_SINGLE_REGISTER, struct.pack(">HH", address, value & 0xFFFF))


def write_multiple_coils(address: int, values) -> Pdu:
    data = pack_bits(values)
    return Pdu(
        WRITE_MULTIPLE_COILS,
        struct.pack(">HHB", address, len(values), len(data)) + data,
    )


def write_multiple_registers(address: int, values) -> Pdu:
    data = b"".join(struct.pack(">H", v & 0xFFFF) for v in values)
    return Pdu(
        WRITE_MULTIPLE_REGISTERS,
        struct.pack(">HHB", address, len(values), len(data)) + data,
    )


def exception_pdu(function_code: int, code: int) -> Pdu:
    return Pdu((function_code | 0x80) & 0xFF, bytes([code]))


# -- validation -------------------------------------------------------------

def _check_addr_qty(payload: bytes, limit: int, what: str) -> tuple[int, int]:
    if len(payload) != 4:
        raise MalformedPdu(f"{what}: expected 4 payload bytes, got {len(payload)}")
    address, quantity = struct.unpack(">HH", payload)
    if not 1 <= quantity <= limit:
        raise MalformedPdu(f"{what}: quantity {quantity} outside 1..{limit}")
    if address + quantity > 0x10000:
        raise MalformedPdu(f"{what}: range overflows address space")
    return address, quantity


def validate_request(pdu: Pdu) -> None:
    """Raise MalformedPdu unless ``pdu`` is a well-formed request."""
    fc, p = pdu.function_code, pdu.payload
    if fc == READ_COILS:
        _check_addr_qty(p, MAX_READ_COILS, "read coils")
    elif fc == READ_HOLDING_REGISTERS:
        _check_addr_qty(p, MAX_READ_REGISTERS, "read registers")
    elif fc == WRITE_SINGLE_COIL:
        if len(p) != 4:
            raise MalformedPdu("write single coil: expected 4 payload bytes")
        if struct.unpack(">H", p[2:])[0] not in (0, COIL_ON):
            raise MalformedPdu("write single coil: value must be 0x0000 or 0xFF00")
    elif fc == WRITE_SINGLE_REGISTER:
        if len(p) != 4:
            raise MalformedPdu("write single register: expected 4 payload bytes")
    elif fc in (WRITE_MULTIPLE_COILS, WRITE_MULTIPLE_REGISTERS):
        if len(p) < 5:
            raise MalformedPdu("write multiple: short payload")
        limit = MAX_WRITE_COILS if fc == WRITE_MULTIPLE_COILS else MAX_WRITE_REGISTERS
        _check_addr_qty(p[:4], limit, "write multiple")
        quantity, count = struct.unpack(">HB", p[2:5])
        expected = (quantity + 7) // 8 if fc == WRITE_MULTIPLE_COILS else quantity * 2
        if count != expected or len(p) != 5 + count:
            raise MalformedPdu("write multiple: byte count mismatch")
    else:
        raise MalformedPdu(f"unsupported function code 0x{fc:02X}")


def validate_response(pdu: Pdu) -> None:
    fc, p = pdu.function_code, pdu.payload
    if pdu.is_exception:
        # may echo a function code we do not implement (illegal function reply)
        if len(p) != 1:
            raise MalformedPdu("bad exception response")
    elif fc in (READ_COILS, READ_HOLDING_REGISTERS):
        if not p or p[0] != len(p) - 1:
            raise MalformedPdu("read response: byte count mismatch")
        if fc == READ_HOLDING_REGISTERS and p[0] % 2:
            raise MalformedPdu("read registers response: odd byte count")
    elif fc in (WRITE_SINGLE_COIL, WRITE_SINGLE_REGISTER,
                WRITE_MULTIPLE_COILS, WRITE_MULTIPLE_REGISTERS):
        if len(p) != 4:
            raise MalformedPdu("write response: expected 4 payload bytes")
    else:
        raise MalformedPdu(f"unsupported function code 0x{fc:02X}")


# -- framing ----------------------------------------------------------------

def encode_frame(header: MbapHeader, pdu: Pdu, *, request: bool = True) -> bytes:
    """Serialize one frame. The MBAP length is always recomputed."""
    if not 0 <= header.transaction_id <= 0xFFFF or not 0 <= header.unit_id <= 0xFF:
        raise MalformedPdu("header field out of range")
    if header.protocol_id != 0:
        raise MalformedPdu("protocol id must be 0")
    if request:
        validate_request(pdu)
    else:
        validate_response(pdu)
    body = pdu.to_bytes()
    if len(body) > MAX_PDU:
        raise MalformedPdu("PDU too long")
    return struct.pack(">HHHB", header.transaction_id, 0, len(body) + 1, header.unit_id) + body


def encode_request(header: MbapHeader, pdu: Pdu) -> bytes:
    return encode_frame(header, pdu, request=True)


def encode_response(header: MbapHeader, pdu: Pdu) -> bytes:
    return encode_frame(header, pdu, request=False)


def decode_header(data: bytes) -> MbapHeader:
    if len(data) < MBAP_SIZE:
        raise Truncated(f"need {MBAP_SIZE} header bytes, got {len(data)}")
    txn, proto, length, unit = struct.unpack(">HHHB", data[:MBAP_SIZE])
    if proto != 0:
        raise BadProtocolId(f"protocol id {proto:#06x}")
    if not 2 <= length <= MAX_PDU + 1:
        raise LengthMismatch(f"declared length {length} out of range")
    return MbapHeader(txn, unit, proto, length)


def decode_frame(data: bytes, *, request: bool = True) -> tuple[MbapHeader, Pdu]:
    """Parse exactly one frame; never raises anything but DecodeError/MalformedPdu."""
    header = decode_header(data)
    end = MBAP_SIZE - 1 + header.length
    if len(data) < end:
        raise Truncated(f"declared length {header.length} but {len(data) - MBAP_SIZE + 1} bytes follow")
    if len(data) > end:
        raise LengthMismatch(f"{len(data) - end} trailing bytes")
    fc = data[MBAP_SIZE]
    pdu = Pdu(fc, bytes(data[MBAP_SIZE + 1:end]))
    known = fc in FUNCTION_CODES if request else (fc & 0x80 or fc in FUNCTION_CODES)
    if not known:
        raise UnknownFunction(fc, header)
    if request:
        validate_request(pdu)
    else:
        validate_response(pdu)
    return MbapHeader(header.transaction_id, header.unit_id, 0, header.length), pdu


def decode_request(data: bytes) -> tuple[MbapHeader, Pdu]:
    return decode_frame(data, request=True)


def decode_response(data: bytes) -> tuple[MbapHeader, Pdu]:
    return decode_frame(data, request=False)
