from __future__ import annotations

import struct

from . import codec
from .codec import MbapHeader, ModbusError, Pdu
from .transport import TransportClosed, TransportTimeout

DEFAULT_TIMEOUT = 0.5


class Timeout(ModbusError):
    pass


class TransactionMismatch(ModbusError):
    pass


class ExceptionResponse(ModbusError):
    def __init__(self, function_code: int, code: int):
        super().__init__(f"exception 0x{code:02X} for function 0x{function_code:02X}")
        self.function_code = function_code
        self.code = code


class ConnectionLost(ModbusError):
    pass


def read_frame(transport) -> bytes:
    """Read one raw MBAP frame off a byte stream."""
    head = transport.recv_exact(codec.MBAP_SIZE)
    length = struct.unpack(">H", head[4:6])[0]
    if not 2 <= length <= codec.MAX_PDU + 1:
        raise codec.LengthMismatch(f"declared length {length} out of range")
    return head + transport.recv_exact(length - 1)


class ModbusClient:
    """One strict request/response session over a connected transport.

    ``link_cost`` is an optional callable returning ``{phase: ns}`` for the
    virtual clock; in wall mode the exchange is simply measured.
    """

    def __init__(self, transport, unit_id: int = 1, timeout: float = DEFAULT_TIMEOUT,
                 timeline=None, link_cost=None):
        self.transport = transport
        self.unit_id = unit_id
        self.timeout = timeout
        self.timeline = timeline
        self.link_cost = link_cost
        self._next_txn = 0
        self.broken = False
        if hasattr(transport, "settimeout"):
            transport.settimeout(timeout)

    def _exchange(self, frame: bytes) -> bytes:
        try:
            self.transport.send(frame)
            return read_frame(self.transport)
        except TransportTimeout as exc:
            self.broken = True
            raise Timeout(f"no response within {self.timeout}s") from exc
        except (TransportClosed, OSError) as exc:
            self.broken = True
            raise ConnectionLost(str(exc)) from exc

    def transact(self, pdu: Pdu) -> Pdu:
        if self.broken:
            raise ConnectionLost("session unusable after a previous failure")
        txn = self._next_txn
        self._next_txn = (self._next_txn + 1) & 0xFFFF
        frame = codec.encode_request(MbapHeader(txn, self.unit_id), pdu)
        tl = self.timeline
        if tl is None:
            raw = self._exchange(frame)
        else:
            costs = self.link_cost() if (self.link_cost and tl.virtual) else {}
            try:
                with tl.phase("network_wait", costs.get("network_wait", 0)):
                    raw = self._exchange(frame)
            except Timeout:
                if tl.virtual:
                    tl.charge("network_wait", int(self.timeout * 1e9))
                raise
            if costs.get("slave_processing"):
                tl.charge("slave_processing", costs["slave_processing"])
        header, resp = codec.decode_response(raw)
        if header.transaction_id != txn or header.unit_id != self.unit_id:
            self.broken = True
            raise TransactionMismatch(
                f"sent txn {txn}/unit {self.unit_id}, got {header.transaction_id}/{header.unit_id}")
        if resp.is_exception:
            raise ExceptionResponse(resp.function_code & 0x7F, resp.exception_code)
        if resp.function_code != pdu.function_code:
            raise TransactionMismatch("response function code differs from request")
        return resp

    # convenience wrappers

    def read_coils(self, address: int, count: int) -> list[int]:
        resp = self.transact(codec.read_coils(address, count))
        return codec.unpack_bits(resp.payload[1:], count)

    def read_holding_registers(self, address: int, count: int) -> list[int]:
        resp = self.transact(codec.read_holding_registers(address, count))
        data = resp.payload[1:]
        if len(data) != 2 * count:
            raise codec.MalformedPdu("register count mismatch")
        return list(struct.unpack(f">{count}H", data))

    def write_coils(self, address: int, values) -> None:
        values = list(values)
        if len(values) == 1:
            self.transact(codec.write_single_coil(address, bool(values[0])))
        else:
            self.transact(codec.write_multiple_coils(address, values))

    def write_registers(self, address: int, values) -> None:
        values = list(values)
        if len(values) == 1:
            self.transact(codec.write_single_register(address, values[0]))
        else:
            self.transact(codec.write_multiple_registers(address, values))

    def close(self) -> None:
        self.transport.close()


def client_transact(transport, pdu: Pdu, unit: int = 1, timeout: float = DEFAULT_TIMEOUT) -> Pdu:
    """One-shot transaction on ``transport``."""
    return ModbusClient(transport, unit, timeout).transact(pdu)
