from __future__ import annotations

import logging
import socket
import struct
import threading
import time

from . import codec
from .bank import BankRangeError
from .client import read_frame
from .codec import MbapHeader, Pdu
from .transport import SocketTransport

log = logging.getLogger(__name__)


class PortInUse(OSError):
    pass


class Hooks:
    """Callbacks fired around bank access. Override what you need."""

    def on_read(self, table: str, address: int, count: int) -> None:
        pass

    def on_write(self, table: str, address: int, values: list) -> None:
        pass


def handle_request(bank, pdu: Pdu, hooks=None, read_only: bool = False) -> Pdu:
    """Apply one decoded request to ``bank`` and build the response PDU."""
    hooks = hooks or Hooks()
    fc, p = pdu.function_code, pdu.payload
    try:
        if fc == codec.READ_COILS:
            address, count = struct.unpack(">HH", p)
            hooks.on_read("coils", address, count)
            data = codec.pack_bits(bank.read("coils", address, count))
            return Pdu(fc, bytes([len(data)]) + data)
        if fc == codec.READ_HOLDING_REGISTERS:
            address, count = struct.unpack(">HH", p)
            hooks.on_read("holding_registers", address, count)
            values = bank.read("holding_registers", address, count)
            return Pdu(fc, bytes([2 * count]) + struct.pack(f">{count}H", *values))
        if read_only:
            return codec.exception_pdu(fc, codec.ILLEGAL_FUNCTION)
        if fc == codec.WRITE_SINGLE_COIL:
            address, value = struct.unpack(">HH", p)
            values = [1 if value == codec.COIL_ON else 0]
            table = "coils"
        elif fc == codec.WRITE_SINGLE_REGISTER:
            address, value = struct.unpack(">HH", p)
            values = [value]
            table = "holding_registers"
        elif fc == codec.WRITE_MULTIPLE_COILS:
            address, count = struct.unpack(">HH", p[:4])
            values = codec.unpack_bits(p[5:], count)
            table = "coils"
        elif fc == codec.WRITE_MULTIPLE_REGISTERS:
            address, count = struct.unpack(">HH", p[:4])
            values = list(struct.unpack(f">{count}H", p[5:]))
            table = "holding_registers"
        else:
            return codec.exception_pdu(fc, codec.ILLEGAL_FUNCTION)
        bank.write(table, address, values)
        hooks.on_write(table, address, values)
        if fc in (codec.WRITE_SINGLE_COIL, codec.WRITE_SINGLE_REGISTER):
            return Pdu(fc, p)
        return Pdu(fc, p[:4])
    except BankRangeError:
        return codec.exception_pdu(fc, codec.ILLEGAL_DATA_ADDRESS)


def handle_frame(bank, raw: bytes, hooks=None, read_only: bool = False) -> bytes | None:
    """Turn one request frame into a response frame (None = drop the connection)."""
    try:
        header, pdu = codec.decode_request(raw)
    except codec.UnknownFunction as exc:
        return codec.encode_response(
            exc.header, codec.exception_pdu(exc.function_code, codec.ILLEGAL_FUNCTION))
    except codec.MalformedPdu:
        header = codec.decode_header(raw)
        return codec.encode_response(
            header, codec.exception_pdu(raw[codec.MBAP_SIZE], codec.ILLEGAL_DATA_VALUE))
    except codec.DecodeError:
        return None
    resp = handle_request(bank, pdu, hooks, read_only)
    return codec.encode_response(MbapHeader(header.transaction_id, header.unit_id), resp)


def serve_connection(transport, bank, hooks=None, read_only=False, response_delay=0.0,
                     stop: threading.Event | None = None) -> None:
    """Answer requests on one connection until EOF or error."""
    try:
        while stop is None or not stop.is_set():
            try:
                raw = read_frame(transport)
            except codec.DecodeError:
                break
            out = handle_frame(bank, raw, hooks, read_only)
            if out is None:
                break
            if response_delay:
                time.sleep(response_delay)
            transport.send(out)
    except (ConnectionError, TimeoutError, OSError) as exc:
        log.debug("connection ended: %s", exc)
    except Exception:
        log.exception("connection handler crashed")
    finally:
        transport.close()


def serve(listener: socket.socket, bank, hooks=None, *, wrap=None, read_only=False,
          response_delay=0.0, stop: threading.Event | None = None,
          connections: set | None = None) -> None:
    """Accept connections on ``listener`` until ``stop`` is set.

    ``wrap(sock)`` turns an accepted socket into a transport (e.g. a secure
    channel responder); failures there are logged and only drop that client.
    """
    stop = stop or threading.Event()
    listener.settimeout(0.05)
    while not stop.is_set():
        try:
            sock, _ = listener.accept()
        except socket.timeout:
            continue
        except OSError:
            break
        sock.settimeout(None)
        if connections is not None:
            connections.add(sock)
        threading.Thread(
            target=_connection_thread,
            args=(sock, bank, hooks, wrap, read_only, response_delay, stop),
            daemon=True,
        ).start()


def _connection_thread(sock, bank, hooks, wrap, read_only, response_delay, stop):
    try:
        transport = wrap(sock) if wrap else SocketTransport(sock)
    except Exception as exc:
        log.info("rejected connection: %s", exc)
        try:
            sock.close()
        except OSError:
            pass
        return
    serve_connection(transport, bank, hooks, read_only, response_delay, stop)


def bind_listener(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise PortInUse(f"{host}:{port}: {exc}") from exc
    sock.listen(16)
    return sock


class ModbusServer:
    """Background-thread wrapper around :func:`serve`."""

    def __init__(self, bank, host="127.0.0.1", port=0, hooks=None, wrap=None,
                 read_only=False, response_delay=0.0):
        self.bank = bank
        self.listener = bind_listener(host, port)
        self.host, self.port = self.listener.getsockname()[:2]
        self._stop = threading.Event()
        self._connections: set = set()
        self._thread = threading.Thread(
            target=serve,
            args=(self.listener, bank, hooks),
            kwargs=dict(wrap=wrap, read_only=read_only, response_delay=response_delay,
                        stop=self._stop, connections=self._connections),
            daemon=True,
        )

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    def start(self) -> "ModbusServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self.listener.close()
        for sock in list(self._connections):
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        self._connections.clear()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
