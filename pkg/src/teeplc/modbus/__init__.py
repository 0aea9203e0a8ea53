"""Modbus/TCP codec, client and server."""
from .bank import BankRangeError, RegisterBank
from .client import (
    ConnectionLost,
    ExceptionResponse,
    ModbusClient,
    Timeout,
    TransactionMismatch,
    client_transact,
    read_frame,
)
from .codec import (
    BadProtocolId,
    DecodeError,
    LengthMismatch,
    MalformedPdu,
    MbapHeader,
    ModbusError,
    Pdu,
    Truncated,
    UnknownFunction,
    decode_frame,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
)
from .server import Hooks, ModbusServer, PortInUse, handle_frame, serve
from .transport import SocketTransport, TransportClosed, TransportTimeout
