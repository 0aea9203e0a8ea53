"""Byte-stream transports shared by Modbus and the secure channel."""
from __future__ import annotations

import socket


class TransportClosed(ConnectionError):
    pass


class TransportTimeout(TimeoutError):
    pass


class SocketTransport:
    """Blocking TCP stream with exact-length reads."""

    def __init__(self, sock: socket.socket, timeout: float | None = None):
        self.sock = sock
        if sock.family in (socket.AF_INET, socket.AF_INET6):
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock.settimeout(timeout)
        self.closed = False

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = 0.5) -> "SocketTransport":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except socket.timeout as exc:
            raise TransportTimeout(f"connect to {host}:{port} timed out") from exc
        except OSError as exc:
            raise TransportClosed(f"connect to {host}:{port} failed: {exc}") from exc
        return cls(sock, timeout)

    def settimeout(self, timeout: float | None) -> None:
        self.sock.settimeout(timeout)

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except socket.timeout as exc:
            raise TransportTimeout("send timed out") from exc
        except OSError as exc:
            raise TransportClosed(str(exc)) from exc

    def recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout as exc:
                raise TransportTimeout(f"timed out after {len(buf)}/{n} bytes") from exc
            except OSError as exc:
                raise TransportClosed(str(exc)) from exc
            if not chunk:
                raise TransportClosed(f"peer closed after {len(buf)}/{n} bytes")
            buf += chunk
        return bytes(buf)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()
