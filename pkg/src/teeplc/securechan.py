"""Mutually authenticated AEAD record layer for Modbus byte streams.

Handshake (all messages are ``u32 length || body`` with fixed body sizes)::

    I -> R  HELLO   : tag 0x01 | eph_I(32) | nonce_I(32)
    R -> I  REPLY   : tag 0x02 | eph_R(32) | nonce_R(32) | id_R(32) | sig_R(64)
    I -> R  FINISH  : tag 0x03 | id_I(32) | sig_I(64)

``sig_R`` covers SHA-256(label_R | HELLO | REPLY-without-sig) and ``sig_I``
covers SHA-256(label_I | HELLO | REPLY | id_I). Directional keys come from
HKDF-SHA256 over the X25519 secret salted with the full transcript hash.

A signature is checked against the key presented in the same message before
trust is consulted, so a corrupted identity surfaces as ``HandshakeTampered``
while an honest but unknown peer surfaces as ``PeerNotTrusted``.

Records are ``u32 ct_len || u64 seq || ChaCha20-Poly1305(ct||tag)`` with the
12 header bytes as associated data and the sequence number as nonce.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .modbus.transport import TransportClosed, TransportTimeout

RAW = serialization.Encoding.Raw
PUB_RAW = serialization.PublicFormat.Raw
PRIV_RAW = serialization.PrivateFormat.Raw

HELLO, REPLY, FINISH = 0x01, 0x02, 0x03
HELLO_SIZE = 1 + 32 + 32
REPLY_SIZE = 1 + 32 + 32 + 32 + 64
FINISH_SIZE = 1 + 32 + 64

RECORD_HEADER = 12
TAG_SIZE = 16
MAX_RECORD = 64 * 1024
SEQ_LIMIT = 2**64 - 1

# virtual-clock costs of one seal/open on the PLC side
DEFAULT_SEAL_NS = 60_000
DEFAULT_OPEN_NS = 50_000


class ChannelError(Exception):
    pass


class PeerNotTrusted(ChannelError):
    pass


class HandshakeTampered(ChannelError):
    pass


class AuthFailed(ChannelError):
    pass


class Replay(ChannelError):
    pass


class Truncated(ChannelError):
    pass


class SequenceExhausted(ChannelError):
    pass


# -- identities -------------------------------------------------------------

@dataclass(frozen=True)
class PeerIdentity:
    name: str
    public_key: bytes
    private_key: bytes | None = field(default=None, repr=False)

    @classmethod
    def generate(cls, name: str, seed: bytes | None = None) -> "PeerIdentity":
        if seed is None:
            priv = Ed25519PrivateKey.generate()
        else:
            priv = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())
        return cls(name, public_bytes(priv), priv.private_bytes(RAW, PRIV_RAW,
                                                                serialization.NoEncryption()))

    @classmethod
    def from_private(cls, name: str, private_key: bytes) -> "PeerIdentity":
        priv = Ed25519PrivateKey.from_private_bytes(private_key)
        return cls(name, public_bytes(priv), bytes(private_key))

    def public(self) -> "PeerIdentity":
        return PeerIdentity(self.name, self.public_key)

    def sign(self, message: bytes) -> bytes:
        if self.private_key is None:
            raise ChannelError(f"identity {self.name!r} has no private key")
        return Ed25519PrivateKey.from_private_bytes(self.private_key).sign(message)


def public_bytes(key) -> bytes:
    if isinstance(key, Ed25519PrivateKey | X25519PrivateKey):
        key = key.public_key()
    return key.public_bytes(RAW, PUB_RAW)


def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


class TrustSet:
    """Flat set of trusted raw public keys, name for diagnostics only."""

    def __init__(self, peers=()):
        self._keys: dict[bytes, str] = {}
        for peer in peers:
            self.add(peer)

    def add(self, peer) -> None:
        if isinstance(peer, PeerIdentity):
            self._keys[peer.public_key] = peer.name
        else:
            self._keys[bytes(peer)] = bytes(peer).hex()[:16]

    def __contains__(self, public_key: bytes) -> bool:
        return bytes(public_key) in self._keys

    def name_of(self, public_key: bytes) -> str:
        return self._keys[bytes(public_key)]

    def __len__(self):
        return len(self._keys)


# -- session ----------------------------------------------------------------

class SecureSession:
    """Directional keys plus send/receive sequence counters."""

    def __init__(self, send_key: bytes, recv_key: bytes, peer: PeerIdentity,
                 timeline=None, seal_cost=DEFAULT_SEAL_NS, open_cost=DEFAULT_OPEN_NS):
        self._send = ChaCha20Poly1305(send_key)
        self._recv = ChaCha20Poly1305(recv_key)
        self.send_seq = 0
        self.recv_seq = 0
        self.peer = peer
        self.timeline = timeline
        self.seal_cost = seal_cost
        self.open_cost = open_cost

    @staticmethod
    def _nonce(seq: int) -> bytes:
        return b"\x00\x00\x00\x00" + struct.pack(">Q", seq)

    def seal(self, plaintext: bytes) -> bytes:
        if self.timeline is not None:
            with self.timeline.phase("channel_crypto", self.seal_cost):
                return self._seal(plaintext)
        return self._seal(plaintext)

    def _seal(self, plaintext: bytes) -> bytes:
        if self.send_seq >= SEQ_LIMIT:
            raise SequenceExhausted("send sequence exhausted; re-handshake required")
        if len(plaintext) + TAG_SIZE > MAX_RECORD:
            raise ChannelError("plaintext too large for one record")
        self.send_seq += 1
        header = struct.pack(">IQ", len(plaintext) + TAG_SIZE, self.send_seq)
        return header + self._send.encrypt(self._nonce(self.send_seq), plaintext, header)

    def open(self, record: bytes) -> bytes:
        if self.timeline is not None:
            with self.timeline.phase("channel_crypto", self.open_cost):
                return self._open(record)
        return self._open(record)

    def _open(self, record: bytes) -> bytes:
        if len(record) < RECORD_HEADER + TAG_SIZE:
            raise Truncated(f"record of {len(record)} bytes")
        header = bytes(record[:RECORD_HEADER])
        length, seq = struct.unpack(">IQ", header)
        try:
            plaintext = self._recv.decrypt(self._nonce(seq), bytes(record[RECORD_HEADER:]), header)
        except InvalidTag:
            raise AuthFailed(f"record seq {seq} failed authentication") from None
        if length != len(record) - RECORD_HEADER:
            raise AuthFailed("authenticated length disagrees with record size")
        if seq <= self.recv_seq:
            raise Replay(f"record seq {seq} <= last accepted {self.recv_seq}")
        self.recv_seq = seq
        return plaintext


def read_record(transport) -> bytes:
    header = transport.recv_exact(RECORD_HEADER)
    length = struct.unpack(">I", header[:4])[0]
    if not TAG_SIZE <= length <= MAX_RECORD:
        raise Truncated(f"implausible record length {length}")
    return header + transport.recv_exact(length)


class SecureStream:
    """Byte-stream facade: each ``send`` is one record, reads are buffered."""

    def __init__(self, transport, session: SecureSession):
        self.transport = transport
        self.session = session
        self._buf = bytearray()
        self.rejected = 0

    def settimeout(self, timeout) -> None:
        if hasattr(self.transport, "settimeout"):
            self.transport.settimeout(timeout)

    def send(self, data: bytes) -> None:
        self.transport.send(self.session.seal(data))

    def recv_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            record = read_record(self.transport)
            try:
                self._buf += self.session.open(record)
            except (AuthFailed, Replay):
                self.rejected += 1
                raise
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def close(self) -> None:
        self.transport.close()


# -- handshake --------------------------------------------------------------

def _send_msg(transport, body: bytes) -> None:
    transport.send(struct.pack(">I", len(body)) + body)


def _recv_msg(transport, tag: int, size: int) -> bytes:
    try:
        length = struct.unpack(">I", transport.recv_exact(4))[0]
        if length != size:
            raise HandshakeTampered(f"handshake message {tag} has length {length}, expected {size}")
        body = transport.recv_exact(size)
    except TransportTimeout as exc:
        raise HandshakeTampered("handshake stalled") from exc
    except (ConnectionError, OSError) as exc:
        raise TransportClosed(str(exc)) from exc
    if body[0] != tag:
        raise HandshakeTampered(f"expected handshake message {tag}, got {body[0]}")
    return body


def _derive(secret: bytes, transcript: bytes) -> tuple[bytes, bytes]:
    okm = HKDF(
        algorithm=hashes.SHA256(),
        length=64,
        salt=hashlib.sha256(transcript).digest(),
        info=b"teeplc channel v1",
    ).derive(secret)
    return okm[:32], okm[32:]  # initiator->responder, responder->initiator


def handshake(transport, my_identity: PeerIdentity, trusted_peers: TrustSet, role: str,
              timeline=None, seal_cost=DEFAULT_SEAL_NS, open_cost=DEFAULT_OPEN_NS,
              timeout: float | None = 2.0) -> SecureSession:
    """Run the mutual handshake; returns an established session.

    On any failure the transport is closed so the peer fails fast instead of
    waiting on a dead handshake.
    """
    if role not in ("initiator", "responder"):
        raise ValueError(f"bad role {role!r}")
    if hasattr(transport, "settimeout"):
        transport.settimeout(timeout)
    try:
        if role == "initiator":
            return _initiate(transport, my_identity, trusted_peers,
                             timeline, seal_cost, open_cost)
        return _respond(transport, my_identity, trusted_peers, timeline, seal_cost, open_cost)
    except BaseException:
        transport.close()
        raise


def _initiate(transport, me, trusted, timeline, seal_cost, open_cost):
    eph = X25519PrivateKey.generate()
    hello = bytes([HELLO]) + public_bytes(eph) + os.urandom(32)
    _send_msg(transport, hello)
    reply = _recv_msg(transport, REPLY, REPLY_SIZE)
    eph_r, id_r, sig_r = reply[1:33], reply[65:97], reply[97:]
    if not verify_signature(id_r, sig_r, hashlib.sha256(b"R" + hello + reply[:97]).digest()):
        raise HandshakeTampered("responder signature invalid")
    if id_r not in trusted:
        raise PeerNotTrusted(f"responder key {id_r.hex()[:16]} not trusted")
    finish_head = bytes([FINISH]) + me.public_key
    sig_i = me.sign(hashlib.sha256(b"I" + hello + reply + me.public_key).digest())
    finish = finish_head + sig_i
    _send_msg(transport, finish)
    try:
        secret = eph.exchange(X25519PublicKey.from_public_bytes(eph_r))
    except ValueError as exc:
        raise HandshakeTampered("degenerate key share") from exc
    k_ir, k_ri = _derive(secret, hello + reply + finish)
    return SecureSession(k_ir, k_ri, PeerIdentity(trusted.name_of(id_r), id_r),
                         timeline, seal_cost, open_cost)


def _respond(transport, me, trusted, timeline, seal_cost, open_cost):
    hello = _recv_msg(transport, HELLO, HELLO_SIZE)
    eph = X25519PrivateKey.generate()
    reply_head = bytes([REPLY]) + public_bytes(eph) + os.urandom(32) + me.public_key
    reply = reply_head + me.sign(hashlib.sha256(b"R" + hello + reply_head).digest())
    _send_msg(transport, reply)
    finish = _recv_msg(transport, FINISH, FINISH_SIZE)
    id_i, sig_i = finish[1:33], finish[33:]
    if not verify_signature(id_i, sig_i, hashlib.sha256(b"I" + hello + reply + id_i).digest()):
        raise HandshakeTampered("initiator signature invalid")
    if id_i not in trusted:
        raise PeerNotTrusted(f"initiator key {id_i.hex()[:16]} not trusted")
    try:
        secret = eph.exchange(X25519PublicKey.from_public_bytes(hello[1:33]))
    except ValueError as exc:
        raise HandshakeTampered("degenerate key share") from exc
    k_ir, k_ri = _derive(secret, hello + reply + finish)
    return SecureSession(k_ri, k_ir, PeerIdentity(trusted.name_of(id_i), id_i),
                         timeline, seal_cost, open_cost)


def seal(session: SecureSession, plaintext: bytes) -> bytes:
    return session.seal(plaintext)


def open_record(session: SecureSession, record: bytes) -> bytes:
    return session.open(record)
