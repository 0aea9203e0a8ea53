"""In-process simulation of a TrustZone-style secure world.

The boundary is enforced by API, not by the OS: secure state lives on the
:class:`WorldSimulator` and is reachable only through ``load_ta``/``invoke``
and through a :class:`TaContext` handed to a TA while it executes.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import threading
import time
import uuid as uuidlib
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .clock import Timeline, precise_sleep
from .securechan import PeerIdentity, verify_signature

log = logging.getLogger(__name__)

DEFAULT_ROUND_TRIP_NS = 280_000
DEFAULT_SUPPLICANT_TIMEOUT = 0.1
MAX_PARAMS = 4
MAX_PARAM_BYTES = 4096


class WorldError(Exception):
    pass


class BadSignature(WorldError):
    pass


class VersionRollback(WorldError):
    pass


class UnknownEntryPoint(WorldError):
    pass


class SupplicantDown(WorldError):
    pass


class TaPanic(WorldError):
    pass


class SessionClosed(WorldError):
    pass


class TaBusy(WorldError):
    pass


class BadParameters(WorldError):
    pass


class PayloadTooLarge(WorldError):
    pass


class NotFound(WorldError, KeyError):
    pass


class IsolationViolation(WorldError):
    pass


class ManifestFormatError(WorldError):
    pass


# -- manifests --------------------------------------------------------------

@dataclass
class TaManifest:
    """Signed TA image. ``body`` is the sealed payload as stored on disk."""

    uuid: bytes
    version: int
    body: bytes
    signature: bytes = b""

    def signed_message(self) -> bytes:
        return signed_message(self.uuid, self.version, self.body)

    def to_bytes(self) -> bytes:
        if len(self.uuid) != 16:
            raise ManifestFormatError("uuid must be 16 bytes")
        return (
            self.uuid
            + struct.pack(">II", self.version, len(self.body))
            + self.body
            + struct.pack(">H", len(self.signature))
            + self.signature
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "TaManifest":
        if len(data) < 24:
            raise ManifestFormatError("manifest shorter than fixed header")
        uid = bytes(data[:16])
        version, body_len = struct.unpack(">II", data[16:24])
        end = 24 + body_len
        if len(data) < end + 2:
            raise ManifestFormatError("manifest truncated in body")
        (sig_len,) = struct.unpack(">H", data[end:end + 2])
        if len(data) != end + 2 + sig_len:
            raise ManifestFormatError("manifest length disagrees with signature length")
        return cls(uid, version, bytes(data[24:end]), bytes(data[end + 2:]))

    @property
    def uuid_str(self) -> str:
        return str(uuidlib.UUID(bytes=self.uuid))


def signed_message(uid: bytes, version: int, body: bytes) -> bytes:
    return b"TA-MANIFEST\x00" + uid + struct.pack(">I", version) + body


def sign_manifest(manifest: TaManifest, authority: PeerIdentity) -> TaManifest:
    manifest.signature = authority.sign(manifest.signed_message())
    return manifest


def seal_body(payload: bytes, ta_key: bytes, uid: bytes) -> bytes:
    nonce = os.urandom(12)
    return nonce + ChaCha20Poly1305(ta_key).encrypt(nonce, payload, b"TA-BODY" + uid)


def unseal_body(sealed: bytes, ta_key: bytes, uid: bytes) -> bytes:
    return ChaCha20Poly1305(ta_key).decrypt(sealed[:12], sealed[12:], b"TA-BODY" + uid)


def build_manifest(uid: bytes, version: int, payload: dict, authority: PeerIdentity,
                   ta_key: bytes) -> TaManifest:
    """Encrypt ``payload`` (JSON) under the TA key and sign the result."""
    raw = json.dumps(payload, sort_keys=True).encode()
    return sign_manifest(TaManifest(uid, version, seal_body(raw, ta_key, uid)), authority)


# -- version ledger ---------------------------------------------------------

class VersionLedger:
    """Highest accepted version per TA uuid, optionally persisted as JSON."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = os.fspath(path) if path is not None else None
        self._versions: dict[str, int] = {}
        if self.path and os.path.exists(self.path):
            with open(self.path) as fh:
                self._versions = {k: int(v) for k, v in json.load(fh).items()}

    def get(self, uid: bytes) -> int | None:
        return self._versions.get(uid.hex())

    def admit(self, uid: bytes, version: int) -> None:
        current = self.get(uid)
        if current is not None and version < current:
            raise VersionRollback(f"version {version} < accepted {current}")
        self._versions[uid.hex()] = max(version, current or 0)
        self._save()

    def _save(self) -> None:
        if not self.path:
            return
        tmp = self.path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(self._versions, fh, sort_keys=True)
        os.replace(tmp, self.path)


# -- shared memory ----------------------------------------------------------

class SharedMemoryRegion:
    """One-way window: the secure side publishes, the normal side reads.

    ``normal_buffer`` is the normal world's backing memory. Anything written
    there stays there; the secure side never reads it back.
    """

    def __init__(self, size: int):
        self.size = size
        self._published = b""
        self.normal_buffer = bytearray(size)
        self._lock = threading.Lock()

    def _publish(self, payload: bytes) -> None:
        if len(payload) > self.size:
            raise PayloadTooLarge(f"{len(payload)} > region size {self.size}")
        payload = bytes(payload)
        with self._lock:
            self._published = payload
            buf = bytearray(self.size)
            buf[:len(payload)] = payload
            self.normal_buffer = buf

    def read_normal(self) -> bytes:
        """Normal-world read of the current contents (including any tampering)."""
        with self._lock:
            return bytes(self.normal_buffer[:len(self._published)])

    def normal_write(self, offset: int, data: bytes) -> None:
        with self._lock:
            self.normal_buffer[offset:offset + len(data)] = data


# -- secure storage ---------------------------------------------------------

class SecureStorage:
    """Per-TA sealed key/value store; the backing blob is normal-world visible."""

    def __init__(self, device_key: bytes, path: str | os.PathLike | None = None):
        self._aead = ChaCha20Poly1305(device_key)
        self.path = os.fspath(path) if path is not None else None
        self._blobs: dict[tuple[bytes, str], bytes] = {}
        if self.path and os.path.exists(self.path):
            with open(self.path) as fh:
                for entry in json.load(fh):
                    self._blobs[(bytes.fromhex(entry["owner"]), entry["key"])] = bytes.fromhex(entry["blob"])

    @staticmethod
    def _aad(owner: bytes, key: str) -> bytes:
        return b"SS" + owner + key.encode()

    def put(self, owner: bytes, key: str, value: bytes) -> None:
        nonce = os.urandom(12)
        self._blobs[(owner, key)] = nonce + self._aead.encrypt(nonce, bytes(value), self._aad(owner, key))
        self._save()

    def get(self, owner: bytes, key: str) -> bytes:
        try:
            blob = self._blobs[(owner, key)]
        except KeyError:
            raise NotFound(key) from None
        return self._aead.decrypt(blob[:12], blob[12:], self._aad(owner, key))

    def contains(self, owner: bytes, key: str) -> bool:
        return (owner, key) in self._blobs

    def backing_bytes(self) -> bytes:
        """What the normal world sees on its filesystem."""
        return json.dumps(
            [{"owner": o.hex(), "key": k, "blob": b.hex()} for (o, k), b in sorted(self._blobs.items())],
            sort_keys=True,
        ).encode()

    def _save(self) -> None:
        if self.path:
            with open(self.path, "wb") as fh:
                fh.write(self.backing_bytes())


# -- sessions and execution -------------------------------------------------

@dataclass
class WorldSwitchConfig:
    round_trip_latency: int = DEFAULT_ROUND_TRIP_NS  # ns
    supplicant_alive: bool = True
    supplicant_timeout: float = DEFAULT_SUPPLICANT_TIMEOUT  # s

    def __post_init__(self):
        if self.round_trip_latency < 0:
            raise ValueError("round_trip_latency must be >= 0")


@dataclass
class TaSession:
    session_id: int
    uuid: bytes
    state: str = "open"


@dataclass
class InvokeResult:
    outputs: list
    latency_ns: int
    body_ns: int


@dataclass
class TaContext:
    """Handle given to a TA while it runs. Only valid during that invocation."""

    world: "WorldSimulator"
    uuid: bytes
    session_id: int
    _token: object = field(default=None, repr=False)

    def store_put(self, key: str, value: bytes) -> None:
        self.world.secure_store_put(self, key, value)

    def store_get(self, key: str, owner: bytes | None = None) -> bytes:
        return self.world.secure_store_get(self, key, owner)

    def store_contains(self, key: str) -> bool:
        self.world._check_context(self)
        return self.world._storage.contains(self.uuid, key)

    def publish(self, region: SharedMemoryRegion, payload: bytes) -> None:
        self.world.shm_publish(self, region, payload)

    @property
    def timeline(self) -> Timeline:
        return self.world.timeline


class TrustedApp:
    """Base class for TA code. Subclasses define ``ENTRY_POINTS`` and handlers."""

    ENTRY_POINTS: dict[str, str] = {}  # entry-point id -> method name

    def __init__(self, payload: dict):
        self.payload = payload

    def dispatch(self, ctx: TaContext, entry_point: str, params: list) -> list:
        return getattr(self, self.ENTRY_POINTS[entry_point])(ctx, params)

    def on_close(self, ctx: TaContext) -> None:
        pass


class WorldSimulator:
    """The secure world: signature-gated TA loading and serialized invocation."""

    def __init__(self, authority_key: bytes, ta_key: bytes, *, device_key: bytes | None = None,
                 ledger_path=None, storage_path=None, config: WorldSwitchConfig | None = None,
                 timeline: Timeline | None = None, registry: dict | None = None):
        self.authority_key = bytes(authority_key)
        self._ta_key = bytes(ta_key)
        self.config = config or WorldSwitchConfig()
        self.timeline = timeline or Timeline("virtual")
        self.ledger = VersionLedger(ledger_path)
        self._storage = SecureStorage(device_key or os.urandom(32), storage_path)
        self._registry = dict(registry or {})
        self._exec_lock = threading.Lock()  # the single secure core
        self._state_lock = threading.Lock()
        self._sessions: dict[int, tuple[TaSession, TrustedApp]] = {}
        self._loaded: dict[bytes, int] = {}
        self._next_session = 1
        self._active: TaContext | None = None
        self.trace: list[tuple[int, str]] = []  # (session_id, entry point)
        self.intervals: list[tuple[int, int]] = []  # body (start, end), perf ns

    # -- TA registry -- "code" a manifest kind may name

    def register(self, kind: str, cls: type[TrustedApp]) -> None:
        self._registry[kind] = cls

    def load_ta(self, manifest: TaManifest | bytes) -> TaSession:
        if isinstance(manifest, (bytes, bytearray)):
            manifest = TaManifest.from_bytes(manifest)
        if not manifest.signature or not verify_signature(
                self.authority_key, manifest.signature, manifest.signed_message()):
            raise BadSignature(f"manifest {manifest.uuid_str} signature does not verify")
        current = self.ledger.get(manifest.uuid)
        if current is not None and manifest.version < current:
            raise VersionRollback(
                f"manifest {manifest.uuid_str} version {manifest.version} < accepted {current}")
        with self._state_lock:
            if manifest.uuid in self._loaded:
                raise TaBusy(f"TA {manifest.uuid_str} already has an open session")
        try:
            payload = json.loads(unseal_body(manifest.body, self._ta_key, manifest.uuid))
        except Exception as exc:
            raise BadSignature("TA body does not decrypt under the TA key") from exc
        cls = self._registry.get(payload.get("kind"))
        if cls is None:
            raise ManifestFormatError(f"no TA implementation for kind {payload.get('kind')!r}")
        self.ledger.admit(manifest.uuid, manifest.version)
        app = cls(payload)
        with self._state_lock:
            sid = self._next_session
            self._next_session += 1
            session = TaSession(sid, manifest.uuid)
            self._sessions[sid] = (session, app)
            self._loaded[manifest.uuid] = sid
        return session

    def entry_points(self, session: TaSession) -> frozenset:
        return frozenset(self._sessions[session.session_id][1].ENTRY_POINTS)

    def invoke(self, session: TaSession, entry_point: str, params=()) -> InvokeResult:
        params = list(params)
        if len(params) > MAX_PARAMS:
            raise BadParameters(f"at most {MAX_PARAMS} parameters")
        for p in params:
            if isinstance(p, (bytes, bytearray)):
                if len(p) > MAX_PARAM_BYTES:
                    raise BadParameters("memref parameter too large")
            elif not isinstance(p, (int, SharedMemoryRegion)):  # region = registered memref
                raise BadParameters(f"parameter of type {type(p).__name__} not allowed")
        params = [bytes(p) if isinstance(p, bytearray) else p for p in params]
        entry = self._sessions.get(session.session_id)
        if entry is None or entry[0].state != "open":
            raise SessionClosed(f"session {session.session_id} is not open")
        sess, app = entry
        if entry_point not in app.ENTRY_POINTS:
            raise UnknownEntryPoint(entry_point)
        if not self.config.supplicant_alive:
            self.timeline.sleep_ns(int(self.config.supplicant_timeout * 1e9))
            raise SupplicantDown("no response from the secure world")
        tl = self.timeline
        with self._exec_lock:
            start = tl.now_ns()
            ctx = TaContext(self, sess.uuid, sess.session_id, object())
            self._active = ctx
            self.trace.append((sess.session_id, entry_point))
            body_start = body_end = 0
            try:
                with tl.phase("world_switch"):
                    if tl.virtual:
                        tl.charge("world_switch", self.config.round_trip_latency)
                    body_start = tl.now_ns()
                    perf0 = time.perf_counter_ns()
                    try:
                        outputs = app.dispatch(ctx, entry_point, params)
                    finally:
                        self.intervals.append((perf0, time.perf_counter_ns()))
                    body_end = tl.now_ns()
                    if not tl.virtual:
                        precise_sleep(self.config.round_trip_latency)
            except Exception as exc:
                sess.state = "closed"
                self._release(sess)
                raise TaPanic(f"{entry_point} faulted: {exc!r}") from exc
            finally:
                self._active = None
            latency = tl.now_ns() - start
        return InvokeResult(list(outputs or []), latency, body_end - body_start)

    def close_session(self, session: TaSession) -> None:
        entry = self._sessions.get(session.session_id)
        if entry is None:
            return
        sess, app = entry
        if sess.state == "open":
            with self._exec_lock:
                ctx = TaContext(self, sess.uuid, sess.session_id, object())
                self._active = ctx
                try:
                    app.on_close(ctx)
                finally:
                    self._active = None
            sess.state = "closed"
        self._release(sess)
        session.state = "closed"

    def _release(self, sess: TaSession) -> None:
        with self._state_lock:
            if self._loaded.get(sess.uuid) == sess.session_id:
                del self._loaded[sess.uuid]

    # -- services available to running TAs

    def _check_context(self, ctx) -> None:
        if not isinstance(ctx, TaContext) or ctx is not self._active:
            raise IsolationViolation("secure service requested outside a running TA")

    def secure_store_put(self, ctx: TaContext, key: str, value: bytes) -> None:
        self._check_context(ctx)
        self._storage.put(ctx.uuid, key, value)

    def secure_store_get(self, ctx: TaContext, key: str, owner: bytes | None = None) -> bytes:
        self._check_context(ctx)
        if owner is not None and owner != ctx.uuid:
            raise IsolationViolation("TA may only read its own secure storage")
        return self._storage.get(ctx.uuid, key)

    def shm_publish(self, ctx: TaContext, region: SharedMemoryRegion, payload: bytes) -> None:
        self._check_context(ctx)
        region._publish(payload)

    def storage_backing_bytes(self) -> bytes:
        return self._storage.backing_bytes()

    # -- supplicant (normal-world daemon) control

    def kill_supplicant(self) -> None:
        self.config.supplicant_alive = False

    def restore_supplicant(self) -> None:
        self.config.supplicant_alive = True
