"""Slave bindings and the engine that moves data between slaves and an image.

The same engine runs in the normal world (baseline, minimal) and inside the
scan-cycle TA (enhanced); only the channel type and the cost accounting differ.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .logic import LocatedAddress, ProcessImage
from .modbus import ModbusClient, ModbusError, SocketTransport
from .securechan import ChannelError, PeerIdentity, SecureStream, TrustSet, handshake

log = logging.getLogger(__name__)

TABLE_FOR_WIDTH = {"X": "coils", "W": "holding_registers"}
IO_ERRORS = (ModbusError, ChannelError, OSError)


class BindingError(ValueError):
    pass


@dataclass(frozen=True)
class MapEntry:
    local: LocatedAddress
    address: int  # remote coil / holding register address

    @property
    def table(self) -> str:
        return TABLE_FOR_WIDTH[self.local.width]


@dataclass
class SlaveBinding:
    name: str
    role: str  # "sensor" | "actuator"
    host: str
    port: int
    unit_id: int = 1
    channel: str = "plain"
    map: list = field(default_factory=list)  # [MapEntry]

    def __post_init__(self):
        if self.role not in ("sensor", "actuator"):
            raise BindingError(f"{self.name}: role must be sensor or actuator")
        if self.channel not in ("plain", "secure"):
            raise BindingError(f"{self.name}: channel must be plain or secure")
        if not 0 <= self.unit_id <= 255:
            raise BindingError(f"{self.name}: unit id {self.unit_id} out of range")
        want = "I" if self.role == "sensor" else "Q"
        entries = []
        for e in self.map:
            if not isinstance(e, MapEntry):
                e = MapEntry(LocatedAddress.parse(e[0]) if isinstance(e[0], str) else e[0], int(e[1]))
            if e.local.direction != want:
                raise BindingError(f"{self.name}: {self.role} binding cannot map {e.local}")
            entries.append(e)
        self.map = entries

    def runs(self):
        """Contiguous (table, start, [MapEntry]) groups, one transaction each."""
        out = []
        for table in ("coils", "holding_registers"):
            entries = sorted((e for e in self.map if e.table == table), key=lambda e: e.address)
            for e in entries:
                if out and out[-1][0] == table and out[-1][1] + len(out[-1][2]) == e.address:
                    out[-1][2].append(e)
                else:
                    out.append((table, e.address, [e]))
        return out

    def to_json(self) -> dict:
        return {
            "name": self.name, "role": self.role, "host": self.host, "port": self.port,
            "unit_id": self.unit_id, "channel": self.channel,
            "map": [[str(e.local), e.address] for e in self.map],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SlaveBinding":
        return cls(obj["name"], obj["role"], obj["host"], int(obj["port"]),
                   int(obj.get("unit_id", 1)), obj.get("channel", "plain"),
                   [tuple(m) for m in obj.get("map", [])])


def _get(image: ProcessImage, loc: LocatedAddress) -> int:
    bank = {("I", "X"): image.input_bits, ("Q", "X"): image.output_bits,
            ("I", "W"): image.input_words, ("Q", "W"): image.output_words}[(loc.direction, loc.width)]
    return bank[loc.index]


def _set(image: ProcessImage, loc: LocatedAddress, value: int) -> None:
    if loc.width == "X":
        bank = image.input_bits if loc.direction == "I" else image.output_bits
        bank[loc.index] = 1 if value else 0
    else:
        bank = image.input_words if loc.direction == "I" else image.output_words
        bank[loc.index] = value & 0xFFFF


class SlaveIO:
    """Per-binding Modbus sessions, opened lazily and re-opened after failure.

    ``secure_world`` only selects the per-transaction cost profile on the
    virtual clock. ``identity``/``trusted`` are required for secure bindings.
    """

    def __init__(self, bindings, timeline=None, *, identity: PeerIdentity | None = None,
                 trusted: TrustSet | None = None, timeout: float = 0.5,
                 secure_world: bool = False, handshake_timeout: float = 2.0):
        self.bindings = list(bindings)
        self.sensors = [b for b in self.bindings if b.role == "sensor"]
        self.actuators = [b for b in self.bindings if b.role == "actuator"]
        self.timeline = timeline
        self.identity = identity
        self.trusted = trusted
        self.timeout = timeout
        self.secure_world = secure_world
        self.handshake_timeout = handshake_timeout
        self.clients: dict[str, ModbusClient] = {}
        self.failures: list[tuple[str, str]] = []  # (binding, error name)
        self.rejected_records = 0

    def _link_cost(self):
        return self.timeline.transaction_costs(self.secure_world)

    def _client(self, b: SlaveBinding) -> ModbusClient:
        client = self.clients.get(b.name)
        if client is not None and not client.broken:
            return client
        if client is not None:
            self._drop(b.name)
        transport = SocketTransport.connect(b.host, b.port, self.timeout)
        if b.channel == "secure":
            if self.identity is None or self.trusted is None:
                raise BindingError(f"{b.name}: secure channel needs an identity and trust set")
            tl = self.timeline
            costs = tl.costs if tl is not None else None
            session = handshake(
                transport, self.identity, self.trusted, "initiator", tl,
                costs.seal if costs else 0, costs.open if costs else 0,
                timeout=self.handshake_timeout)
            transport = SecureStream(transport, session)
        client = ModbusClient(transport, b.unit_id, self.timeout, self.timeline,
                              self._link_cost if self.timeline is not None else None)
        self.clients[b.name] = client
        return client

    def _drop(self, name: str) -> None:
        client = self.clients.pop(name, None)
        if client is not None:
            if isinstance(client.transport, SecureStream):
                self.rejected_records += client.transport.rejected
            client.close()

    def connect_all(self) -> None:
        """Open every session up front (handshakes happen here, not mid-cycle)."""
        for b in self.bindings:
            try:
                self._client(b)
            except IO_ERRORS as exc:
                self._fail(b, exc)

    def _fail(self, b, exc) -> None:
        log.debug("slave %s: %s", b.name, exc)
        self.failures.append((b.name, type(exc).__name__))

    def read_sensors(self, image: ProcessImage) -> bool:
        """Fill the input banks in binding order. Returns True if anything is stale.

        On failure the affected inputs keep their last-known values.
        """
        stale = False
        for b in self.sensors:
            try:
                client = self._client(b)
                for table, start, entries in b.runs():
                    if table == "coils":
                        values = client.read_coils(start, len(entries))
                    else:
                        values = client.read_holding_registers(start, len(entries))
                    for e, v in zip(entries, values):
                        _set(image, e.local, v)
            except IO_ERRORS as exc:
                stale = True
                self._fail(b, exc)
        return stale

    def write_actuators(self, image: ProcessImage) -> list[str]:
        """Push the output banks to every actuator; returns names that failed."""
        failed = []
        for b in self.actuators:
            try:
                client = self._client(b)
                for table, start, entries in b.runs():
                    values = [_get(image, e.local) for e in entries]
                    if table == "coils":
                        client.write_coils(start, values)
                    else:
                        client.write_registers(start, values)
            except IO_ERRORS as exc:
                failed.append(b.name)
                self._fail(b, exc)
        return failed

    def close(self) -> None:
        for name in list(self.clients):
            self._drop(name)

    @property
    def rejected(self) -> int:
        live = sum(c.transport.rejected for c in self.clients.values()
                   if isinstance(c.transport, SecureStream))
        return self.rejected_records + live
