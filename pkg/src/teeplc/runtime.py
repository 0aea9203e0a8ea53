"""Scan-cycle runtime in baseline, minimal and enhanced deployments.

Per cycle: read sensors, evaluate logic, write actuators, publish a snapshot.
Where each step runs depends on the mode:

=========  ==================  ==================  ==================
step       baseline            minimal             enhanced
=========  ==================  ==================  ==================
read       normal world        normal world        TA (one EXEC call)
logic      normal world        TA_CONTROL_LOGIC    TA
write      normal world        normal world        TA
snapshot   normal memory       shared memory       shared memory
=========  ==================  ==================  ==================
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

from .clock import MS, CycleReport, Timeline, precise_sleep
from .logic import AddressOutOfRange, ImageShape, ProcessImage, eval_cycle, load_program
from .modbus import BankRangeError, ModbusServer
from .securechan import PeerIdentity
from .slaveio import SlaveBinding, SlaveIO
from .tas import (
    FLAG_STALE,
    TA_CONTROL_LOGIC,
    TA_SCAN_CYCLE_EXEC,
    TA_SCAN_CYCLE_EXIT,
    TA_SCAN_CYCLE_INIT,
    Snapshot,
    snapshot_size,
)
from .worldsim import SharedMemoryRegion, WorldError, WorldSwitchConfig, build_manifest

log = logging.getLogger(__name__)

MODES = ("baseline", "minimal", "enhanced")
TA_KIND = {"minimal": "logic-only", "enhanced": "scan-cycle"}


class ConfigError(ValueError):
    pass


class TaFailure(RuntimeError):
    """The secure world stopped answering or faulted; the scan loop aborts."""


@dataclass
class ScanConfig:
    interval: int = 20 * MS  # ns
    cycle_limit: int | None = None
    slaves: list = field(default_factory=list)  # [SlaveBinding]
    mode: str = "baseline"
    world: WorldSwitchConfig = field(default_factory=WorldSwitchConfig)
    timeout: float = 0.5  # per Modbus transaction, seconds

    def __post_init__(self):
        if not isinstance(self.interval, int) or self.interval <= 0:
            raise ConfigError(f"interval must be a positive number of ns, got {self.interval!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.cycle_limit is not None and self.cycle_limit < 0:
            raise ConfigError("cycle_limit must be >= 0")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        names = [b.name for b in self.slaves]
        if len(set(names)) != len(names):
            raise ConfigError("slave names must be unique")


def image_shape(bindings) -> ImageShape:
    """Image banks sized to cover every wired location (bits rounded up to bytes)."""
    top = {("I", "X"): 0, ("Q", "X"): 0, ("I", "W"): 0, ("Q", "W"): 0}
    for b in bindings:
        for e in b.map:
            key = (e.local.direction, e.local.width)
            top[key] = max(top[key], e.local.index + 1)

    def bits(n):
        return max(8, (n + 7) // 8 * 8)

    return ImageShape(bits(top[("I", "X")]), bits(top[("Q", "X")]), top[("I", "W")], top[("Q", "W")])


def check_program(source: str, shape: ImageShape):
    try:
        return load_program(source, shape)
    except AddressOutOfRange as exc:
        raise ConfigError(f"program uses a location no slave is wired to: {exc}") from exc


def build_payload(mode: str, source: str, bindings, *, plc_identity: PeerIdentity | None = None,
                  slave_keys=(), timeout: float = 0.5) -> dict:
    """TA body for a TEE deployment. Bindings are frozen in here at build time."""
    if mode not in TA_KIND:
        raise ConfigError(f"no TA for mode {mode!r}")
    shape = image_shape(bindings)
    check_program(source, shape)
    payload = {"kind": TA_KIND[mode], "program": source, "shape": list(shape.__dict__.values())}
    if mode == "enhanced":
        if plc_identity is None or plc_identity.private_key is None:
            raise ConfigError("enhanced TA needs the PLC channel key")
        payload.update(
            bindings=[b.to_json() for b in bindings],
            plc_key=plc_identity.private_key.hex(),
            slave_keys=[(k.public_key if isinstance(k, PeerIdentity) else bytes(k)).hex() for k in slave_keys],
            timeout=timeout,
        )
    return payload


def build_ta(mode, source, bindings, uid: bytes, version: int, authority, ta_key: bytes, **kw) -> bytes:
    return build_manifest(uid, version, build_payload(mode, source, bindings, **kw), authority, ta_key).to_bytes()


class RuntimeHooks:
    """Instrumentation points. ``before_logic`` is where normal-world code may
    touch normal-world buffers between input acquisition and logic."""

    def before_logic(self, view: "NormalView", cycle: int) -> None:
        pass

    def after_cycle(self, report: CycleReport) -> None:
        pass


class NormalView:
    """Everything normal-world software can reach inside the running PLC.

    Accesses are stamped with ``perf_counter_ns`` so tests can check that none
    of them overlaps a secure-world execution interval.
    """

    def __init__(self, runtime: "PlcRuntime"):
        self._rt = runtime
        self.accesses: list[tuple[int, str]] = []

    def _touch(self, what):
        self.accesses.append((time.perf_counter_ns(), what))

    @property
    def image(self) -> ProcessImage | None:
        """The normal-world process image (None when it lives in the secure world)."""
        self._touch("image")
        return self._rt.image if self._rt.config.mode != "enhanced" else None

    @property
    def shm(self) -> SharedMemoryRegion | None:
        self._touch("shm")
        return self._rt.shm

    def write_snapshot(self, offset: int, data: bytes) -> None:
        self._touch("snapshot")
        rt = self._rt
        if rt.shm is not None:
            rt.shm.normal_write(offset, data)
        else:
            buf = bytearray(rt.snapshot_buffer)
            buf[offset:offset + len(data)] = data
            rt.snapshot_buffer = bytes(buf)

    def artifacts(self) -> dict:
        """Name -> bytes for every in-memory artifact the normal world holds."""
        rt = self._rt
        out = {}
        if rt.config.mode != "enhanced" and rt.image is not None:
            out["mem:process_image"] = rt.image.to_bytes()
        if rt.snapshot_buffer:
            out["mem:snapshot"] = rt.snapshot_buffer
        if rt.shm is not None:
            out["mem:shm"] = bytes(rt.shm.normal_buffer)
        if rt.source is not None:
            out["mem:logic_source"] = rt.source.encode()
        if rt.manifest is not None:
            out["mem:manifest"] = bytes(rt.manifest)
        for i, (ep, params, outputs) in enumerate(rt.param_trace[-4:]):
            blob = b"".join(p for p in list(params) + list(outputs) if isinstance(p, bytes))
            out[f"mem:invoke{i}:{ep}"] = blob
        out["mem:config"] = json.dumps([b.to_json() for b in rt.config.slaves]).encode()
        if rt.world is not None:
            out["mem:secure_storage_backing"] = rt.world.storage_backing_bytes()
        return out


class PlcRuntime:
    """One scan loop. Use :meth:`run` as an iterator of :class:`CycleReport`."""

    def __init__(self, config: ScanConfig, *, source: str | None = None, source_path=None,
                 manifest: bytes | None = None, manifest_path=None, world=None,
                 timeline: Timeline | None = None, hooks: RuntimeHooks | None = None):
        self.config = config
        self.timeline = timeline or (world.timeline if world is not None else Timeline())
        self.hooks = hooks or RuntimeHooks()
        self.world = world
        self.mode = config.mode
        if self.mode == "baseline":
            if source is None and source_path is None:
                raise ConfigError("baseline needs program source")
        else:
            if world is None:
                raise ConfigError(f"{self.mode} mode needs a world simulator")
            if manifest is None and manifest_path is None:
                raise ConfigError(f"{self.mode} mode needs a TA manifest")
        self._source_arg, self._source_path = source, source_path
        self._manifest_arg, self._manifest_path = manifest, manifest_path
        self.source: str | None = None
        self.manifest: bytes | None = None
        self.shape = image_shape(config.slaves)
        self.image = ProcessImage.zeros(self.shape)
        self.snapshot_buffer = b""
        self.shm: SharedMemoryRegion | None = None
        self.session = None
        self.io: SlaveIO | None = None
        self.bound = None
        self.param_trace: list = []  # (entry point, params, outputs) in normal memory
        self.view = NormalView(self)
        self.started = False
        self.cycles_done = 0
        self.rejected_records = 0

    # -- lifecycle

    def start(self) -> None:
        cfg = self.config
        if self.mode == "baseline":
            if self._source_path is not None:
                with open(self._source_path) as fh:
                    self.source = fh.read()
            else:
                self.source = self._source_arg
            self.bound = check_program(self.source, self.shape)
        else:
            if self._manifest_path is not None:
                with open(self._manifest_path, "rb") as fh:
                    self.manifest = fh.read()
            else:
                self.manifest = bytes(self._manifest_arg)
            self.shm = SharedMemoryRegion(snapshot_size(self.shape))
            try:
                self.session = self.world.load_ta(self.manifest)
            except WorldError as exc:
                raise TaFailure(f"TA load failed: {type(exc).__name__}: {exc}") from exc
        if self.mode in ("baseline", "minimal"):
            self.io = SlaveIO(cfg.slaves, self.timeline, timeout=cfg.timeout)
            self.io.connect_all()
        else:
            self._invoke(TA_SCAN_CYCLE_INIT, [self.shm])
        self.started = True

    def stop(self) -> None:
        if not self.started:
            return
        self.started = False
        if self.io is not None:
            self.io.close()
        if self.session is not None:
            if self.mode == "enhanced":
                try:
                    self._invoke(TA_SCAN_CYCLE_EXIT, [])
                except TaFailure as exc:
                    log.info("EXIT failed: %s", exc)
            try:
                self.world.close_session(self.session)
            except WorldError as exc:
                log.warning("close_session failed: %s", exc)

    def _invoke(self, entry_point, params):
        try:
            result = self.world.invoke(self.session, entry_point, params)
        except WorldError as exc:
            raise TaFailure(f"{entry_point}: {type(exc).__name__}: {exc}") from exc
        self.param_trace.append((entry_point, tuple(p for p in params if isinstance(p, (bytes, int))),
                                 tuple(result.outputs)))
        del self.param_trace[:-8]
        return result

    # -- scan cycle

    def cycle(self, n: int) -> CycleReport:
        tl = self.timeline
        costs = tl.costs
        start = tl.begin_cycle()
        stale = False
        try:
            if self.mode == "enhanced":
                self.hooks.before_logic(self.view, n)
                result = self._invoke(TA_SCAN_CYCLE_EXEC, [n])
                stale = bool(result.outputs[0] & FLAG_STALE)
                self.rejected_records = result.outputs[1]
            else:
                stale = self.io.read_sensors(self.image)
                self.hooks.before_logic(self.view, n)
                if self.mode == "baseline":
                    with tl.phase("logic_exec", costs.logic_exec):
                        self.image = eval_cycle(self.bound, self.image)
                else:
                    result = self._invoke(TA_CONTROL_LOGIC, [self.image.to_bytes(), n, self.shm])
                    self.image = ProcessImage.from_bytes(result.outputs[0])
                self.io.write_actuators(self.image)
                if self.mode == "baseline":
                    with tl.phase("snapshot_publish", costs.snapshot_publish):
                        self.snapshot_buffer = Snapshot(n, self.image.copy(), tl.now_ns()).to_bytes()
        except BaseException:
            tl.end_cycle()
            raise
        total = tl.now_ns() - start
        report = CycleReport(n, start, total, tl.end_cycle(), total > self.config.interval, stale)
        self.cycles_done += 1
        self.hooks.after_cycle(report)
        self._pace(start, total)
        return report

    def _pace(self, start: int, total: int) -> None:
        remaining = self.config.interval - total
        if self.timeline.virtual:
            self.timeline.sleep_ns(remaining)
        else:
            remaining = start + self.config.interval - self.timeline.now_ns()
            if remaining > 0:
                precise_sleep(remaining)

    def run(self):
        """Start, yield one report per cycle until ``cycle_limit``, then stop."""
        self.start()
        try:
            n = 0
            limit = self.config.cycle_limit
            while limit is None or n < limit:
                yield self.cycle(n)
                n += 1
        finally:
            self.stop()

    def latest_snapshot(self) -> bytes:
        """Snapshot bytes as the normal world currently sees them."""
        if self.shm is not None:
            return self.shm.read_normal()
        return self.snapshot_buffer


def run(config: ScanConfig, source: str | None = None, **kw):
    return PlcRuntime(config, source=source, **kw).run()


# -- SCADA ---------------------------------------------------------------------

class SnapshotBank:
    """Read-only Modbus view of the latest snapshot.

    Coils are output bits followed by input bits; holding registers are
    output words followed by input words.
    """

    def __init__(self, source):
        self.source = source  # callable -> snapshot bytes

    def _tables(self):
        data = self.source()
        if not data:
            return {"coils": [], "holding_registers": []}
        snap = Snapshot.from_bytes(data)
        img = snap.image
        return {"coils": img.output_bits + img.input_bits,
                "holding_registers": img.output_words + img.input_words}

    def read(self, table, address, count):
        data = self._tables().get(table)
        if data is None or address < 0 or count < 1 or address + count > len(data):
            raise BankRangeError(f"{table}[{address}:{address + count}] not in snapshot")
        return data[address:address + count]

    def write(self, table, address, values):
        raise BankRangeError("SCADA interface is read-only")


def scada_serve(snapshot_source, host: str = "127.0.0.1", port: int = 0) -> ModbusServer:
    """Start the read-only SCADA server; it never calls into the secure world."""
    return ModbusServer(SnapshotBank(snapshot_source), host, port, read_only=True).start()


__all__ = [
    "ConfigError", "MODES", "NormalView", "PlcRuntime", "RuntimeHooks", "ScanConfig",
    "SlaveBinding", "Snapshot", "SnapshotBank", "TaFailure", "build_payload", "build_ta",
    "image_shape", "run", "scada_serve",
]
