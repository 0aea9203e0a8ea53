"""Trusted applications that run inside the simulated secure world.

Payload fields (sealed in the manifest body):

* ``kind``: ``logic-only`` or ``scan-cycle``
* ``program``: ST source
* ``shape``: process image shape ``[ib, ob, iw, ow]``
* ``bindings`` (scan-cycle): slave bindings, fixed at build time
* ``plc_key`` / ``slave_keys`` (scan-cycle): channel identity and trust anchors
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .logic import ImageShape, ProcessImage, eval_cycle, load_program
from .securechan import PeerIdentity, TrustSet
from .slaveio import SlaveBinding, SlaveIO
from .worldsim import BadParameters, SharedMemoryRegion, TaContext, TrustedApp

TA_CONTROL_LOGIC = "TA_CONTROL_LOGIC"
TA_SCAN_CYCLE_INIT = "TA_SCAN_CYCLE_INIT"
TA_SCAN_CYCLE_EXEC = "TA_SCAN_CYCLE_EXEC"
TA_SCAN_CYCLE_EXIT = "TA_SCAN_CYCLE_EXIT"

FLAG_STALE = 1
FLAG_WRITE_FAILED = 2

SNAPSHOT_HEADER = struct.Struct(">IQ")  # cycle number, timestamp ns


@dataclass
class Snapshot:
    cycle_number: int
    image: ProcessImage
    timestamp: int

    def to_bytes(self) -> bytes:
        return SNAPSHOT_HEADER.pack(self.cycle_number, self.timestamp) + self.image.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Snapshot":
        cycle, ts = SNAPSHOT_HEADER.unpack_from(data)
        return cls(cycle, ProcessImage.from_bytes(data[SNAPSHOT_HEADER.size:]), ts)


def snapshot_size(shape: ImageShape) -> int:
    return SNAPSHOT_HEADER.size + len(ProcessImage.zeros(shape).to_bytes())


def _publish(ctx: TaContext, region, cycle: int, image: ProcessImage) -> None:
    tl = ctx.timeline
    with tl.phase("snapshot_publish", tl.costs.snapshot_publish):
        ctx.publish(region, Snapshot(cycle, image, tl.now_ns()).to_bytes())


class LogicOnlyTA(TrustedApp):
    """Minimal design: only the control logic lives in the secure world.

    ``TA_CONTROL_LOGIC(image, cycle, region)`` evaluates one scan on the
    image passed in and returns the updated image; the snapshot goes out
    through ``region``.
    """

    ENTRY_POINTS = {TA_CONTROL_LOGIC: "control_logic"}

    def __init__(self, payload):
        super().__init__(payload)
        self.shape = ImageShape(*payload["shape"])
        self.bound = load_program(payload["program"], self.shape)

    def control_logic(self, ctx, params):
        if len(params) != 3 or not isinstance(params[0], bytes) or not isinstance(params[1], int) \
                or not isinstance(params[2], SharedMemoryRegion):
            raise BadParameters("expected (image, cycle, region)")
        try:
            image = ProcessImage.from_bytes(params[0])
        except (ValueError, struct.error) as exc:
            raise BadParameters(f"bad process image: {exc}") from exc
        if image.shape != self.shape:
            raise BadParameters(f"image shape {image.shape} != {self.shape}")
        tl = ctx.timeline
        with tl.phase("logic_exec", tl.costs.logic_exec):
            image = eval_cycle(self.bound, image)
        _publish(ctx, params[2], params[1], image)
        return [image.to_bytes()]


class ScanCycleTA(TrustedApp):
    """Enhanced design: slave I/O, channel keys and logic all stay inside."""

    ENTRY_POINTS = {
        TA_SCAN_CYCLE_INIT: "init",
        TA_SCAN_CYCLE_EXEC: "exec_cycle",
        TA_SCAN_CYCLE_EXIT: "exit",
    }

    def __init__(self, payload):
        super().__init__(payload)
        self.shape = ImageShape(*payload["shape"])
        self.bound = load_program(payload["program"], self.shape)
        self.bindings = [SlaveBinding.from_json(b) for b in payload["bindings"]]
        self.io: SlaveIO | None = None
        self.region = None
        self.image = ProcessImage.zeros(self.shape)

    def init(self, ctx, params):
        if len(params) != 1 or not isinstance(params[0], SharedMemoryRegion):
            raise BadParameters("expected (region)")
        self.region = params[0]
        # first start provisions the channel key into secure storage
        key = self.payload.pop("plc_key", None)
        if not ctx.store_contains("tls_key"):
            if key is None:
                raise BadParameters("no channel key provisioned")
            ctx.store_put("tls_key", bytes.fromhex(key))
        identity = PeerIdentity.from_private("plc", ctx.store_get("tls_key"))
        trusted = TrustSet(bytes.fromhex(k) for k in self.payload.get("slave_keys", []))
        self.io = SlaveIO(self.bindings, ctx.timeline, identity=identity, trusted=trusted,
                          timeout=self.payload.get("timeout", 0.5), secure_world=True)
        self.io.connect_all()
        return []

    def exec_cycle(self, ctx, params):
        if self.io is None:
            raise BadParameters("EXEC before INIT")
        if len(params) != 1 or not isinstance(params[0], int):
            raise BadParameters("expected (cycle)")
        tl = ctx.timeline
        stale = self.io.read_sensors(self.image)
        with tl.phase("logic_exec", tl.costs.logic_exec):
            self.image = eval_cycle(self.bound, self.image)
        failed = self.io.write_actuators(self.image)
        _publish(ctx, self.region, params[0], self.image)
        flags = (FLAG_STALE if stale else 0) | (FLAG_WRITE_FAILED if failed else 0)
        return [flags, self.io.rejected]

    def exit(self, ctx, params):
        if self.io is not None:
            self.io.close()
            self.io = None
        return []

    def on_close(self, ctx):
        self.exit(ctx, [])


REGISTRY = {"logic-only": LogicOnlyTA, "scan-cycle": ScanCycleTA}
