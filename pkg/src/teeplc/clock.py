"""Virtual and wall clocks with per-phase latency attribution.

All durations are integer nanoseconds so virtual-clock totals add up exactly.
"""
from __future__ import annotations

import random
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

PHASES = (
    "world_switch",
    "channel_crypto",
    "network_wait",
    "slave_processing",
    "logic_exec",
    "snapshot_publish",
)

US = 1_000
MS = 1_000_000
SECOND = 1_000_000_000


def ms(value: float) -> int:
    return int(round(value * MS))


def us(value: float) -> int:
    return int(round(value * US))


@dataclass
class CostModel:
    """Virtual-clock costs of the simulated platform, in ns.

    ``rtt`` is a 1.2ms LAN round trip and ``logic_exec`` ~5us. ``seal`` and
    ``open`` are per-record AEAD costs on a small ARM core. ``secure_socket``
    is the extra cost of routing a transaction from the secure world through
    the normal-world network stack; 2.45ms makes the per-pair slope gap
    between enhanced and baseline match the reference measurements
    (7.7 vs 2.6 ms per pair, two transactions per pair). ``slave_processing``
    and ``snapshot_publish`` are desk-scale choices.
    """

    rtt: int = 1_200_000
    jitter: int = 50_000  # uniform +/- on each network round trip
    slave_processing: int = 100_000
    logic_exec: int = 5_000
    snapshot_publish: int = 10_000
    seal: int = 60_000
    open: int = 50_000
    secure_socket: int = 2_450_000

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CycleReport:
    cycle_number: int
    start_ns: int
    total_ns: int
    phases: dict = field(default_factory=dict)
    overrun: bool = False
    stale_inputs: bool = False

    @property
    def residual_ns(self) -> int:
        return self.total_ns - sum(self.phases.values())

    def to_json(self) -> dict:
        return {
            "cycle_number": self.cycle_number,
            "start_ns": self.start_ns,
            "total_ns": self.total_ns,
            "phases": {name: self.phases.get(name, 0) for name in PHASES},
            "overrun": self.overrun,
            "stale_inputs": self.stale_inputs,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CycleReport":
        return cls(
            cycle_number=obj["cycle_number"],
            start_ns=obj["start_ns"],
            total_ns=obj["total_ns"],
            phases=dict(obj["phases"]),
            overrun=obj["overrun"],
            stale_inputs=obj["stale_inputs"],
        )


class Timeline:
    """Clock plus phase accounting shared by the runtime, worldsim and channels.

    In ``virtual`` mode time only moves when a cost is charged, so the sum of
    the recorded phases equals the cycle total. In ``wall`` mode phases are
    measured with ``perf_counter_ns``; nested phases are attributed
    exclusively (the parent is credited only with its own time) and injected
    latencies are realised as real sleeps.
    """

    def __init__(self, clock: str = "virtual", costs: CostModel | None = None, seed: int = 0):
        if clock not in ("virtual", "wall"):
            raise ValueError(f"unknown clock mode {clock!r}")
        self.clock = clock
        self.costs = costs or CostModel()
        self.rng = random.Random(seed)
        self._virtual_ns = 0
        self._lock = threading.Lock()
        self._local = threading.local()
        self._acc: dict | None = None

    @property
    def virtual(self) -> bool:
        return self.clock == "virtual"

    def now_ns(self) -> int:
        if self.virtual:
            with self._lock:
                return self._virtual_ns
        return time.perf_counter_ns()

    def sleep_ns(self, duration: int) -> None:
        """Advance time without attributing it to any phase."""
        if duration <= 0:
            return
        if self.virtual:
            with self._lock:
                self._virtual_ns += duration
        else:
            precise_sleep(duration)

    def _stack(self) -> list:
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        return stack

    def _record(self, phase: str, duration: int) -> None:
        with self._lock:
            if self._acc is not None:
                self._acc[phase] = self._acc.get(phase, 0) + duration

    def charge(self, phase: str, duration: int) -> None:
        """Spend ``duration`` ns in ``phase``: virtual advance or real sleep."""
        if duration < 0:
            raise ValueError("negative duration")
        if self.virtual:
            with self._lock:
                self._virtual_ns += duration
            self._record(phase, duration)
            return
        with self.phase(phase):
            precise_sleep(duration)

    @contextmanager
    def phase(self, phase: str, virtual_cost: int = 0):
        """Attribute the enclosed work to ``phase``.

        Virtual mode charges ``virtual_cost`` and ignores real elapsed time;
        wall mode measures the block.
        """
        if self.virtual:
            yield
            if virtual_cost:
                self.charge(phase, virtual_cost)
            return
        stack = self._stack()
        frame = [0]  # time consumed by nested phases
        stack.append(frame)
        start = time.perf_counter_ns()
        try:
            yield
        finally:
            elapsed = time.perf_counter_ns() - start
            stack.pop()
            if stack:
                stack[-1][0] += elapsed
            self._record(phase, max(elapsed - frame[0], 0))

    def transaction_costs(self, secure_world: bool = False) -> dict:
        """Virtual costs of one Modbus request/response."""
        c = self.costs
        with self._lock:
            jitter = self.rng.randint(-c.jitter, c.jitter) if c.jitter else 0
        network = max(c.rtt + jitter, 0) + (c.secure_socket if secure_world else 0)
        return {"network_wait": network, "slave_processing": c.slave_processing}

    def begin_cycle(self) -> int:
        with self._lock:
            self._acc = {}
        return self.now_ns()

    def end_cycle(self) -> dict:
        with self._lock:
            acc, self._acc = self._acc or {}, None
        return {name: acc.get(name, 0) for name in PHASES}


def precise_sleep(duration: int) -> None:
    # time.sleep overshoots badly below ~1ms; spin for the tail
    deadline = time.perf_counter_ns() + duration
    coarse = duration - 1 * MS
    if coarse > 0:
        time.sleep(coarse / SECOND)
    while time.perf_counter_ns() < deadline:
        pass
