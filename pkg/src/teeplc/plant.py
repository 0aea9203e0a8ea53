"""Plant simulators exposed as Modbus slaves.

Dynamics are first-order and deterministic for a given seed. Each scenario
owns one :class:`RegisterBank` per slave endpoint; the PLC sees the plant only
through those banks. Stepping is driven externally (lock-step with the scan
loop in every harness here), so a run is reproducible cycle for cycle.
"""
from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field, replace

from .logic import GEN_THRESHOLD, TANK_HIGH, TANK_LOW, bundled, copy_program
from .modbus import Hooks, ModbusServer, RegisterBank, SocketTransport
from .securechan import PeerIdentity, SecureStream, TrustSet, handshake
from .slaveio import SlaveBinding

LEVEL_SCALE = 1000  # level register is per-mille of capacity
BANK_SIZE = 8


# -- tank ---------------------------------------------------------------------

@dataclass(frozen=True)
class TankState:
    level: float = 0.5
    demand: bool = False
    pump_on: bool = False
    motor_on: bool = False
    inflow_rate: float = 0.1  # fraction of capacity per second, motor valve open
    outflow_rate: float = 0.05  # fraction per second while pumping to a demand
    t: float = 0.0


class DemandSchedule:
    """Seeded on/off square wave with random segment lengths (seconds)."""

    def __init__(self, seed: int = 0, min_len: float = 2.0, max_len: float = 12.0,
                 start: bool = True, mode: str = "schedule"):
        if mode not in ("schedule", "on", "off"):
            raise ValueError(f"unknown demand mode {mode!r}")
        self.mode = mode
        self._rng = random.Random(seed)
        self._min, self._max = min_len, max_len
        self._edges: list[float] = [0.0]
        self._start = start

    def at(self, t: float) -> bool:
        if self.mode != "schedule":
            return self.mode == "on"
        while self._edges[-1] <= t:
            self._edges.append(self._edges[-1] + self._rng.uniform(self._min, self._max))
        # index of the segment containing t
        segment = sum(1 for e in self._edges[1:] if e <= t)
        return self._start if segment % 2 == 0 else not self._start


def step_tank(state: TankState, dt: float, pump_cmd: bool, motor_cmd: bool,
              demand_schedule: DemandSchedule | None = None) -> TankState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    inflow = state.inflow_rate * dt if motor_cmd else 0.0
    outflow = state.outflow_rate * dt if (pump_cmd and state.demand) else 0.0
    level = min(max(state.level + inflow - outflow, 0.0), 1.0)
    t = state.t + dt
    demand = state.demand if demand_schedule is None else demand_schedule.at(t)
    return replace(state, level=level, demand=demand, pump_on=bool(pump_cmd),
                   motor_on=bool(motor_cmd), t=t)


# -- generators ----------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorState:
    speed1: int = 5000  # grid-side reference
    speed2: int = 4000  # newly started generator
    cb1_closed: bool = False
    cb2_closed: bool = False
    drift_rate: float = 100.0  # units per second toward speed1
    noise: int = 0  # bounded uniform noise on speed2, +/- units per step
    t: float = 0.0


def step_generators(state: GeneratorState, dt: float, cb_cmds,
                    rng: random.Random | None = None) -> GeneratorState:
    """Apply breaker commands, then advance the speeds by ``dt``.

    With both breakers closed the generator is locked to the grid.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cb1, cb2 = (bool(c) for c in cb_cmds)
    if cb1 and cb2:
        speed2 = state.speed1
    else:
        gap = state.speed1 - state.speed2
        move = min(abs(gap), int(round(state.drift_rate * dt)))
        speed2 = state.speed2 + (move if gap > 0 else -move)
        if state.noise and rng is not None:
            speed2 += rng.randint(-state.noise, state.noise)
        speed2 = min(max(speed2, 0), 0xFFFF)
    return replace(state, speed2=speed2, cb1_closed=cb1, cb2_closed=cb2, t=state.t + dt)


# -- scenarios -----------------------------------------------------------------

@dataclass
class Endpoint:
    name: str
    role: str  # sensor | actuator
    bank: RegisterBank
    map: list  # [(located address, remote address)]


class _WriteRecorder(Hooks):
    def __init__(self, scenario, name):
        self.scenario, self.name = scenario, name

    def on_write(self, table, address, values):
        self.scenario._record_write(self.name, table, address, values)


class Scenario:
    """A plant plus its slave endpoints. Subclasses define wiring and dynamics."""

    name = "scenario"

    def __init__(self):
        self.endpoints: dict[str, Endpoint] = {}
        self.step_count = 0
        self.writes: list = []  # actuator writes as received by the slaves
        self._lock = threading.Lock()

    def _endpoint(self, name, role, mapping):
        self.endpoints[name] = Endpoint(name, role, RegisterBank(coils=BANK_SIZE, holding_registers=BANK_SIZE),
                                        list(mapping))

    def _record_write(self, name, table, address, values):
        with self._lock:
            self.writes.append([self.step_count, name, table, address, list(values)])

    def hooks_for(self, name) -> Hooks:
        if self.endpoints[name].role == "actuator":
            return _WriteRecorder(self, name)
        return Hooks()

    def actuator_stream(self) -> bytes:
        """Canonical bytes of every actuator write so far."""
        with self._lock:
            return json.dumps(self.writes, separators=(",", ":")).encode()

    def bindings(self, addresses: dict, channel: str = "plain") -> list[SlaveBinding]:
        out = []
        for ep in self.endpoints.values():
            host, port = addresses[ep.name]
            out.append(SlaveBinding(ep.name, ep.role, host, port, 1, channel, list(ep.map)))
        return out

    def program(self) -> str:
        raise NotImplementedError

    def publish(self) -> None:
        """Copy plant state into the sensor banks."""
        raise NotImplementedError

    def step(self, dt: float) -> None:
        raise NotImplementedError


class TankScenario(Scenario):
    """Filling tank: level sensor, demand sensor, inlet motor M, outlet pump P."""

    name = "tank"

    def __init__(self, seed: int = 0, state: TankState | None = None, demand: str = "schedule"):
        super().__init__()
        self.schedule = DemandSchedule(seed, mode=demand)
        state = state or TankState()
        self.state = replace(state, demand=self.schedule.at(state.t))
        self.history: list[TankState] = [self.state]
        self._endpoint("level", "sensor", [("%IW0", 0)])
        self._endpoint("demand", "sensor", [("%IX0.0", 0)])
        self._endpoint("motor", "actuator", [("%QX0.0", 0)])
        self._endpoint("pump", "actuator", [("%QX0.1", 0)])
        self.publish()

    def program(self) -> str:
        return bundled("tank")

    band = (TANK_LOW, TANK_HIGH)

    def level_register(self) -> int:
        return int(round(self.state.level * LEVEL_SCALE))

    def publish(self) -> None:
        self.endpoints["level"].bank.write("holding_registers", 0, [self.level_register()])
        self.endpoints["demand"].bank.write("coils", 0, [int(self.state.demand)])

    def step(self, dt: float) -> None:
        motor = self.endpoints["motor"].bank.read("coils", 0, 1)[0]
        pump = self.endpoints["pump"].bank.read("coils", 0, 1)[0]
        with self._lock:
            self.state = step_tank(self.state, dt, pump, motor, self.schedule)
            self.step_count += 1
        self.history.append(self.state)
        self.publish()


class GeneratorScenario(Scenario):
    """Two IEDs: each reports one speed and drives one breaker."""

    name = "generator"

    def __init__(self, seed: int = 0, state: GeneratorState | None = None):
        super().__init__()
        self.rng = random.Random(seed)
        if state is None:
            state = GeneratorState(speed2=4000 + self.rng.randint(-300, 300), noise=3)
        self.state = state
        self.threshold = GEN_THRESHOLD
        self.closures: list[tuple[int, int]] = []  # (step, |delta| seen at the closing step)
        self._endpoint("ied1_speed", "sensor", [("%IW0", 0)])
        self._endpoint("ied2_speed", "sensor", [("%IW1", 0)])
        self._endpoint("ied1_breaker", "actuator", [("%QX0.0", 0)])
        self._endpoint("ied2_breaker", "actuator", [("%QX0.1", 0)])
        self.publish()

    def program(self) -> str:
        return bundled("generator")

    def publish(self) -> None:
        self.endpoints["ied1_speed"].bank.write("holding_registers", 0, [self.state.speed1])
        self.endpoints["ied2_speed"].bank.write("holding_registers", 0, [self.state.speed2])

    def step(self, dt: float) -> None:
        cb1 = self.endpoints["ied1_breaker"].bank.read("coils", 0, 1)[0]
        cb2 = self.endpoints["ied2_breaker"].bank.read("coils", 0, 1)[0]
        before = self.state
        with self._lock:
            self.state = step_generators(before, dt, (cb1, cb2), self.rng)
            self.step_count += 1
        closing = (self.state.cb1_closed and not before.cb1_closed) or \
                  (self.state.cb2_closed and not before.cb2_closed)
        if closing:
            self.closures.append((self.step_count, abs(before.speed1 - before.speed2)))
        self.publish()


class PairsScenario(Scenario):
    """Benchmark plant: N sensor/actuator pairs, actuator k should mirror sensor k."""

    name = "pairs"

    def __init__(self, pairs: int = 1, seed: int = 0, toggle_probability: float = 0.1):
        super().__init__()
        if pairs < 1:
            raise ValueError("pairs must be >= 1")
        self.pairs = pairs
        self.rng = random.Random(seed)
        self.p = toggle_probability
        self.values = [0] * pairs
        for k in range(pairs):
            self._endpoint(f"sensor{k}", "sensor", [(f"%IX{k // 8}.{k % 8}", 0)])
        for k in range(pairs):
            self._endpoint(f"actuator{k}", "actuator", [(f"%QX{k // 8}.{k % 8}", 0)])
        self.publish()

    def program(self) -> str:
        return copy_program(self.pairs)

    def publish(self) -> None:
        for k, v in enumerate(self.values):
            self.endpoints[f"sensor{k}"].bank.write("coils", 0, [v])

    def step(self, dt: float) -> None:
        with self._lock:
            self.values = [v ^ (self.rng.random() < self.p) for v in self.values]
            self.step_count += 1
        self.publish()


SCENARIOS = {"tank": TankScenario, "generator": GeneratorScenario, "pairs": PairsScenario}


def make_scenario(name: str, seed: int = 0, pairs: int = 1, **options) -> Scenario:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}")
    if name == "pairs":
        return PairsScenario(pairs, seed, **options)
    return SCENARIOS[name](seed, **options)


# -- slaves --------------------------------------------------------------------

def slave_identity(name: str, seed: int) -> PeerIdentity:
    return PeerIdentity.generate(f"slave:{name}", f"{seed}:slave:{name}".encode())


class SlaveCluster:
    """Running Modbus servers for every endpoint of a scenario."""

    def __init__(self, scenario: Scenario, servers: dict, identities: dict):
        self.scenario = scenario
        self.servers = servers
        self.identities = identities

    @property
    def addresses(self) -> dict:
        return {name: srv.address for name, srv in self.servers.items()}

    def public_keys(self) -> list:
        return [ident.public() for ident in self.identities.values()]

    def stop(self) -> None:
        for srv in self.servers.values():
            srv.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def expose_slaves(scenario: Scenario, channel: str = "plain", *, plc_public=None,
                  seed: int = 0, host: str = "127.0.0.1", ports: dict | None = None,
                  one_way_delay: float = 0.0) -> SlaveCluster:
    """Start one Modbus server per endpoint.

    ``channel="secure"`` makes every slave a handshake responder that only
    trusts ``plc_public``. ``one_way_delay`` (seconds) is added in each
    direction on the wall clock; the virtual clock charges link costs itself.
    """
    if channel not in ("plain", "secure"):
        raise ValueError(f"unknown channel {channel!r}")
    if channel == "secure" and plc_public is None:
        raise ValueError("secure slaves need the PLC public key")
    ports = ports or {}
    servers, identities = {}, {}
    try:
        for name in scenario.endpoints:
            ident = slave_identity(name, seed)
            identities[name] = ident
            wrap = None
            if channel == "secure":
                wrap = _responder(ident, TrustSet([plc_public]))
            srv = ModbusServer(scenario.endpoints[name].bank, host, ports.get(name, 0),
                               hooks=scenario.hooks_for(name), wrap=wrap,
                               response_delay=2 * one_way_delay)
            servers[name] = srv.start()
    except BaseException:
        for srv in servers.values():
            srv.stop()
        raise
    return SlaveCluster(scenario, servers, identities)


def _responder(identity, trusted):
    def wrap(sock):
        transport = SocketTransport(sock, timeout=None)
        session = handshake(transport, identity, trusted, "responder", timeout=2.0)
        transport.settimeout(None)
        return SecureStream(transport, session)
    return wrap
