import random
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from teeplc.modbus import ModbusClient, SocketTransport
from teeplc.plant import (
    DemandSchedule,
    GeneratorScenario,
    GeneratorState,
    PairsScenario,
    TankScenario,
    TankState,
    expose_slaves,
    make_scenario,
    step_generators,
    step_tank,
)


def test_tank_fill_step():
    s = step_tank(TankState(level=0.5, inflow_rate=0.1), 1.0, pump_cmd=False, motor_cmd=True)
    assert s.level == pytest.approx(0.6, abs=1e-12)


def test_tank_clamps_full():
    assert step_tank(TankState(level=1.0), 1.0, False, True).level == 1.0


def test_tank_clamps_empty():
    s = step_tank(TankState(level=0.01, demand=True), 1.0, True, False)
    assert s.level == 0.0


def test_tank_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        step_tank(TankState(), 0, False, False)


@given(st.floats(0.2, 0.8), st.booleans(), st.booleans(), st.booleans(), st.floats(0.001, 1.0))
def test_tank_mass_balance(level, demand, pump, motor, dt):
    s = TankState(level=level, demand=demand)
    nxt = step_tank(s, dt, pump, motor)
    expected = level + (s.inflow_rate * dt if motor else 0) - (s.outflow_rate * dt if pump and demand else 0)
    assert nxt.level == pytest.approx(min(max(expected, 0), 1), abs=1e-12)


def test_demand_schedule_deterministic():
    a, b = DemandSchedule(7), DemandSchedule(7)
    ts = [i * 0.37 for i in range(200)]
    assert [a.at(t) for t in ts] == [b.at(t) for t in ts]
    assert len({a.at(t) for t in ts}) == 2


def test_generator_linear_drift():
    s = step_generators(GeneratorState(5000, 4000, drift_rate=100), 1.0, (False, False))
    assert s.speed2 == 4100


def test_generator_lock():
    s = step_generators(GeneratorState(5000, 4990), 0.02, (True, True))
    assert s.speed1 == s.speed2 == 5000


def test_generator_no_overshoot():
    s = step_generators(GeneratorState(5000, 4950), 1.0, (False, False))
    assert s.speed2 == 5000


@given(st.integers(0, 2**31))
def test_generator_noise_bounded(seed):
    rng = random.Random(seed)
    s0 = GeneratorState(5000, 4000, noise=3)
    s1 = step_generators(s0, 0.02, (False, False), rng)
    assert abs(s1.speed2 - (4000 + 2)) <= 3


def trajectory(seed, commands):
    scen = TankScenario(seed)
    for motor, pump in commands:
        scen.endpoints["motor"].bank.write("coils", 0, [motor])
        scen.endpoints["pump"].bank.write("coils", 0, [pump])
        scen.step(0.02)
    return scen.history


@given(st.integers(0, 1000), st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), max_size=50))
def test_tank_deterministic_under_seed(seed, commands):
    assert trajectory(seed, commands) == trajectory(seed, commands)


def test_pairs_endpoint_count():
    assert len(PairsScenario(4).endpoints) == 8
    assert len(make_scenario("pairs", pairs=3).endpoints) == 6


def client(addr):
    return ModbusClient(SocketTransport.connect(*addr))


def test_sensor_read_after_state_change():
    scen = TankScenario(0)
    cluster = expose_slaves(scen)
    try:
        c = client(cluster.addresses["level"])
        assert c.read_holding_registers(0, 1) == [500]
        scen.endpoints["motor"].bank.write("coils", 0, [1])
        scen.step(1.0)
        assert c.read_holding_registers(0, 1) == [600]
        c.close()
    finally:
        cluster.stop()


def test_actuator_writes_are_recorded():
    scen = GeneratorScenario(0)
    cluster = expose_slaves(scen)
    try:
        c = client(cluster.addresses["ied1_breaker"])
        c.write_coils(0, [1])
        c.close()
    finally:
        cluster.stop()
    assert scen.writes == [[0, "ied1_breaker", "coils", 0, [1]]]
    assert b"ied1_breaker" in scen.actuator_stream()


def test_injected_rtt():
    scen = PairsScenario(1)
    cluster = expose_slaves(scen, one_way_delay=0.0006)
    try:
        c = client(cluster.addresses["sensor0"])
        c.read_coils(0, 1)
        t0 = time.perf_counter()
        c.read_coils(0, 1)
        assert time.perf_counter() - t0 >= 0.0012
        c.close()
    finally:
        cluster.stop()


def test_secure_slaves_need_plc_key():
    with pytest.raises(ValueError):
        expose_slaves(PairsScenario(1), "secure")
