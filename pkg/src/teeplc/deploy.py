"""In-process deployment: plant slaves + (world) + runtime, stepped in lock-step.

Everything random derives from one integer seed, so two deployments with
the same arguments produce the same actuator stream.
"""
from __future__ import annotations

import hashlib
import os
import tempfile
import uuid
from dataclasses import dataclass

from .clock import MS, CostModel, Timeline
from .plant import Scenario, expose_slaves, make_scenario
from .runtime import PlcRuntime, RuntimeHooks, ScanConfig, build_ta
from .securechan import PeerIdentity
from .tas import REGISTRY
from .worldsim import WorldSimulator, WorldSwitchConfig

TA_NAMESPACE = uuid.UUID("6f1c3a52-8d0e-4b7a-9a51-2c4e6d8b0f13")


@dataclass(frozen=True)
class DeviceKeys:
    authority: PeerIdentity  # TA signing authority (vendor)
    ta_key: bytes  # TA body encryption key, shared with the device's secure world
    device_key: bytes  # secure storage sealing key
    plc: PeerIdentity  # PLC channel identity

    @classmethod
    def from_seed(cls, seed: int) -> "DeviceKeys":
        def sub(label):
            return hashlib.sha256(f"teeplc:{seed}:{label}".encode()).digest()
        return cls(PeerIdentity.generate("authority", sub("authority")), sub("ta"), sub("device"),
                   PeerIdentity.generate("plc", sub("plc")))


def ta_uuid(name: str) -> bytes:
    return uuid.uuid5(TA_NAMESPACE, name).bytes


class _Chain(RuntimeHooks):
    def __init__(self, *hooks):
        self.hooks = [h for h in hooks if h is not None]

    def before_logic(self, view, cycle):
        for h in self.hooks:
            h.before_logic(view, cycle)

    def after_cycle(self, report):
        for h in self.hooks:
            h.after_cycle(report)


class _Stepper(RuntimeHooks):
    def __init__(self, scenario, dt):
        self.scenario, self.dt = scenario, dt

    def after_cycle(self, report):
        self.scenario.step(self.dt)


class Deployment:
    """A complete PLC installation on one host.

    ``workdir`` is the device's normal-world filesystem: program file
    (baseline), TA manifest, version ledger and secure-storage backing file.
    ``redirect`` maps a slave name to a callable ``(host, port) -> (host, port)``
    so a link can be routed through an interposer.
    """

    def __init__(self, scenario: Scenario | str, mode: str, *, seed: int = 0, clock: str = "virtual",
                 costs: CostModel | None = None, world_config: WorldSwitchConfig | None = None,
                 interval: int = 20 * MS, pairs: int = 1, workdir=None, version: int = 1,
                 redirect: dict | None = None, hooks: RuntimeHooks | None = None,
                 one_way_delay: float = 0.0, timeout: float = 0.5):
        if isinstance(scenario, str):
            scenario = make_scenario(scenario, seed=seed, pairs=pairs)
        self.scenario = scenario
        self.mode = mode
        self.seed = seed
        self.keys = DeviceKeys.from_seed(seed)
        self.timeline = Timeline(clock, costs, seed)
        self.world_config = world_config or WorldSwitchConfig()
        self.interval = interval
        self.version = version
        self.redirect = redirect or {}
        self.user_hooks = hooks
        self.one_way_delay = one_way_delay
        self.timeout = timeout
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="teeplc-")
            workdir = self._tmp.name
        self.workdir = os.fspath(workdir)
        self.cluster = None
        self.world = None
        self.runtime = None
        self.bindings = []
        self.uid = ta_uuid(f"{scenario.name}:{mode}")

    @property
    def channel(self) -> str:
        return "secure" if self.mode == "enhanced" else "plain"

    def path(self, *parts) -> str:
        return os.path.join(self.workdir, *parts)

    @property
    def program_path(self) -> str:
        return self.path("logic.st")

    @property
    def manifest_path(self) -> str:
        return self.path("ta", f"{uuid.UUID(bytes=self.uid)}.ta")

    def setup(self) -> "Deployment":
        """Start slaves and install the program or TA on the device filesystem."""
        self.cluster = expose_slaves(self.scenario, self.channel, plc_public=self.keys.plc.public(),
                                     seed=self.seed, one_way_delay=self.one_way_delay)
        addresses = {}
        for name, (host, port) in self.cluster.addresses.items():
            route = self.redirect.get(name)
            addresses[name] = route(host, port) if route else (host, port)
        self.bindings = self.scenario.bindings(addresses, self.channel)
        source = self.scenario.program()
        if self.mode == "baseline":
            with open(self.program_path, "w") as fh:
                fh.write(source)
        else:
            os.makedirs(self.path("ta"), exist_ok=True)
            self.install_ta(self.version, source)
            self.world = WorldSimulator(
                self.keys.authority.public_key, self.keys.ta_key, device_key=self.keys.device_key,
                ledger_path=self.path("ledger.json"), storage_path=self.path("secure_storage.json"),
                config=self.world_config, timeline=self.timeline, registry=REGISTRY)
        return self

    def install_ta(self, version: int, source: str) -> bytes:
        data = build_ta(self.mode, source, self.bindings, self.uid, version, self.keys.authority,
                        self.keys.ta_key, plc_identity=self.keys.plc,
                        slave_keys=self.cluster.public_keys(), timeout=self.timeout)
        with open(self.manifest_path, "wb") as fh:
            fh.write(data)
        return data

    def make_runtime(self, cycles: int | None) -> PlcRuntime:
        config = ScanConfig(self.interval, cycles, self.bindings, self.mode, self.world_config, self.timeout)
        hooks = _Chain(self.user_hooks, _Stepper(self.scenario, self.interval / 1e9))
        if self.mode == "baseline":
            rt = PlcRuntime(config, source_path=self.program_path, timeline=self.timeline, hooks=hooks)
        else:
            rt = PlcRuntime(config, manifest_path=self.manifest_path, world=self.world,
                            timeline=self.timeline, hooks=hooks)
        self.runtime = rt
        return rt

    def run(self, cycles: int) -> list:
        if self.cluster is None:
            self.setup()
        return list(self.make_runtime(cycles).run())

    def files(self) -> dict:
        """Name -> bytes for every file on the device filesystem."""
        out = {}
        for root, _, names in os.walk(self.workdir):
            for n in names:
                p = os.path.join(root, n)
                with open(p, "rb") as fh:
                    out["file:" + os.path.relpath(p, self.workdir)] = fh.read()
        return out

    def normal_world_artifacts(self) -> dict:
        out = self.files()
        if self.runtime is not None:
            out.update(self.runtime.view.artifacts())
        return out

    def actuator_stream(self) -> bytes:
        return self.scenario.actuator_stream()

    def close(self) -> None:
        if self.runtime is not None and self.runtime.started:
            self.runtime.stop()
        if self.cluster is not None:
            self.cluster.stop()
            self.cluster = None
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def __enter__(self):
        return self.setup()

    def __exit__(self, *exc):
        self.close()


def run_scenario(scenario, mode: str, cycles: int, **kw):
    """Convenience: run ``cycles`` cycles, return (reports, actuator stream, deployment)."""
    dep = Deployment(scenario, mode, **kw)
    try:
        reports = dep.run(cycles)
        return reports, dep.actuator_stream(), dep
    finally:
        dep.close()
