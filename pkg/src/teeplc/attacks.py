"""Attack injectors and the security-matrix runner.

The attacker has root in the normal world and a position on the plant
network. Each capability is an explicit hook:

* link interposer: a TCP proxy on the PLC-to-slave path that can rewrite
  replies (false data injection)
* filesystem: read/write access to the device directory (logic injection,
  theft)
* normal-world memory: the runtime's ``NormalView`` (I/O memory tampering,
  theft)
* the supplicant daemon (denial of service)

Verdicts come from evidence only:

* ``not_applicable``: the attack had nothing to act on (no byte changed,
  dead target, no credentials in play)
* ``succeeded``: there is a concrete witness (diverged actuator write, leaked
  byte offset, lost cycles)
* ``blocked``: otherwise
"""
from __future__ import annotations

import hashlib
import json
import os
import socket
import threading
from dataclasses import dataclass, field

from .deploy import Deployment
from .logic import LocatedAddress, LogicSyntaxError, parse
from .modbus.server import bind_listener
from .plant import TankScenario
from .runtime import ConfigError, RuntimeHooks, SnapshotBank, TaFailure
from .securechan import PeerIdentity
from .tas import SNAPSHOT_HEADER
from .worldsim import TaManifest, seal_body, sign_manifest

BLOCKED, SUCCEEDED, NOT_APPLICABLE = "blocked", "succeeded", "not_applicable"
SECURE_BOOT = "secure_boot"

VECTORS = {
    "a": "false_data_injection",
    "b": "logic_injection",
    "c": "logic_theft",
    "d": "io_memory_manipulation",
    "e": "data_theft",
    "f": "firmware_modification",
}
LABELS = {
    "a": "(a) False Data Injection",
    "b": "(b) Control Logic Injection",
    "c": "(c) Control Logic Theft",
    "d": "(d) I/O Memory Manipulation",
    "e": "(e) Data Theft",
    "f": "(f) Firmware Modification",
}

# Expected verdict per (vector, mode). Blank cells = not protected = succeeded.
EXPECTED = {
    ("a", "baseline"): SUCCEEDED, ("a", "minimal"): SUCCEEDED, ("a", "enhanced"): BLOCKED,
    ("b", "baseline"): SUCCEEDED, ("b", "minimal"): BLOCKED, ("b", "enhanced"): BLOCKED,
    ("c", "baseline"): SUCCEEDED, ("c", "minimal"): BLOCKED, ("c", "enhanced"): BLOCKED,
    ("d", "baseline"): SUCCEEDED, ("d", "minimal"): SUCCEEDED, ("d", "enhanced"): BLOCKED,
    ("e", "baseline"): NOT_APPLICABLE, ("e", "minimal"): NOT_APPLICABLE, ("e", "enhanced"): BLOCKED,
    ("f", "baseline"): SECURE_BOOT, ("f", "minimal"): SECURE_BOOT, ("f", "enhanced"): SECURE_BOOT,
}

DEFAULT_CYCLES = 40
CANARY_PREFIX = "CANARY"


class AddressUnknown(ValueError):
    pass


class MatrixMismatch(AssertionError):
    def __init__(self, cells):
        self.cells = cells
        super().__init__("matrix differs at " + ", ".join(
            f"({v}) {m}: got {got}, expected {exp}" for v, m, got, exp in cells))


def vector_key(name: str) -> str:
    """Accept ``a``..``f`` or the long vector name."""
    name = name.strip().lower()
    if name in VECTORS:
        return name
    for k, v in VECTORS.items():
        if v == name:
            return k
    raise ConfigError(f"unknown attack vector {name!r}")


@dataclass
class AttackScenario:
    vector: str
    mode: str
    params: dict = field(default_factory=dict)
    expected: str = ""

    def __post_init__(self):
        self.vector = vector_key(self.vector)
        if self.mode not in ("baseline", "minimal", "enhanced"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.expected:
            self.expected = EXPECTED[(self.vector, self.mode)]


@dataclass
class AttackOutcome:
    vector: str
    mode: str
    verdict: str
    evidence: dict

    @property
    def evidence_hash(self) -> str:
        blob = json.dumps(self.evidence, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_json(self) -> dict:
        return {"vector": self.vector, "name": VECTORS.get(self.vector, self.vector), "mode": self.mode,
                "verdict": self.verdict, "evidence": self.evidence,
                "evidence_hash": self.evidence_hash}


def _divergence(golden: bytes, observed: bytes) -> dict | None:
    """First differing actuator write, or None if the streams are identical."""
    if golden == observed:
        return None
    g, o = json.loads(golden), json.loads(observed)
    for i, (a, b) in enumerate(zip(g, o)):
        if a != b:
            return {"index": i, "golden": a, "observed": b}
    return {"index": min(len(g), len(o)), "golden_len": len(g), "observed_len": len(o)}


def _scenario(seed):
    # constant zero demand: whatever the PLC keeps as last-known input is also the truth
    return TankScenario(seed, demand="off")


def _golden(mode, seed, cycles) -> bytes:
    dep = Deployment(_scenario(seed), mode, seed=seed)
    try:
        dep.run(cycles)
        return dep.actuator_stream()
    finally:
        dep.close()


# -- link interposer --------------------------------------------------------

class BitFlip:
    """XOR ``mask`` into byte ``offset`` of a message.

    Offset 9 of a read-coils reply is the first coil data byte; inside a
    secure record it lands in the sequence number.
    """

    def __init__(self, offset: int = 9, mask: int = 0x01):
        self.offset, self.mask = offset, mask

    def __call__(self, msg: bytes) -> bytes:
        if self.offset >= len(msg):
            return msg
        out = bytearray(msg)
        out[self.offset] ^= self.mask
        return bytes(out)

    def __repr__(self):
        return f"BitFlip({self.offset}, {self.mask:#x})"


def identity(msg: bytes) -> bytes:
    return msg


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def _read_message(sock, framing, handshake_phase):
    if framing == "mbap":
        head = _recv_exact(sock, 7)
        if head is None:
            return None
        rest = _recv_exact(sock, int.from_bytes(head[4:6], "big") - 1)
        return None if rest is None else head + rest
    if handshake_phase:
        head = _recv_exact(sock, 4)
        if head is None:
            return None
        body = _recv_exact(sock, int.from_bytes(head, "big"))
        return None if body is None else head + body
    head = _recv_exact(sock, 12)
    if head is None:
        return None
    body = _recv_exact(sock, int.from_bytes(head[:4], "big"))
    return None if body is None else head + body


class Interposer:
    """Message-aware TCP proxy; rewrites slave-to-PLC application messages.

    ``framing`` is ``mbap`` for plaintext Modbus or ``secure`` for the
    channel (handshake messages pass untouched, records are mutated).
    ``window`` restricts mutation to reply indexes ``start <= i < stop``.
    """

    def __init__(self, upstream, framing: str, mutate=identity, window=None):
        if framing not in ("mbap", "secure"):
            raise ConfigError(f"unknown framing {framing!r}")
        self.upstream = upstream
        self.framing = framing
        self.mutate = mutate
        self.window = window
        self.listener = bind_listener()
        self.address = self.listener.getsockname()[:2]
        self.replies = 0
        self.mutated = 0
        self._socks = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        threading.Thread(target=self._accept, daemon=True).start()

    def _accept(self):
        self.listener.settimeout(0.05)
        while not self._stop.is_set():
            try:
                client, _ = self.listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                server = socket.create_connection(self.upstream, timeout=2)
                server.settimeout(None)
            except OSError:
                client.close()
                continue
            client.settimeout(None)
            self._socks += [client, server]
            threading.Thread(target=self._pump, args=(client, server, False), daemon=True).start()
            threading.Thread(target=self._pump, args=(server, client, True), daemon=True).start()

    def _pump(self, src, dst, reply_direction):
        handshake_left = (1 if reply_direction else 2) if self.framing == "secure" else 0
        try:
            while True:
                msg = _read_message(src, self.framing, handshake_left > 0)
                if msg is None:
                    break
                if handshake_left:
                    handshake_left -= 1
                elif reply_direction:
                    msg = self._rewrite(msg)
                dst.sendall(msg)
        except OSError:
            pass
        finally:
            for s in (src, dst):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    def _rewrite(self, msg):
        with self._lock:
            index = self.replies
            self.replies += 1
        if self.window is not None and not self.window[0] <= index < self.window[1]:
            return msg
        out = self.mutate(msg)
        if out != msg:
            with self._lock:
                self.mutated += 1
        return out

    def route(self, host, port):
        """``Deployment.redirect`` callable; the real address is the upstream."""
        return self.address

    def stop(self):
        self._stop.set()
        self.listener.close()
        for s in self._socks:
            try:
                s.close()
            except OSError:
                pass


# -- (a) false data injection -------------------------------------------------

def mitm_tamper(mode: str, link: str = "demand", mutation=None, *, seed: int = 0,
                cycles: int = DEFAULT_CYCLES, window=None) -> AttackOutcome:
    mutation = BitFlip() if mutation is None else mutation
    golden = _golden(mode, seed, cycles)
    framing = "secure" if mode == "enhanced" else "mbap"
    holder = {}

    def route(host, port):
        holder["proxy"] = Interposer((host, port), framing, mutation, window)
        return holder["proxy"].address

    dep = Deployment(_scenario(seed), mode, seed=seed, redirect={link: route})
    try:
        reports = dep.run(cycles)
        observed = dep.actuator_stream()
        proxy = holder["proxy"]
        evidence = {
            "link": link,
            "mutation": repr(mutation),
            "replies_seen": proxy.replies,
            "replies_mutated": proxy.mutated,
            "stale_cycles": sum(r.stale_inputs for r in reports),
            "records_rejected": dep.runtime.rejected_records if mode == "enhanced" else 0,
            "divergence": _divergence(golden, observed),
        }
    finally:
        dep.close()
        if "proxy" in holder:
            holder["proxy"].stop()
    if evidence["replies_mutated"] == 0:
        verdict = NOT_APPLICABLE
    elif evidence["divergence"]:
        verdict = SUCCEEDED
    else:
        verdict = BLOCKED
    return AttackOutcome("a", mode, verdict, evidence)


# -- (d) I/O memory manipulation ----------------------------------------------

def _snapshot_bit_offset(shape, index, output=False):
    base = SNAPSHOT_HEADER.size + 8
    if output:
        base += (shape.input_bits + 7) // 8
    return base + index // 8, 1 << (index % 8)


class _Tamper(RuntimeHooks):
    def __init__(self, loc, value, window):
        self.loc, self.value, self.window = loc, value, window
        self.writes = []  # (cycle, where)
        self._view = None

    def _active(self, cycle):
        return self.window is None or self.window[0] <= cycle < self.window[1]

    def _apply(self, view, cycle):
        image = view.image
        if image is not None:
            if self.loc.width == "X":
                image.input_bits[self.loc.index] = self.value
            else:
                image.input_words[self.loc.index] = self.value & 0xFFFF
            self.writes.append((cycle, "process_image"))
            return
        # enhanced: the only I/O data in normal memory is the published snapshot
        shm = view.shm
        data = shm.read_normal()
        if not data or self.loc.width != "X":
            return
        shape = view._rt.shape
        offset, mask = _snapshot_bit_offset(shape, self.loc.index)
        byte = data[offset] | mask if self.value else data[offset] & ~mask
        view.write_snapshot(offset, bytes([byte]))
        self.writes.append((cycle, "snapshot"))

    def before_logic(self, view, cycle):
        self._view = view
        if self._active(cycle):
            self._apply(view, cycle)

    def after_cycle(self, report):
        # re-apply so the tamper persists in whatever the normal world can see
        if self._view is not None and self._active(report.cycle_number):
            self._apply(self._view, report.cycle_number)


def tamper_io_memory(mode: str, address: str = "%IX0.0", value: int = 1, *, seed: int = 0,
                     cycles: int = DEFAULT_CYCLES, window=None) -> AttackOutcome:
    try:
        loc = LocatedAddress.parse(address)
    except LogicSyntaxError as exc:
        raise AddressUnknown(str(exc)) from exc
    if loc.direction != "I":
        raise AddressUnknown(f"{address} is not an input location")
    scenario = _scenario(seed)
    program = parse(scenario.program())
    live = any(d.location == loc for d in program.located)
    golden = _golden(mode, seed, cycles)
    hook = _Tamper(loc, value, window)
    dep = Deployment(scenario, mode, seed=seed, hooks=hook)
    try:
        dep.setup()
        rt = dep.make_runtime(cycles)
        shape = rt.shape
        limit = shape.input_bits if loc.width == "X" else shape.input_words
        if loc.index >= limit:
            raise AddressUnknown(f"{address} outside the process image")
        list(rt.run())
        observed = dep.actuator_stream()
        scada = SnapshotBank(rt.latest_snapshot)
        scada_value = None
        if loc.width == "X":
            scada_value = scada.read("coils", shape.output_bits + loc.index, 1)[0]
        evidence = {
            "address": str(loc),
            "live_input": live,
            "tamper_writes": len(hook.writes),
            "tamper_targets": sorted({w for _, w in hook.writes}),
            "scada_reads_tampered": scada_value == (1 if value else 0) if scada_value is not None else None,
            "divergence": _divergence(golden, observed),
        }
    finally:
        dep.close()
    if not live or not hook.writes:
        verdict = NOT_APPLICABLE
    elif evidence["divergence"]:
        verdict = SUCCEEDED
    else:
        verdict = BLOCKED
    return AttackOutcome("d", mode, verdict, evidence)


# -- (b) logic injection -------------------------------------------------------

def rogue_program(source: str) -> str:
    """Same program with every BOOL output inverted at the end of the scan."""
    prog = parse(source)
    flips = [f"{d.name} := NOT {d.name};" for d in prog.declarations
             if d.location is not None and d.location.direction == "Q" and d.type == "BOOL"]
    head, _, _ = source.rpartition("END_PROGRAM")
    return head + "\n".join(flips) + "\nEND_PROGRAM\n"


def inject_logic(mode: str, *, seed: int = 0, cycles: int = DEFAULT_CYCLES) -> AttackOutcome:
    golden = _golden(mode, seed, cycles)
    scenario = _scenario(seed)
    rogue = rogue_program(scenario.program())
    attempts = []
    observed = None
    dep = Deployment(scenario, mode, seed=seed, version=2)
    try:
        dep.setup()
        if mode == "baseline":
            with open(dep.program_path, "w") as fh:
                fh.write(rogue)
            dep.run(cycles)
            observed = dep.actuator_stream()
            attempts.append({"variant": "overwrite_program_file", "result": "loaded"})
        else:
            # admit version 2 once so the ledger has history, as on a deployed device
            legit_v2 = open(dep.manifest_path, "rb").read()
            legit_v1 = dep.install_ta(1, scenario.program())
            dep.world.ledger.admit(dep.uid, 2)
            attacker = PeerIdentity.generate("attacker", f"attacker:{seed}".encode())
            fake_key = hashlib.sha256(f"attacker-ta:{seed}".encode()).digest()
            payload = json.dumps({"kind": "logic-only" if mode == "minimal" else "scan-cycle",
                                  "program": rogue}).encode()
            body = seal_body(payload, fake_key, dep.uid)
            genuine = TaManifest.from_bytes(legit_v2)
            tampered = bytearray(genuine.body)
            tampered[len(tampered) // 2] ^= 0x01
            variants = {
                "unsigned": TaManifest(dep.uid, 3, body, b"").to_bytes(),
                "self_signed": sign_manifest(TaManifest(dep.uid, 3, body, b""), attacker).to_bytes(),
                "body_tampered": TaManifest(dep.uid, genuine.version, bytes(tampered),
                                            genuine.signature).to_bytes(),
                "downgrade": legit_v1,
            }
            for name, blob in variants.items():
                with open(dep.manifest_path, "wb") as fh:
                    fh.write(blob)
                try:
                    dep.run(cycles)
                except TaFailure as exc:
                    attempts.append({"variant": name, "result": type(exc.__cause__).__name__})
                    dep.runtime = None
                    continue
                attempts.append({"variant": name, "result": "loaded"})
                observed = dep.actuator_stream()
                break
    finally:
        dep.close()
    divergence = _divergence(golden, observed) if observed is not None else None
    evidence = {"attempts": attempts, "divergence": divergence}
    verdict = SUCCEEDED if divergence else BLOCKED
    return AttackOutcome("b", mode, verdict, evidence)


# -- (c) logic theft and (e) credential theft ---------------------------------

def _scan(artifacts: dict, needles: dict) -> list:
    hits = []
    for where in sorted(artifacts):
        blob = artifacts[where]
        for label, needle in needles.items():
            pos = blob.find(needle)
            if pos >= 0:
                hits.append({"artifact": where, "needle": label, "offset": pos})
    return hits


def steal_logic_and_keys(mode: str, vector: str = "c", *, seed: int = 0,
                         cycles: int = 5) -> AttackOutcome:
    """Scan every normal-world file and buffer after a short run."""
    vector = vector_key(vector)
    if vector not in ("c", "e"):
        raise ConfigError("theft covers vectors c and e")
    canary = f"{CANARY_PREFIX}-{hashlib.sha256(str(seed).encode()).hexdigest()[:16]}"
    scenario = _scenario(seed)
    source = scenario.program()
    scenario.program = lambda: source.replace("END_VAR", f"END_VAR\n(* {canary} *)", 1)
    dep = Deployment(scenario, mode, seed=seed)
    try:
        dep.run(cycles)
        artifacts = dep.normal_world_artifacts()
        keys = dep.keys
        if vector == "c":
            needles = {"canary": canary.encode(), "source_token": b"END_IF"}
            in_use = True
        else:
            # credentials in play: the channel key exists only where channels are secured
            in_use = dep.channel == "secure"
            raw = [("plc_key", keys.plc.private_key), ("ta_key", keys.ta_key),
                   ("device_key", keys.device_key)]
            needles = {}
            for label, k in raw:
                needles[label] = k
                needles[label + "_hex"] = k.hex().encode()
        hits = _scan(artifacts, needles)
    finally:
        dep.close()
    evidence = {"artifacts_scanned": sorted(artifacts), "credentials_in_use": in_use, "leaks": hits}
    if not in_use:
        verdict = NOT_APPLICABLE
    elif hits:
        verdict = SUCCEEDED
    else:
        verdict = BLOCKED
    return AttackOutcome(vector, mode, verdict, evidence)


# -- availability ---------------------------------------------------------------

class _Killer(RuntimeHooks):
    def __init__(self, dep, at_cycle, restore_after):
        self.dep, self.at, self.restore_after = dep, at_cycle, restore_after
        self.killed_at = None

    def after_cycle(self, report):
        world = self.dep.world
        n = report.cycle_number
        if n == self.at:
            world.kill_supplicant()
            self.killed_at = n
        if self.killed_at is not None and self.restore_after is not None \
                and n >= self.killed_at + self.restore_after:
            world.restore_supplicant()


def kill_supplicant(mode: str, *, seed: int = 0, cycles: int = 20, at_cycle: int = 5,
                    restore_after: int | None = None) -> AttackOutcome:
    """Kill the normal-world daemon after cycle ``at_cycle``.

    ``restore_after=0`` restores it before the next cycle starts; ``None``
    never restores.
    """
    if mode == "baseline":
        return AttackOutcome("availability", mode, NOT_APPLICABLE, {"reason": "no secure world"})
    dep = Deployment(_scenario(seed), mode, seed=seed)
    dep.user_hooks = killer = _Killer(dep, at_cycle, restore_after)
    completed, failure = 0, None
    try:
        dep.setup()
        try:
            for _ in dep.make_runtime(cycles).run():
                completed += 1
        except TaFailure as exc:
            failure = type(exc.__cause__).__name__
    finally:
        dep.close()
    lost = cycles - completed
    evidence = {"killed_after_cycle": killer.killed_at, "cycles_completed": completed,
                "cycles_lost": lost, "failure": failure}
    return AttackOutcome("availability", mode, SUCCEEDED if lost else BLOCKED, evidence)


# -- (f) ------------------------------------------------------------------------

def firmware_stub(mode: str, *, seed: int = 0) -> AttackOutcome:
    """Boot chain is not simulated; record the load-time check that remains."""
    note = "secure boot - out of scope, not simulated"
    evidence = {"note": note}
    if mode != "baseline":
        dep = Deployment(_scenario(seed), mode, seed=seed)
        try:
            dep.setup()
            genuine = TaManifest.from_bytes(open(dep.manifest_path, "rb").read())
            body = bytearray(genuine.body)
            body[0] ^= 0xFF
            try:
                dep.world.load_ta(TaManifest(genuine.uuid, genuine.version, bytes(body), genuine.signature))
                evidence["load_time_check"] = "accepted"
            except Exception as exc:
                evidence["load_time_check"] = type(exc).__name__
        finally:
            dep.close()
    return AttackOutcome("f", mode, SECURE_BOOT, evidence)


# -- matrix ---------------------------------------------------------------------

def run_vector(vector: str, mode: str, *, seed: int = 0) -> AttackOutcome:
    v = vector_key(vector)
    if v == "a":
        return mitm_tamper(mode, seed=seed)
    if v == "b":
        return inject_logic(mode, seed=seed)
    if v in ("c", "e"):
        return steal_logic_and_keys(mode, v, seed=seed)
    if v == "d":
        return tamper_io_memory(mode, seed=seed)
    return firmware_stub(mode, seed=seed)


@dataclass
class Matrix:
    modes: list
    vectors: list
    cells: dict  # (vector, mode) -> AttackOutcome

    def mismatches(self) -> list:
        out = []
        for (v, m), outcome in sorted(self.cells.items()):
            exp = EXPECTED[(v, m)]
            if outcome.verdict != exp:
                out.append((v, m, outcome.verdict, exp))
        return out

    def to_json(self) -> dict:
        return {
            "modes": self.modes,
            "vectors": self.vectors,
            "cells": [dict(self.cells[(v, m)].to_json(), expected=EXPECTED[(v, m)])
                      for v in self.vectors for m in self.modes],
            "match": not self.mismatches(),
        }

    def render(self) -> str:
        return render_matrix(self)


def run_matrix(modes=("minimal", "enhanced"), vectors=("a", "b", "c", "d", "e", "f"), *,
               seed: int = 0, check: bool = True) -> Matrix:
    vectors = [vector_key(v) for v in vectors]
    for m in modes:
        if m not in ("baseline", "minimal", "enhanced"):
            raise ConfigError(f"unknown mode {m!r}")
    cells = {}
    for v in vectors:
        for m in modes:
            AttackScenario(v, m)  # validates and declares the expected verdict
            cells[(v, m)] = run_vector(v, m, seed=seed)
    matrix = Matrix(list(modes), vectors, cells)
    if check and matrix.mismatches():
        raise MatrixMismatch(matrix.mismatches())
    return matrix


CELL_TEXT = {BLOCKED: "✓", SUCCEEDED: "", NOT_APPLICABLE: "(N/A)", SECURE_BOOT: "Secure Boot"}


def render_matrix(matrix: Matrix) -> str:
    head = ["Security Goal"] + [m.capitalize() for m in matrix.modes]
    rows = [[LABELS[v]] + [CELL_TEXT[matrix.cells[(v, m)].verdict] for m in matrix.modes]
            for v in matrix.vectors]
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]

    def line(cells):
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(head), "-+-".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    out.append("")
    out.append("✓ = attack blocked; blank = not protected (attack succeeded); "
               "(N/A) = not applicable; Secure Boot = delegated to secure boot, not simulated")
    return "\n".join(out) + "\n"


def write_matrix(matrix: Matrix, path) -> None:
    base, _ = os.path.splitext(os.fspath(path))
    os.makedirs(os.path.dirname(os.path.abspath(base)), exist_ok=True)
    with open(base + ".json", "w") as fh:
        json.dump(matrix.to_json(), fh, indent=2, sort_keys=True)
    with open(base + ".txt", "w") as fh:
        fh.write(matrix.render())
