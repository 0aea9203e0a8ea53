"""Command-line entry point: ``teeplc <command> [options]``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import attacks, bench
from . import config as configmod
from .deploy import Deployment, DeviceKeys, ta_uuid
from .logic import LogicError
from .plant import expose_slaves, make_scenario, slave_identity
from .runtime import ConfigError, TaFailure, build_ta, scada_serve
from .securechan import PeerIdentity
from .worldsim import WorldError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_LOGIC = 4
EXIT_TA = 5
EXIT_MISMATCH = 6
EXIT_IO = 7
EXIT_BENCH = 8
EXIT_SIGNING = 9
EXIT_ATTACK = 10


class SigningError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("pair counts must be positive")
    return values


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _load(args, **extra) -> configmod.RunConfig:
    cfg = configmod.load(args.config)
    overrides = dict(mode=getattr(args, "mode", None), cycles=args.cycles, seed=args.seed,
                     clock=args.clock)
    pairs = getattr(args, "pairs", None)
    if isinstance(pairs, int):
        overrides["pairs"] = pairs
    overrides.update(extra)
    return configmod.apply_overrides(cfg, **overrides)


def _read_hex_key(path: str, size: int = 32) -> bytes:
    try:
        with open(path) as fh:
            key = bytes.fromhex(fh.read().strip())
    except (OSError, ValueError) as exc:
        raise SigningError(f"cannot read key {path}: {exc}") from exc
    if len(key) != size:
        raise SigningError(f"key {path} must be {size} bytes, got {len(key)}")
    return key


def _output(path):
    if path in (None, "-"):
        return sys.stdout, False
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return open(path, "w"), True


def _deployment(cfg, **kw) -> Deployment:
    return Deployment(cfg.scenario, cfg.mode, seed=cfg.seed, clock=cfg.clock, costs=cfg.costs,
                      world_config=cfg.world_config(), interval=cfg.interval_ns, pairs=cfg.pairs,
                      one_way_delay=cfg.one_way_delay_ms / 1000, timeout=cfg.timeout_s, **kw)


# -- commands ----------------------------------------------------------------------

def cmd_plant(args) -> int:
    cfg = _load(args)
    scenario = make_scenario(cfg.scenario, seed=cfg.seed, pairs=cfg.pairs)
    ports = {name: cfg.base_port + i for i, name in enumerate(scenario.endpoints)}
    channel = "secure" if cfg.mode == "enhanced" else "plain"
    plc = _plc_identity(cfg)
    cluster = expose_slaves(scenario, channel, plc_public=plc.public(), seed=cfg.seed,
                            host=cfg.host, ports=ports, one_way_delay=cfg.one_way_delay_ms / 1000)
    for name, (host, port) in cluster.addresses.items():
        ep = scenario.endpoints[name]
        print(f"{name:14s} {ep.role:8s} {host}:{port} {channel}", flush=True)
    dt = cfg.interval_ms / 1000
    try:
        n = 0
        while cfg.cycles == 0 or n < cfg.cycles:
            time.sleep(dt)
            scenario.step(dt)
            n += 1
    except KeyboardInterrupt:
        pass
    finally:
        cluster.stop()
    return EXIT_OK


def _plc_identity(cfg) -> PeerIdentity:
    if "plc" in cfg.keys:
        return PeerIdentity.from_private("plc", _read_hex_key(cfg.key_path("plc")))
    return DeviceKeys.from_seed(cfg.seed).plc


def cmd_run(args) -> int:
    cfg = _load(args)
    dep = _deployment(cfg)
    out, close = _output(args.out)
    server = None
    try:
        dep.setup()
        rt = dep.make_runtime(cfg.cycles)
        if cfg.scada_port is not None:
            server = scada_serve(rt.latest_snapshot, cfg.host, cfg.scada_port)
        for report in rt.run():
            out.write(json.dumps(report.to_json(), sort_keys=True) + "\n")
    finally:
        if server is not None:
            server.stop()
        dep.close()
        if close:
            out.close()
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _load(args)
    if args.vector == "availability":
        outcome = attacks.kill_supplicant(cfg.mode, seed=cfg.seed)
    else:
        outcome = attacks.run_vector(args.vector, cfg.mode, seed=cfg.seed)
    text = json.dumps(outcome.to_json(), indent=2, sort_keys=True)
    out, close = _output(args.out)
    out.write(text + "\n")
    if close:
        out.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    modes = args.mode or ["enhanced"]
    for m in modes:
        if m not in ("baseline", "minimal", "enhanced"):
            raise ConfigError(f"unknown mode {m!r}")
    cfg = _load(args, mode=modes[0], cycles=args.cycles if args.cycles is not None else bench.MIN_CYCLES)
    pairs = args.pairs or [cfg.pairs]
    stats = []
    for m in modes:
        for p in pairs:
            stats.append(bench.measure(m, p, cfg.cycles, clock=cfg.clock, seed=cfg.seed,
                                       costs=cfg.costs, world_config=cfg.world_config(),
                                       interval=cfg.interval_ns,
                                       one_way_delay=cfg.one_way_delay_ms / 1000))
    summary = []
    for m in modes:
        series = [s for s in stats if s.mode == m]
        if len({s.pairs for s in series}) >= 3:
            fit = bench.fit_scaling(series)
            summary.append(f"fit {m}: slope {fit.slope:.4f} ms/pair, intercept {fit.intercept:.4f} ms, "
                           f"R^2 {fit.r2:.6f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        bench.emit(stats, "csv", os.path.join(args.out, "bench.csv"))
        bench.emit(stats, "json", os.path.join(args.out, "bench.json"))
        bench.emit(stats, "text", os.path.join(args.out, "bench.txt"))
        bench.emit(stats, "plot", os.path.join(args.out, "bench.png"))
        bench.write_reports([r for s in stats for r in s.reports],
                            os.path.join(args.out, "cycles.jsonl"))
        for s in stats:
            name = f"breakdown_{s.mode}_{s.pairs}.txt"
            with open(os.path.join(args.out, name), "w") as fh:
                fh.write(bench.breakdown_report(s.reports).render())
        with open(os.path.join(args.out, "fit.txt"), "w") as fh:
            fh.write("\n".join(summary) + ("\n" if summary else ""))
    print(",".join(bench.CSV_COLUMNS))
    for s in bench.sort_stats(stats):
        print(f"{s.mode},{s.pairs},{s.avg_ms:.6f},{s.std_ms:.6f},{s.max_ms:.6f}")
    for line in summary:
        print(line)
    return EXIT_OK


def cmd_matrix(args) -> int:
    cfg = _load(args)
    modes = args.modes or ["minimal", "enhanced"]
    vectors = args.vectors or list(attacks.VECTORS)
    matrix = attacks.run_matrix(modes, vectors, seed=cfg.seed, check=False)
    print(matrix.render(), end="")
    if args.out:
        attacks.write_matrix(matrix, args.out)
    bad = matrix.mismatches()
    if bad:
        print(str(attacks.MatrixMismatch(bad)), file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_build_ta(args) -> int:
    cfg = _load(args)
    if cfg.mode == "baseline":
        raise ConfigError("build-ta needs mode minimal or enhanced")
    scenario = make_scenario(cfg.scenario, seed=cfg.seed, pairs=cfg.pairs)
    if args.source:
        with open(args.source) as fh:
            source = fh.read()
    else:
        source = scenario.program()
    channel = "secure" if cfg.mode == "enhanced" else "plain"
    addresses = {name: (cfg.host, cfg.base_port + i) for i, name in enumerate(scenario.endpoints)}
    bindings = scenario.bindings(addresses, channel)
    keys = DeviceKeys.from_seed(cfg.seed)
    authority_path = args.key or (cfg.key_path("authority") if "authority" in cfg.keys else None)
    ta_key_path = args.ta_key or (cfg.key_path("ta") if "ta" in cfg.keys else None)
    authority = (PeerIdentity.from_private("authority", _read_hex_key(authority_path))
                 if authority_path else keys.authority)
    ta_key = _read_hex_key(ta_key_path) if ta_key_path else keys.ta_key
    slave_keys = [slave_identity(name, cfg.seed).public() for name in scenario.endpoints]
    uid = ta_uuid(f"{scenario.name}:{cfg.mode}")
    data = build_ta(cfg.mode, source, bindings, uid, args.version, authority, ta_key,
                    plc_identity=_plc_identity(cfg), slave_keys=slave_keys, timeout=cfg.timeout_s)
    out = args.out or f"{scenario.name}-{cfg.mode}-v{args.version}.ta"
    with open(out, "wb") as fh:
        fh.write(data)
    print(f"wrote {out} ({len(data)} bytes, uuid {uid.hex()}, version {args.version})")
    return EXIT_OK


def cmd_keygen(args) -> int:
    cfg = _load(args)
    keys = DeviceKeys.from_seed(cfg.seed)
    out = args.out or "keys"
    os.makedirs(out, exist_ok=True)
    files = {
        "authority.key": keys.authority.private_key.hex(),
        "authority.pub": keys.authority.public_key.hex(),
        "ta.key": keys.ta_key.hex(),
        "device.key": keys.device_key.hex(),
        "plc.key": keys.plc.private_key.hex(),
    }
    for name, text in files.items():
        with open(os.path.join(out, name), "w") as fh:
            fh.write(text + "\n")
    print(f"wrote {', '.join(sorted(files))} to {out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--cycles", type=int, help="scan cycles (0 = start and stop only)")
    common.add_argument("--seed", type=int, help="seed for every random choice")
    common.add_argument("--clock", choices=("virtual", "wall"))
    common.add_argument("--out", help="output file or directory")

    def with_mode(p):
        p.add_argument("--mode", choices=("baseline", "minimal", "enhanced"))
        return p

    def with_pairs(p):
        p.add_argument("--pairs", type=int, help="sensor/actuator pairs (pairs scenario)")
        return p

    parser = argparse.ArgumentParser(prog="teeplc", description="TEE-backed PLC simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = with_pairs(with_mode(sub.add_parser("plant", parents=[common], help="run plant slaves")))
    p.set_defaults(func=cmd_plant)

    p = with_pairs(with_mode(sub.add_parser("run", parents=[common],
                                            help="run the PLC against an in-process plant")))
    p.set_defaults(func=cmd_run)

    p = with_mode(sub.add_parser("attack", parents=[common], help="run one attack scenario"))
    p.add_argument("--vector", required=True,
                   help="a-f, a long vector name, or 'availability' (kill the supplicant)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", parents=[common], help="latency benchmark")
    p.add_argument("--mode", type=_str_list, help="comma-separated modes (default enhanced)")
    p.add_argument("--pairs", type=_int_list, help="comma-separated pair counts, e.g. 1,2,4,8")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("matrix", parents=[common], help="security matrix")
    p.add_argument("--modes", type=_str_list, help="comma-separated modes (default minimal,enhanced)")
    p.add_argument("--vectors", type=_str_list, help="comma-separated vectors (default a-f)")
    p.set_defaults(func=cmd_matrix)

    p = with_pairs(with_mode(sub.add_parser("build-ta", parents=[common], help="build a signed TA manifest")))
    p.add_argument("--source", help="ST source (default: the scenario's bundled program)")
    p.add_argument("--version", type=int, default=1)
    p.add_argument("--key", help="authority signing key (hex)")
    p.add_argument("--ta-key", help="TA body encryption key (hex)")
    p.set_defaults(func=cmd_build_ta)

    p = sub.add_parser("keygen", parents=[common], help="write seed-derived simulation keys")
    p.set_defaults(func=cmd_keygen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        code, exc_ = EXIT_CONFIG, exc
    except LogicError as exc:
        code, exc_ = EXIT_LOGIC, exc
    except (TaFailure, WorldError) as exc:
        code, exc_ = EXIT_TA, exc
    except attacks.MatrixMismatch as exc:
        code, exc_ = EXIT_MISMATCH, exc
    except (bench.InsufficientCycles, bench.DegenerateFit) as exc:
        code, exc_ = EXIT_BENCH, exc
    except SigningError as exc:
        code, exc_ = EXIT_SIGNING, exc
    except attacks.AddressUnknown as exc:
        code, exc_ = EXIT_ATTACK, exc
    except OSError as exc:
        code, exc_ = EXIT_IO, exc
    print(f"error: {type(exc_).__name__}: {exc_}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
