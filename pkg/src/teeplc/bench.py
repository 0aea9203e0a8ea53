"""Latency measurement, phase breakdown and scaling fits."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

from .clock import MS, PHASES, CostModel
from .deploy import Deployment
from .plant import PairsScenario
from .worldsim import WorldSwitchConfig

MIN_CYCLES = 1000
WARMUP = 10
CSV_COLUMNS = ["mode", "pairs", "avg_ms", "std_ms", "max_ms"]
MODE_ORDER = {"baseline": 0, "minimal": 1, "enhanced": 2}


class InsufficientCycles(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


class IoError(OSError):
    pass


@dataclass
class BenchStats:
    mode: str
    pairs: int
    avg_ms: float
    std_ms: float
    max_ms: float
    cycles: int = field(default=0, compare=False)
    reports: list = field(default_factory=list, repr=False, compare=False)

    def row(self) -> dict:
        return {"mode": self.mode, "pairs": self.pairs, "avg_ms": self.avg_ms,
                "std_ms": self.std_ms, "max_ms": self.max_ms}


def summarize(mode: str, pairs: int, reports) -> BenchStats:
    totals = [r.total_ns for r in reports]
    if not totals:
        raise InsufficientCycles("no completed cycles")
    n = len(totals)
    mean = sum(totals) / n
    var = sum((t - mean) ** 2 for t in totals) / n
    return BenchStats(mode, pairs, mean / MS, math.sqrt(var) / MS, max(totals) / MS, n, list(reports))


def measure(mode: str = "enhanced", pairs: int = 1, cycles: int = MIN_CYCLES, *,
            clock: str = "virtual", seed: int = 0, costs: CostModel | None = None,
            world_config: WorldSwitchConfig | None = None, interval: int = 20 * MS,
            warmup: int = WARMUP, min_cycles: int = MIN_CYCLES, one_way_delay: float = 0.0) -> BenchStats:
    """Run ``warmup + cycles`` scans of the pairs benchmark; stats over the last ``cycles``."""
    if cycles < min_cycles:
        raise InsufficientCycles(f"{cycles} cycles < minimum {min_cycles}")
    dep = Deployment(PairsScenario(pairs, seed), mode, seed=seed, clock=clock, costs=costs,
                     world_config=world_config, interval=interval, one_way_delay=one_way_delay)
    try:
        reports = dep.run(warmup + cycles)
    finally:
        dep.close()
    return summarize(mode, pairs, reports[warmup:])


# -- scaling fit ----------------------------------------------------------------

@dataclass
class Fit:
    slope: float
    intercept: float
    r2: float

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept


def fit_scaling(points) -> Fit:
    """Ordinary least squares of avg against pairs.

    ``points`` is a sequence of ``BenchStats`` or ``(pairs, avg)`` tuples.
    Goodness is the coefficient of determination; a perfect fit of a flat
    series counts as 1.
    """
    pts = [(p.pairs, p.avg_ms) if isinstance(p, BenchStats) else (float(p[0]), float(p[1]))
           for p in points]
    if len({x for x, _ in pts}) < 3:
        raise DegenerateFit("need at least 3 distinct pair counts")
    n = len(pts)
    mx = sum(x for x, _ in pts) / n
    my = sum(y for _, y in pts) / n
    sxx = sum((x - mx) ** 2 for x, _ in pts)
    sxy = sum((x - mx) * (y - my) for x, y in pts)
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in pts)
    ss_tot = sum((y - my) ** 2 for _, y in pts)
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return Fit(slope, intercept, r2)


# -- breakdown ------------------------------------------------------------------

@dataclass
class Breakdown:
    cycles: int
    total_us: float
    phases_us: dict
    residual_us: float

    def render(self) -> str:
        width = max(len(p) for p in PHASES + ("residual", "total"))
        lines = [f"{'phase'.ljust(width)}  mean (us)"]
        for p in PHASES:
            lines.append(f"{p.ljust(width)}  {self.phases_us[p]:10.3f}")
        lines.append(f"{'residual'.ljust(width)}  {self.residual_us:10.3f}")
        lines.append(f"{'total'.ljust(width)}  {self.total_us:10.3f}")
        return "\n".join(lines) + "\n"


def breakdown_report(reports) -> Breakdown:
    reports = list(reports)
    if not reports:
        raise InsufficientCycles("breakdown needs at least one cycle")
    n = len(reports)
    phases = {p: sum(r.phases.get(p, 0) for r in reports) / n / 1000 for p in PHASES}
    total = sum(r.total_ns for r in reports) / n / 1000
    residual = sum(r.residual_ns for r in reports) / n / 1000
    return Breakdown(n, total, phases, residual)


# -- emit -----------------------------------------------------------------------

def sort_stats(stats):
    return sorted(stats, key=lambda s: (MODE_ORDER.get(s.mode, 9), s.mode, s.pairs))


def render_table(stats) -> str:
    """Modes as rows, one avg/std/max column group per pair count."""
    stats = sort_stats(stats)
    pair_counts = sorted({s.pairs for s in stats})
    modes = list(dict.fromkeys(s.mode for s in stats))
    by = {(s.mode, s.pairs): s for s in stats}
    cell = 22
    head1 = "pairs".ljust(10) + "".join(str(p).center(cell) for p in pair_counts)
    head2 = "mode".ljust(10) + "".join(" avg / std / max".center(cell) for _ in pair_counts)
    lines = [head1.rstrip(), head2.rstrip()]
    for m in modes:
        row = m.ljust(10)
        for p in pair_counts:
            s = by.get((m, p))
            row += (f"{s.avg_ms:.2f} / {s.std_ms:.2f} / {s.max_ms:.2f}" if s else "-").center(cell)
        lines.append(row.rstrip())
    return "\n".join(lines) + "\n"


def write_csv(stats, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, CSV_COLUMNS)
        w.writeheader()
        for s in sort_stats(stats):
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in s.row().items()})


def read_csv(path) -> list[BenchStats]:
    with open(path, newline="") as fh:
        return [BenchStats(r["mode"], int(r["pairs"]), float(r["avg_ms"]), float(r["std_ms"]),
                           float(r["max_ms"])) for r in csv.DictReader(fh)]


def write_plot(stats, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stats = sort_stats(stats)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in dict.fromkeys(s.mode for s in stats):
        series = [s for s in stats if s.mode == mode]
        ax.errorbar([s.pairs for s in series], [s.avg_ms for s in series],
                    yerr=[s.std_ms for s in series], marker="o", capsize=3, label=mode)
    ax.set_xlabel("sensor/actuator pairs")
    ax.set_ylabel("scan cycle (ms)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    # drop timestamps/versions so identical inputs give identical files
    ext = os.path.splitext(path)[1].lower()
    meta = {".png": {"Software": None}, ".svg": {"Date": None}, ".pdf": {"CreationDate": None}}.get(ext)
    fig.savefig(path, metadata=meta)
    plt.close(fig)


def emit(stats, fmt: str, path) -> str:
    """Write ``stats`` as json, csv, text or plot; returns the path."""
    path = os.fspath(path)
    try:
        if fmt == "csv":
            write_csv(stats, path)
        elif fmt == "json":
            with open(path, "w") as fh:
                json.dump([s.row() for s in sort_stats(stats)], fh, indent=2, sort_keys=True)
                fh.write("\n")
        elif fmt == "text":
            with open(path, "w") as fh:
                fh.write(render_table(stats))
        elif fmt == "plot":
            write_plot(stats, path)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def write_reports(reports, path) -> None:
    """CycleReports as JSON lines."""
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def stats_to_json(stats) -> list:
    return [asdict(s, dict_factory=lambda kv: {k: v for k, v in kv if k != "reports"}) for s in stats]
