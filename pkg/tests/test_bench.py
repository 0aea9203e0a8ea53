import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ols_by_normal_equations
from teeplc.bench import (
    BenchStats,
    DegenerateFit,
    InsufficientCycles,
    IoError,
    breakdown_report,
    emit,
    fit_scaling,
    measure,
    read_csv,
    render_table,
)
from teeplc.clock import PHASES
from teeplc.deploy import run_scenario
from teeplc.plant import PairsScenario

REFERENCE_AVGS = [(1, 9.5), (2, 17.3), (4, 32.7), (8, 63.6)]


def test_fit_of_published_averages():
    # frozen from numpy.polyfit on the same four points
    fit = fit_scaling(REFERENCE_AVGS)
    assert fit.slope == pytest.approx(7.7243478260869605, rel=1e-12)
    assert fit.intercept == pytest.approx(1.8086956521738975, rel=1e-12)
    assert fit.r2 == pytest.approx(0.9999982764700459, rel=1e-12)
    assert fit.r2 >= 0.99


@given(st.lists(st.tuples(st.integers(1, 64), st.floats(0, 500)), min_size=3, max_size=10)
       .filter(lambda pts: len({x for x, _ in pts}) >= 3))
def test_fit_matches_two_oracles(pts):
    fit = fit_scaling(pts)
    xs, ys = [float(x) for x, _ in pts], [y for _, y in pts]
    slope, intercept = np.polyfit(xs, ys, 1)
    assert fit.slope == pytest.approx(slope, rel=1e-6, abs=1e-6)
    assert fit.intercept == pytest.approx(intercept, rel=1e-6, abs=1e-5)
    s2, i2 = ols_by_normal_equations(xs, ys)
    assert fit.slope == pytest.approx(s2, rel=1e-6, abs=1e-6)
    assert fit.intercept == pytest.approx(i2, rel=1e-6, abs=1e-5)


def test_flat_series():
    fit = fit_scaling([(1, 4.0), (2, 4.0), (4, 4.0)])
    assert fit.slope == 0 and fit.intercept == 4.0 and fit.r2 == 1.0


def test_two_points_degenerate():
    with pytest.raises(DegenerateFit):
        fit_scaling([(1, 1.0), (2, 2.0)])
    with pytest.raises(DegenerateFit):
        fit_scaling([(1, 1.0), (1, 2.0), (2, 2.0)])


def test_minimum_cycles():
    with pytest.raises(InsufficientCycles):
        measure("baseline", 1, cycles=10)


def test_breakdown_exact():
    reports, _, _ = run_scenario(PairsScenario(2), "enhanced", 30)
    b = breakdown_report(reports)
    assert b.residual_us == 0
    assert sum(b.phases_us.values()) == pytest.approx(b.total_us, abs=1e-9)
    assert b.phases_us["world_switch"] == 280.0
    assert b.phases_us["channel_crypto"] > 0
    assert all(p in b.render() for p in PHASES)


def test_minimal_has_no_channel_crypto():
    reports, _, _ = run_scenario(PairsScenario(2), "minimal", 10)
    assert breakdown_report(reports).phases_us["channel_crypto"] == 0


def test_breakdown_needs_cycles():
    with pytest.raises(InsufficientCycles):
        breakdown_report([])


STATS = [BenchStats(m, p, 1.0 + p * k + 0.1234567891, 0.01 * p, 2.0 * p)
         for k, m in enumerate(["enhanced", "baseline", "minimal"], 1) for p in (8, 1, 4, 2)]


def test_csv_round_trip(tmp_path):
    path = emit(STATS, "csv", tmp_path / "b.csv")
    back = read_csv(path)
    assert sorted(back, key=lambda s: (s.mode, s.pairs)) == sorted(STATS, key=lambda s: (s.mode, s.pairs))
    assert [s.mode for s in back[:4]] == ["baseline"] * 4


def test_text_table():
    text = render_table(STATS)
    lines = text.splitlines()
    assert lines[0].split()[1:] == ["1", "2", "4", "8"]
    assert [l.split()[0] for l in lines[2:]] == ["baseline", "minimal", "enhanced"]


def test_plot_and_determinism(tmp_path):
    for fmt, name in [("plot", "a.png"), ("json", "a.json"), ("text", "a.txt"), ("csv", "a.csv")]:
        one = emit(STATS, fmt, tmp_path / name)
        two = emit(STATS, fmt, tmp_path / ("2" + name))
        a, b = open(one, "rb").read(), open(two, "rb").read()
        assert len(a) > 0
        assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest(), fmt


def test_emit_errors(tmp_path):
    with pytest.raises(ValueError):
        emit(STATS, "xml", tmp_path / "x")
    with pytest.raises(IoError):
        emit(STATS, "csv", tmp_path / "missing" / "x.csv")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_latency_grows_with_pairs(seed):
    avgs = [measure("enhanced", p, cycles=100, min_cycles=100, seed=seed).avg_ms for p in (1, 2, 4)]
    assert avgs == sorted(avgs)
    assert avgs[0] < avgs[1] < avgs[2]


def test_mode_ordering():
    avgs = {m: measure(m, 2, cycles=100, min_cycles=100).avg_ms for m in ("baseline", "minimal", "enhanced")}
    assert avgs["baseline"] < avgs["minimal"] < avgs["enhanced"]
