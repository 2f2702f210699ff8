import csv
import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aiitl.exceptions import DataError, ParameterError
from aiitl.metrics import (
    MetricsSummary,
    accuracy,
    beta_sweep,
    crossover_beta,
    export_results,
    human_effort,
    recount,
    round2,
    utility,
)

# reference (phi, rho) pairs with their utilities reported to 2 decimals
TABLE_1 = {
    "hitl": (0.75, 0.73, 0.39),
    "gating": (0.92, 0.00, 0.92),
    "maha": (0.92, 0.39, 0.73),
    "odin": (0.74, 0.27, 0.61),
}


def test_accuracy_and_effort_examples():
    assert accuracy(100, 100) == 1.0
    assert accuracy(75, 100) == 0.75
    assert human_effort(0, 100) == 0.0
    assert human_effort(73, 100) == 0.73
    with pytest.raises(DataError):
        accuracy(0, 0)
    with pytest.raises(DataError):
        human_effort(0, 0)


def test_utility_examples():
    assert utility(0.92, 0.0) == pytest.approx(0.92)
    assert utility(0.75, 0.73) == pytest.approx(0.385)
    assert round2(utility(0.75, 0.73)) == "0.39"
    assert round2(utility(0.74, 0.27)) == "0.61"
    assert utility(0.74, 0.27) == pytest.approx(0.605)
    assert utility(1.0, 0.0, alpha=2.5, beta=9) == 2.5
    with pytest.raises(ParameterError):
        utility(1.2, 0.0)
    with pytest.raises(ParameterError):
        utility(0.5, 0.5, beta=-1)


@pytest.mark.parametrize("name", list(TABLE_1))
def test_table_one_arithmetic(name):
    phi, rho, u = TABLE_1[name]
    # 1e-12 absorbs binary representation of exact half-cent values such as 0.605
    assert abs(utility(phi, rho, 1.0, 0.5) - u) <= 0.005 + 1e-12
    assert round2(utility(phi, rho, 1.0, 0.5)) == f"{u:.2f}"


unit = st.floats(0, 1)
weight = st.floats(0, 10)


@given(unit, unit, weight, weight)
def test_utility_affine(phi, rho, a, b):
    assert utility(phi, rho, a, b) == a * phi - b * rho


def test_crossover_examples():
    hitl = TABLE_1["hitl"][:2]
    assert crossover_beta(hitl, TABLE_1["odin"][:2]) == pytest.approx(0.01 / 0.46)
    assert crossover_beta(hitl, TABLE_1["gating"][:2]) == pytest.approx(-0.17 / 0.73)
    assert crossover_beta(hitl, hitl) is None


def test_sweep_examples():
    systems = [(k, p, r) for k, (p, r, _) in TABLE_1.items()]
    rows = beta_sweep(systems, [0.75, 1.0, 2.0])
    assert all(abs(r.utility - 0.92) < 1e-12 for r in rows if r.system == "gating")
    zero = [r for r in beta_sweep(systems, [0.0])]
    by_phi = sorted(systems, key=lambda s: -s[1])
    assert zero[[r.system for r in zero].index(by_phi[-1][0])].rank == 4
    with pytest.raises(DataError):
        beta_sweep([], [0.5])


@given(unit, unit, unit, unit)
def test_rankings_flip_at_crossover(pa, ra, pb, rb):
    b = crossover_beta((pa, ra), (pb, rb))
    if b is None or b <= 1e-6 or abs(pa - pb) < 1e-6:
        return

    def leader(beta):
        rows = beta_sweep([("a", pa, ra), ("b", pb, rb)], [beta])
        return next(r.system for r in rows if r.rank == 1)

    assert leader(b * 0.5) != leader(b * 1.5)


def test_summary_recount_and_round_trip():
    outcomes = [{"route": ["general", "human", "expert:0"], "correct": [0, 1, 1]}]
    assert recount(outcomes) == (2, 1, 3)
    s = MetricsSummary(2, 1, 3)
    assert MetricsSummary.from_dict(s.to_dict()) == s
    assert s.utility == 2 / 3 - 0.5 / 3


class FakeRecord:
    def __init__(self, step, s):
        self.step, self.stream, self.holdout = step, s, None


class FakeTrace:
    def __init__(self, system, records, final):
        self.system, self.records, self.final = system, records, final


def test_export_headers_and_determinism(tmp_path):
    traces = [FakeTrace("aiitl_gating", [FakeRecord(1, MetricsSummary(9, 1, 10))],
                        MetricsSummary(92, 0, 100)),
              FakeTrace("traditional_hitl", [FakeRecord(1, MetricsSummary(9, 1, 10))],
                        MetricsSummary(75, 73, 100))]
    steps, summary = export_results(traces, tmp_path / "a", betas=[0.5, 1.0, 2.0])
    export_results(traces, tmp_path / "b", betas=[0.5, 1.0, 2.0])
    assert steps.read_bytes() == (tmp_path / "b" / "steps.csv").read_bytes()
    header = next(csv.reader(io.StringIO(steps.read_text())))
    assert header == ["step", "system", "series", "phi", "rho", "utility_at_beta_0_5",
                      "utility_at_beta_1", "utility_at_beta_2"]
    rows = list(csv.reader(io.StringIO(summary.read_text())))
    assert [r[0] for r in rows[1:]] == ["human_effort", "accuracy", "utility"]
    assert rows[3][1:] == ["0.92", "0.39"]
