from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aggdr.analysis import (
    BalancingMetrics,
    balancing_metrics,
    loadability,
    share_added_demand,
    system_demand,
    transfer_sensitivity,
)
from aggdr.dispatch import solve
from aggdr.errors import ModelValidationError, NoGeneratorsInRegion
from aggdr.grid import GeneratorKind, Line, NetworkModel, Region
from conftest import agg, gen, one_region, problem, two_region
from oracles import two_region_loadability


def day(spill, unserved, gt=None, dh=1.0):
    spill = np.atleast_2d(np.asarray(spill, dtype=float))
    unserved = np.atleast_2d(np.asarray(unserved, dtype=float))
    gt = np.zeros(spill.shape[1]) if gt is None else np.asarray(gt, dtype=float)
    return SimpleNamespace(spill=spill, unserved=unserved, step_length=dh, gas_turbine_output=lambda: gt)


# -------------------------------------------------------------- metrics


def test_one_spilled_hour_in_a_hundred():
    spill = np.zeros(100)
    spill[7] = 200.0
    m = balancing_metrics([day(spill, np.zeros(100))])
    assert m.spilled_energy == pytest.approx(200.0)
    assert m.spilled_hours_pct == pytest.approx(1.0)
    assert m.unserved_hours == 0.0 and m.total_hours == 100.0


def test_hour_counted_once_across_regions():
    spill = [[5.0, 0.0], [5.0, 0.0]]
    uns = [[0.0, 2.0], [0.0, 3.0]]
    m = balancing_metrics([day(spill, uns, gt=[[0, 40.0]])])
    assert (m.spilled_hours, m.unserved_hours) == (1.0, 1.0)
    assert m.spilled_energy == 10.0 and m.unserved_energy == 5.0
    assert m.backup_energy == 40.0


def test_tiny_slack_ignored():
    m = balancing_metrics([day([1e-6, 0.0], [1e-5, 0.0])])
    assert m.spilled_hours == 0.0 and m.unserved_hours == 0.0


def test_half_hour_steps():
    m = balancing_metrics([day([100.0, 0.0], [0.0, 0.0], dh=0.5)])
    assert m.spilled_energy == 50.0 and m.total_hours == 1.0 and m.spilled_hours_pct == 50.0


@given(
    st.lists(st.lists(st.floats(0, 500), min_size=3, max_size=3), min_size=2, max_size=6),
    st.integers(1, 5),
)
def test_metrics_additive_over_days(rows, cut):
    days = [day(r, r[::-1]) for r in rows]
    cut = min(cut, len(days) - 1)
    whole = balancing_metrics(days)
    parts = balancing_metrics(days[:cut]) + balancing_metrics(days[cut:])
    for name in ("spilled_energy", "unserved_energy", "spilled_hours", "unserved_hours", "total_hours"):
        assert getattr(whole, name) == pytest.approx(getattr(parts, name))
    assert whole.spilled_hours_pct == pytest.approx(parts.spilled_hours_pct)


def test_empty_metrics():
    assert balancing_metrics([]) == BalancingMetrics()


def test_fixture_day_metrics_from_solution():
    from aggdr import scenarios
    from aggdr.cli import default_scenario_file

    spec = scenarios.load_scenarios(default_scenario_file(), ["CL"])[0]
    sol = solve(scenarios.problem_for_day(spec, scenarios.apply_substitutions(spec), 180))
    m = balancing_metrics([sol])
    assert m.total_hours == 24.0
    assert m.spilled_energy == pytest.approx(float(sol.spill.sum()))


# ---------------------------------------------------------- loadability


def test_share_added_demand_redistributes():
    np.testing.assert_allclose(share_added_demand(np.array([10.0, 50.0, 50.0]), 60.0), [10, 25, 25])
    np.testing.assert_allclose(share_added_demand(np.array([10.0, 0.0]), 30.0), [10, 0])


@given(st.lists(st.floats(0, 1000), min_size=1, max_size=6), st.floats(0, 5000))
def test_share_added_demand_bounds(room, added):
    room = np.array(room)
    pick = share_added_demand(room, added)
    assert np.all(pick <= room + 1e-9) and np.all(pick >= 0)
    assert pick.sum() == pytest.approx(min(added, room.sum()), abs=1e-6)


def test_transfer_sensitivity_chain():
    regions = (Region("A"), Region("B"), Region("C"))
    lines = (Line("A", "B", 5.0, -9, 9), Line("C", "B", 2.0, -9, 9))
    m = NetworkModel(regions, lines, (), (), "A")
    np.testing.assert_allclose(transfer_sensitivity(m, "A", "C"), [1.0, -1.0])
    np.testing.assert_allclose(transfer_sensitivity(m, "A", "A"), [0.0, 0.0])


def remote_supply(load_b, limit, local_b, inflex_a=100.0):
    """A exports cheaply; B has a small dear local unit."""
    gens = [gen("GA", "A", 1e5, (10,)), gen("GB", "B", local_b, (90,))]
    aggs = [agg("A", inflex_a, [0.0]), agg("B", load_b, [0.0])]
    return solve(problem(two_region(gens, aggs, limit=limit)))


@pytest.mark.parametrize("load_b, limit, local_b, step", [(80, 100, 50, 10), (150, 100, 50, 7), (30, 100, 0.5, 25)])
def test_loadability_matches_closed_form(load_b, limit, local_b, step):
    sol = remote_supply(load_b, limit, local_b)
    flow = sol.line_flows[0, 0]
    headroom = local_b - sol.generation[1, 0]
    expect, k = two_region_loadability(100.0, load_b, flow, limit, step, headroom)
    res = loadability(None, sol, "B", step)
    assert res.per_hour[0] == pytest.approx(expect)
    assert res.last_step[0] == k


def test_infinite_line_limited_by_generation():
    gens = [gen("GA", "A", 500, (10,)), gen("GB", "B", 50, (90,))]
    sol = solve(problem(two_region(gens, [agg("A", 100, [0.0]), agg("B", 80, [0.0])], limit=1e9)))
    res = loadability(None, sol, "B", 10.0)
    # B imports all 80 MW, so the spare capacity is 500 - 180 in A plus 50 in B
    assert res.per_hour[0] == pytest.approx(180.0 + 370.0)


def test_tighter_lines_never_raise_loadability():
    sol = remote_supply(60, 100, 50)
    base = loadability(None, sol, "B", 5.0).per_hour[0]
    for lim in (90.0, 75.0, 60.0):
        tight = sol.model
        tight = NetworkModel(tight.regions, (replace(tight.lines[0], flow_max=lim, flow_min=-lim),),
                             tight.generators, tight.aggregators, tight.reference_region)
        val = loadability(tight, sol, "B", 5.0).per_hour[0]
        assert val <= base
        base = val


@given(st.floats(10, 300), st.floats(20, 200), st.floats(0, 100), st.floats(1, 30))
def test_loadability_monotone_in_limit(load_b, limit, local_b, step):
    sol = remote_supply(load_b, limit, local_b)
    flow = sol.line_flows[0, 0]
    vals = []
    for lim in (limit, max(flow, 0.0) + 0.5 * (limit - max(flow, 0.0)), max(flow, 0.0)):
        m = sol.model
        m = NetworkModel(m.regions, (replace(m.lines[0], flow_max=lim, flow_min=-limit),),
                         m.generators, m.aggregators, m.reference_region)
        vals.append(loadability(m, sol, "B", step).per_hour[0])
    assert vals[0] >= vals[1] >= vals[2] >= system_demand(sol)[0] - 1e-9


def test_unserved_hour_scores_base_demand():
    gens = [gen("GA", "A", 100, (10,)), gen("GB", "B", 10, (90,))]
    sol = solve(problem(two_region(gens, [agg("A", np.array([50.0, 50.0]), [0.0, 0.0]),
                                          agg("B", np.array([20.0, 200.0]), [0.0, 0.0])], limit=50)))
    res = loadability(None, sol, "B", 5.0)
    assert res.last_step[1] == 0 and res.per_hour[1] == pytest.approx(250.0)
    assert res.last_step[0] > 0


def test_target_is_reference_region():
    sol = solve(problem(one_region([gen("G", "A", 100, (10,))], [agg("A", 40.0, [0.0])])))
    assert loadability(None, sol, "A", 10.0).per_hour[0] == pytest.approx(100.0)


def test_loadability_errors():
    sol = remote_supply(50, 100, 50)
    with pytest.raises(ModelValidationError):
        loadability(None, sol, "B", 0.0)
    with pytest.raises(ModelValidationError):
        loadability(None, sol, "Z", 1.0)
    wind = gen("W", "B", 50, (0,), GeneratorKind.WIND, availability=np.ones(1))
    only_wind = two_region([gen("GA", "A", 1e3, (10,)), wind], [agg("A", 10, [0.0]), agg("B", 10, [0.0])])
    with pytest.raises(NoGeneratorsInRegion):
        loadability(None, solve(problem(only_wind)), "B", 1.0)


def test_demand_basis():
    a = agg("A", 10.0, [30.0], pv=np.array([20.0]))
    sol = solve(problem(one_region([gen("G", "A", 100, (10,))], [a])))
    assert system_demand(sol)[0] == pytest.approx(40.0)
    assert system_demand(sol, "nett")[0] == pytest.approx(20.0)
    with pytest.raises(ValueError):
        system_demand(sol, "gross")


def test_loadability_csv(tmp_path):
    res = loadability(None, remote_supply(50, 100, 50), "B", 10.0)
    path = tmp_path / "l.csv"
    res.write_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "step,base_demand,loadability" and len(rows) == 2
    assert res.average == pytest.approx(res.per_hour[0])
