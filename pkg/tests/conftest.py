"""Shared builders for small hand-checkable networks."""

from __future__ import annotations

import numpy as np
import pytest

from aggdr.dispatch import DispatchProblem
from aggdr.grid import (
    AggregatorProfile,
    Generator,
    GeneratorKind,
    Horizon,
    Line,
    NetworkModel,
    Region,
    StorageParams,
)

try:
    from hypothesis import HealthCheck, settings

    settings.register_profile(
        "ci", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
    )
    settings.load_profile("ci")
except ImportError:  # pragma: no cover
    pass


def gen(id, region, p_max, prices, kind=GeneratorKind.COAL, **kw):
    return Generator.from_prices(id, region, p_max, prices, kind, **kw)


def agg(region, inflex, resp, pv=None, soc=(0.0, 1e6), cap=0.0, flex_min=None, eta=0.9):
    resp = np.asarray(resp, dtype=float)
    pv = np.zeros_like(resp) if pv is None else pv
    return AggregatorProfile(
        region,
        np.asarray(inflex, dtype=float) * np.ones_like(resp),
        resp,
        pv,
        StorageParams(soc[0], soc[1], round_trip_efficiency=eta),
        flex_min=flex_min,
        charge_cap=cap,
    )


def one_region(gens, aggregators=(), ref="A"):
    return NetworkModel((Region("A"),), (), tuple(gens), tuple(aggregators), ref)


def two_region(gens, aggregators=(), limit=100.0, ref="A", susceptance=10.0):
    return NetworkModel(
        (Region("A"), Region("B")),
        (Line("A", "B", susceptance, -limit, limit),),
        tuple(gens),
        tuple(aggregators),
        ref,
    )


def problem(model, steps=None, **kw):
    steps = steps or (model.aggregators[0].steps if model.aggregators else 1)
    return DispatchProblem(model, Horizon(steps), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[1].rstrip(":")), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
