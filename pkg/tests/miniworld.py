"""A two-region, three-day scenario directory small enough to run in tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from aggdr.loaders import write_series

DAYS = 3
STEPS = 24 * DAYS


def _shape(peak, trough, rng):
    hour = np.arange(STEPS) % 24
    base = trough + (peak - trough) * 0.5 * (1 - np.cos(2 * np.pi * (hour - 5) / 24))
    return base * (1 + 0.03 * rng.standard_normal(STEPS))


def network():
    return {
        "units": "MW",
        "reference_region": "A",
        "regions": [{"id": "A"}, {"id": "B"}],
        "lines": [{"from": "A", "to": "B", "susceptance": 10.0, "flow_min": -80.0, "flow_max": 80.0}],
        "generators": [
            {"id": "A_COAL", "region": "A", "kind": "coal", "p_max": 300, "prices": [10, 20, 30]},
            {"id": "A_GT", "region": "A", "kind": "gas_turbine", "p_max": 120, "prices": [60, 200]},
            {"id": "B_COAL", "region": "B", "kind": "coal", "p_max": 180, "prices": [15, 25, 35]},
            {"id": "B_OLD", "region": "B", "kind": "coal", "p_max": 60, "prices": [40]},
        ],
    }


def scenarios(**overrides):
    cfg = {
        "network": "network.yaml",
        "horizon": {"steps": 24, "step_length": 1.0},
        "year_steps": STEPS,
        "target_region": "B",
        "loadability_step": 5.0,
        "responsive_share": 0.6,
        "user_share": {"low": 0.5, "medium": 0.75, "high": 1.0},
        "csp_shift": 3,
        "price_mode": "nodal",
        "profiles": {
            "A": {"demand": "demand_a.csv", "pv": "pv.csv"},
            "B": {"demand": "demand_b.csv", "pv": "pv.csv"},
        },
        "uptake_units": "MW",
        "uptake_table": {
            r: {
                "low": {"soc_min": 5, "soc_max": 150, "pv_capacity": 8},
                "medium": {"soc_min": 8, "soc_max": 220, "pv_capacity": 12},
                "high": {"soc_min": 10, "soc_max": 300, "pv_capacity": 15},
            }
            for r in ("A", "B")
        },
        "substitution_sets": {
            "green": [{"replace": "B_OLD", "id": "B_CSP", "kind": "csp", "region": "B",
                       "capacity": 90.0, "trace": "csp.csv"}],
        },
        "calibration": {"days": [0, 2], "epsilon": 0.5},
        "scenarios": [
            {"name": "BASE", "dr_mode": "none"},
            {"name": "GREEN", "dr_mode": "none", "substitutions": "green"},
            {"name": "ANT", "dr_mode": "anticipator", "uptake": "high", "substitutions": "green"},
            {"name": "TAK", "dr_mode": "taker", "uptake": "high", "substitutions": "green", "pair": "ANT"},
        ],
    }
    cfg.update(overrides)
    return cfg


def write(out: Path, seed: int = 7, **overrides) -> Path:
    """Write the mini world into ``out``; returns the scenario file path."""
    rng = np.random.default_rng(seed)
    out.mkdir(parents=True, exist_ok=True)
    write_series(out / "demand_a.csv", _shape(260, 150, rng))
    write_series(out / "demand_b.csv", _shape(230, 120, rng))
    hour = np.arange(STEPS) % 24
    sun = np.clip(np.sin(np.pi * (hour - 6) / 12), 0, None)
    write_series(out / "pv.csv", sun)
    write_series(out / "csp.csv", np.clip(sun * 1.2, 0, 1))
    with open(out / "network.yaml", "w") as fh:
        yaml.safe_dump(network(), fh, sort_keys=False)
    path = out / "scenarios.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(scenarios(**overrides), fh, sort_keys=False)
    return path
