"""Synthetic four-region fixture year (seeded sinusoids plus noise).

Every trace is a deterministic function of ``seed``:

* regional demand: a flat daytime plateau (06:00 to 19:30) over a night
  trough, a twice-yearly seasonal swing, a weekend dip and AR(1) noise;
* rooftop PV (per unit): a clipped sine between sunrise and sunset whose
  day length and peak follow the season, times a daily cloud factor;
* wind (per unit): a clipped AR(1) process, stronger at night;
* CSP with storage (per unit): a flat plateau from two hours after sunrise
  to sunset, scaled by a daily solar factor (the scenarios delay it by 12 h,
  which moves the output into the night).

``write_fixture`` materialises the traces as ``step,value`` CSVs together
with the network and scenario YAML files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .loaders import write_series

DAYS = 365
STEPS_PER_DAY = 24
YEAR_STEPS = DAYS * STEPS_PER_DAY
REGIONS = ("QLD", "NSW", "VIC", "SA")

# mean demand (MW) and peak-hour emphasis per region
MEAN_DEMAND = {"QLD": 6100.0, "NSW": 8500.0, "VIC": 5600.0, "SA": 1500.0}
PEAK = {"QLD": 0.24, "NSW": 0.26, "VIC": 0.26, "SA": 0.30}

# generator bids ($/MWh) per block, capacities in MW
GENERATORS = [
    ("BPS_2", "NSW", "coal", 3000, (28.45, 42.66, 56.90)),
    ("EPS_2", "NSW", "gas_turbine", 3000, (69.20, 346.0, 692.0)),
    ("MPS_2", "NSW", "coal", 3200, (27.43, 41.15, 54.86)),
    ("VPS_2", "NSW", "coal", 3000, (26.40, 39.60, 52.80)),
    ("LPS_3", "VIC", "biomass", 1500, (39.50, 59.25, 79.00)),
    ("YPS_3", "VIC", "coal", 7000, (21.88, 32.82, 43.76)),
    ("CPS_4", "QLD", "coal", 4200, (26.14, 39.21, 52.28)),
    ("GPS_4", "QLD", "coal", 1800, (26.14, 39.21, 52.28)),
    ("SPS_4", "QLD", "coal", 1600, (32.74, 49.11, 65.48)),
    ("TPS_4", "QLD", "gas_turbine", 3000, (73.84, 369.2, 738.4)),
    ("NPS_5", "SA", "coal", 900, (30.89, 46.34, 61.78)),
    ("PPS_5", "SA", "coal", 900, (30.89, 46.34, 61.78)),
    ("TPS_5", "SA", "gas_turbine", 1500, (69.20, 346.0, 692.0)),
]

# (from, to, susceptance p.u., limit MW)
LINES = [
    ("QLD", "NSW", 10.0, 1500.0),
    ("NSW", "VIC", 10.0, 1800.0),
    ("VIC", "SA", 10.0, 800.0),
]

RENEWABLES = {
    "WF_NSA": {"kind": "wind", "region": "SA", "capacity": 3000.0, "replaces": "NPS_5"},
    "CSP_NQ": {"kind": "csp", "region": "QLD", "capacity": 4500.0, "replaces": "SPS_4"},
    "CSP_CQ": {"kind": "csp", "region": "QLD", "capacity": 4500.0, "replaces": "GPS_4"},
}

# storage SOC bounds (GWh) and PV capacity (GW) per region and uptake level
UPTAKE_TABLE = {
    "QLD": {"low": (0.4, 4.3, 1.3), "medium": (0.6, 6.4, 1.9), "high": (0.9, 8.5, 2.6)},
    "NSW": {"low": (0.7, 6.7, 2.0), "medium": (1.0, 10.1, 3.0), "high": (1.4, 13.5, 4.1)},
    "VIC": {"low": (0.5, 5.0, 1.5), "medium": (0.8, 7.5, 2.3), "high": (1.0, 10.0, 3.0)},
    "SA": {"low": (0.1, 1.2, 0.3), "medium": (0.2, 1.7, 0.5), "high": (0.2, 2.3, 0.7)},
}

# fraction of responsive customers that own a PV-storage system
USER_SHARE = {"low": 0.2, "medium": 0.3, "high": 0.4}

# two days per season whose zero-cap schedules keep every SOC within limits
CALIBRATION_DAYS = (23, 69, 114, 159, 205, 250, 296, 342)


def _hours():
    t = np.arange(YEAR_STEPS)
    return t // STEPS_PER_DAY, (t % STEPS_PER_DAY).astype(float)


def _ar1(rng, n, phi, sigma):
    eps = rng.normal(0.0, sigma, n)
    out = np.empty(n)
    out[0] = eps[0] / np.sqrt(1 - phi**2)
    for i in range(1, n):
        out[i] = phi * out[i - 1] + eps[i]
    return out


def _daylight(doy):
    """Sunrise and sunset hours; longest day around day 355."""
    swing = np.cos(2 * np.pi * (doy - 355) / DAYS)
    return 6.0 - 0.8 * swing, 18.0 + 0.9 * swing


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def demand_trace(region: str, rng: np.random.Generator) -> np.ndarray:
    doy, hour = _hours()
    daytime = _sigmoid((hour - 6.0) / 0.6) * _sigmoid((19.5 - hour) / 0.8)
    night = -0.10 * np.exp(-((hour - 3.5) ** 2) / 8.0)
    shape = 1.0 + PEAK[region] * daytime + night
    season = 1.0 + 0.07 * np.cos(4 * np.pi * (doy - 20) / DAYS)
    weekend = np.where(doy % 7 >= 5, 0.95, 1.0)
    noise = 1.0 + _ar1(rng, YEAR_STEPS, 0.9, 0.01)
    raw = shape * season * weekend * noise
    return MEAN_DEMAND[region] * raw / raw.mean()


def pv_trace(rng: np.random.Generator, peak=0.8) -> np.ndarray:
    doy, hour = _hours()
    rise, sset = _daylight(doy)
    x = (hour + 0.5 - rise) / (sset - rise)
    sun = np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0) ** 1.3
    seasonal_peak = peak * (0.8 + 0.2 * np.cos(2 * np.pi * (doy - 355) / DAYS))
    cloud = rng.uniform(0.55, 1.0, DAYS)[doy]
    return np.clip(sun * seasonal_peak * cloud, 0.0, 1.0)


def wind_trace(rng: np.random.Generator) -> np.ndarray:
    _, hour = _hours()
    z = _ar1(rng, YEAR_STEPS, 0.97, 0.25)
    diurnal = 1.0 + 0.5 * np.cos(2 * np.pi * (hour - 2.0) / STEPS_PER_DAY)  # stronger at night
    return np.clip((0.36 + 0.3 * z) * diurnal, 0.0, 1.0)


def csp_trace(rng: np.random.Generator) -> np.ndarray:
    doy, hour = _hours()
    rise, sset = _daylight(doy)
    on = (hour >= rise + 2.0) & (hour < sset)
    solar = rng.uniform(0.45, 1.0, DAYS)[doy] * (0.85 + 0.15 * np.cos(2 * np.pi * (doy - 355) / DAYS))
    return np.where(on, 0.9 * solar, 0.0)


@dataclass(frozen=True)
class FixtureTraces:
    demand: dict[str, np.ndarray]  # MW
    pv: dict[str, np.ndarray]  # per unit
    renewables: dict[str, np.ndarray]  # per unit, unshifted


def make_traces(seed: int = 2020) -> FixtureTraces:
    rng = np.random.default_rng(seed)
    demand = {r: demand_trace(r, rng) for r in REGIONS}
    pv = {r: pv_trace(rng) for r in REGIONS}
    renew = {
        "WF_NSA": wind_trace(rng),
        "CSP_NQ": csp_trace(rng),
        "CSP_CQ": csp_trace(rng),
    }
    return FixtureTraces(demand, pv, renew)


def network_config() -> dict:
    return {
        "units": "MW",
        "base_mva": 100.0,
        "reference_region": "NSW",
        "regions": [{"id": r} for r in REGIONS],
        "lines": [
            {"from": a, "to": b, "susceptance": x, "flow_min": -lim, "flow_max": lim} for a, b, x, lim in LINES
        ],
        "generators": [
            {"id": gid, "region": reg, "kind": kind, "p_max": cap, "prices": list(prices)}
            for gid, reg, kind, cap, prices in GENERATORS
        ],
    }


def scenario_config() -> dict:
    subs = [
        {"replace": spec["replaces"], "id": gid, "kind": spec["kind"], "region": spec["region"],
         "capacity": spec["capacity"], "trace": f"traces/{gid.lower()}.csv"}
        for gid, spec in RENEWABLES.items()
    ]
    scenarios = [
        {"name": "BAU", "dr_mode": "none"},
        {"name": "CL", "dr_mode": "none", "substitutions": "renewable"},
    ]
    for mode, prefix in (("anticipator", "PADR"), ("taker", "PTDR")):
        for k, level in enumerate(("low", "medium", "high"), start=1):
            entry = {"name": f"{prefix}{k}", "dr_mode": mode, "uptake": level, "substitutions": "renewable"}
            if mode == "taker":
                entry["pair"] = f"PADR{k}"
            scenarios.append(entry)
    return {
        "network": "network.yaml",
        "horizon": {"steps": STEPS_PER_DAY, "step_length": 1.0},
        "year_steps": YEAR_STEPS,
        "target_region": "QLD",
        "loadability_step": 10.0,
        "responsive_share": 0.6,
        "user_share": dict(USER_SHARE),
        "csp_shift": 12,
        "price_mode": "nodal",
        "profiles": {
            r: {"demand": f"traces/demand_{r.lower()}.csv", "pv": f"traces/pv_{r.lower()}.csv"} for r in REGIONS
        },
        "uptake_units": "GW",
        "uptake_table": {
            r: {lvl: {"soc_min": v[0], "soc_max": v[1], "pv_capacity": v[2]} for lvl, v in rows.items()}
            for r, rows in UPTAKE_TABLE.items()
        },
        "substitution_sets": {"renewable": subs},
        "calibration": {"days": list(CALIBRATION_DAYS), "epsilon": 1.0, "mode": "joint"},
        "scenarios": scenarios,
    }


def zero_cap_feasible_days(scenario_file, names=("PADR1", "PADR2", "PADR3")) -> np.ndarray:
    """Days on which every named scenario keeps every SOC in bounds at zero charge cap.

    The charge-cap search can only start from such days; the shipped
    calibration days were picked from this set with ``pick_calibration_days``.
    """
    from . import scenarios, storage

    specs = scenarios.load_scenarios(scenario_file, list(names))
    ok = np.ones(specs[0].n_days, dtype=bool)
    for spec in specs:
        year = scenarios.apply_substitutions(spec)
        for day in range(spec.n_days):
            if not ok[day]:
                continue
            prob = scenarios.problem_for_day(spec, year, day)
            sol = storage.calibrate_loss(prob, spec.calibration).solution
            for agg in prob.model.aggregators:
                if not storage.soc_within_limits(storage.soc_trajectory(sol, agg), agg):
                    ok[day] = False
                    break
    return ok


def pick_calibration_days(feasible: np.ndarray, per_season: int = 2) -> tuple[int, ...]:
    """Per quarter of the year, the feasible days nearest evenly spaced targets."""
    n = len(feasible)
    picked = []
    for q in range(4):
        lo, hi = q * n // 4, (q + 1) * n // 4
        cands = [d for d in range(lo, hi) if feasible[d]]
        for k in range(per_season):
            target = lo + (2 * k + 1) * (hi - lo) / (2 * per_season)
            free = [d for d in cands if d not in picked]
            if free:
                picked.append(min(free, key=lambda d: (abs(d - target), d)))
    return tuple(sorted(picked))


def write_fixture(out_dir, seed: int = 2020) -> Path:
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    tr = make_traces(seed)
    for r in REGIONS:
        write_series(out / "traces" / f"demand_{r.lower()}.csv", tr.demand[r], "{:.3f}")
        write_series(out / "traces" / f"pv_{r.lower()}.csv", tr.pv[r], "{:.5f}")
    for gid, trace in tr.renewables.items():
        write_series(out / "traces" / f"{gid.lower()}.csv", trace, "{:.5f}")
    with open(out / "network.yaml", "w") as fh:
        yaml.safe_dump(network_config(), fh, sort_keys=False)
    with open(out / "scenarios.yaml", "w") as fh:
        fh.write(f"# generated by aggdr.fixtures.write_fixture(seed={seed})\n")
        yaml.safe_dump(scenario_config(), fh, sort_keys=False)
    return out
