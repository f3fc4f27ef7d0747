"""Scenario harness: build, run and persist a year of daily dispatches.

A scenario file (YAML) names a base network, per-region demand/PV traces,
renewable substitution sets, the uptake table and a list of scenarios. Each
scenario runs 24-hour horizons independently:

* ``none``: flexible demand pinned to the responsive load (no PV, no
  storage), one dispatch per day;
* ``anticipator``: charge caps calibrated once on representative days, then
  a battery-loss fixed point per day;
* ``taker``: inflexible dispatch for prices, per-aggregator response with
  the anticipator's battery loss, frozen re-dispatch.

Every finished day is written to ``<out>/days/<scenario>/<day>.json``; a
rerun picks those up instead of solving again.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis, dispatch, pricetaker, storage
from .errors import AggDRError, DataError, ModelValidationError
from .grid import AggregatorProfile, Generator, GeneratorKind, Horizon, NetworkModel, StorageParams, validate
from .loaders import load_network, read_series, read_wide, read_yaml, unit_scale

log = logging.getLogger(__name__)

DR_MODES = ("none", "anticipator", "taker")
UPTAKE_LEVELS = ("low", "medium", "high")
RESPONSIVE_SHARE = 0.6
SUMMARY_VERSION = 1


@dataclass(frozen=True, eq=False)
class Substitution:
    """Replace generator ``replace`` with a renewable plant.

    ``generator.availability`` holds the unshifted yearly per-unit trace.
    """

    replace: str
    generator: Generator


@dataclass(frozen=True, eq=False)
class UptakeRow:
    soc_min: float  # MWh
    soc_max: float  # MWh
    pv_capacity: float  # MW


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    name: str
    base_model: NetworkModel
    profiles: dict  # region -> {"demand": MW, "pv": per unit} or {"P_L","P_U","P_PV": MW}
    substitutions: tuple[Substitution, ...] = ()
    dr_mode: str = "none"
    uptake: str | None = None
    csp_shift: int = 0
    days: tuple[int, ...] = ()
    calibration: storage.CalibrationConfig = storage.CalibrationConfig()
    calibration_days: tuple[int, ...] = (0,)
    horizon: Horizon = Horizon()
    uptake_table: dict = field(default_factory=dict)  # region -> level -> UptakeRow
    responsive_share: float = RESPONSIVE_SHARE
    user_share: dict = field(default_factory=dict)  # uptake level -> fraction of responsive users with PV-storage
    target_region: str = ""
    loadability_step: float = 10.0
    price_mode: str = "nodal"
    pair: str | None = None  # anticipator scenario whose losses a taker reuses
    round_trip_efficiency: float = 0.9

    def violations(self) -> list[str]:
        out = []
        if self.dr_mode not in DR_MODES:
            out.append(f"{self.name}: dr_mode must be one of {DR_MODES}")
        if self.dr_mode != "none" and self.uptake not in UPTAKE_LEVELS:
            out.append(f"{self.name}: uptake must be one of {UPTAKE_LEVELS}")
        if self.dr_mode != "none":
            for r in self.base_model.region_ids:
                if self.uptake not in self.uptake_table.get(r, {}):
                    out.append(f"{self.name}: no uptake row for {r}/{self.uptake}")
        known = {g.id for g in self.base_model.generators}
        for sub in self.substitutions:
            if sub.replace not in known:
                out.append(f"{self.name}: substituted generator {sub.replace!r} does not exist")
            if sub.generator.availability is None:
                out.append(f"{self.name}: {sub.generator.id} has no availability trace")
        year = self.year_steps
        last = max(self.days, default=-1)
        if (last + 1) * self.horizon.steps > year:
            out.append(f"{self.name}: day {last} is beyond the {year}-step traces")
        for sub in self.substitutions:
            if sub.generator.availability is not None and len(sub.generator.availability) != year:
                out.append(f"{self.name}: trace for {sub.generator.id} has {len(sub.generator.availability)} steps")
        for level, share in self.user_share.items():
            if not 0 <= share <= 1:
                out.append(f"{self.name}: user_share for {level} must lie in [0, 1]")
        if self.target_region not in self.base_model.region_ids:
            out.append(f"{self.name}: unknown target region {self.target_region!r}")
        if self.price_mode not in ("nodal", "system"):
            out.append(f"{self.name}: price_mode must be nodal or system")
        out.extend(f"{self.name}: calibration {v}" for v in self.calibration.violations())
        return out

    @property
    def year_steps(self) -> int:
        first = next(iter(self.profiles.values()))
        return len(next(iter(first.values())))

    @property
    def n_days(self) -> int:
        return self.year_steps // self.horizon.steps


@dataclass(frozen=True, eq=False)
class DaySummary:
    """Persisted outcome of one day. Arrays are ``[entity, step]``."""

    scenario: str
    day: int
    step_length: float
    objective: float
    regions: tuple[str, ...]
    generators: tuple[str, ...]
    gas_turbines: tuple[str, ...]
    generation: np.ndarray
    spill: np.ndarray
    unserved: np.ndarray
    line_flows: np.ndarray
    price: np.ndarray
    inflexible: np.ndarray
    responsive: np.ndarray
    pv: np.ndarray
    flexible: np.ndarray
    battery: np.ndarray
    soc: np.ndarray
    battery_loss: dict
    recomputed_loss: dict
    demand: np.ndarray  # system demand per step at the base point (MW)
    loadability: np.ndarray
    balance_residual: float
    flow_residual: float
    energy_residual: dict
    anticipator_objective: float | None = None
    loss_iterations: int = 0
    signature: str = ""
    charge_cap: dict = field(default_factory=dict)

    _ARRAYS = (
        "generation", "spill", "unserved", "line_flows", "price", "inflexible", "responsive",
        "pv", "flexible", "battery", "soc", "demand", "loadability",
    )

    def gas_turbine_output(self) -> np.ndarray:
        rows = [i for i, g in enumerate(self.generators) if g in self.gas_turbines]
        return self.generation[rows].sum(axis=0) if rows else np.zeros(self.spill.shape[1])

    def nett_demand(self) -> np.ndarray:
        return self.inflexible + self.flexible

    def to_json(self) -> str:
        data = {"version": SUMMARY_VERSION}
        for k, v in self.__dict__.items():
            data[k] = v.tolist() if isinstance(v, np.ndarray) else (list(v) if isinstance(v, tuple) else v)
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DaySummary":
        data = json.loads(text)
        if data.pop("version", None) != SUMMARY_VERSION:
            raise DataError("day summary has an unsupported version")
        for k in cls._ARRAYS:
            data[k] = np.array(data[k], dtype=float)
        for k in ("regions", "generators", "gas_turbines"):
            data[k] = tuple(data[k])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    name: str
    metrics: analysis.BalancingMetrics
    loadability: analysis.LoadabilityResult
    daily_solutions: tuple[DaySummary, ...]
    calibration: storage.StorageCalibration | None
    has_renewables: bool = True
    charge_cap: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return float(sum(d.objective for d in self.daily_solutions))


# ---------------------------------------------------------------- loading


def load_profiles(
    paths: dict,
    horizon: Horizon,
    year_steps: int | None = None,
    units: str = "MW",
    base_dir=".",
) -> dict[str, dict[str, np.ndarray]]:
    """Read per-region yearly series.

    Each region maps either to ``{"demand": file, "pv": file}`` (total
    demand in ``units``, PV per unit) or to ``{"profile": file}`` in the
    wide ``step,P_L,P_U,P_PV`` form. Every file must hold ``year_steps``
    rows (default: 365 horizons).
    """
    year_steps = year_steps or 365 * horizon.steps
    scale = unit_scale(units)
    base = Path(base_dir)
    out = {}
    for region, entry in paths.items():
        if "profile" in entry:
            out[region] = read_wide(base / entry["profile"], year_steps, scale)
            continue
        try:
            demand = read_series(base / entry["demand"], year_steps, scale)
        except KeyError:
            raise DataError(f"profiles.{region}: needs 'demand' (and optional 'pv') or 'profile'") from None
        pv = read_series(base / entry["pv"], year_steps) if entry.get("pv") else np.zeros(year_steps)
        if np.any(pv > 1.0 + 1e-9):
            raise DataError(f"{base / entry['pv']}: PV trace is per unit and must not exceed 1")
        out[region] = {"demand": demand, "pv": pv}
    return out


def split_demand(total: np.ndarray, responsive_share: float = RESPONSIVE_SHARE):
    """Split total demand into (inflexible, responsive) parts."""
    if not 0 <= responsive_share <= 1:
        raise ModelValidationError("responsive_share must lie in [0, 1]")
    responsive = responsive_share * np.asarray(total, dtype=float)
    return np.asarray(total, dtype=float) - responsive, responsive


def aggregator_for_day(spec: ScenarioSpec, region: str, day: int) -> AggregatorProfile:
    h = spec.horizon.steps
    sl = slice(day * h, (day + 1) * h)
    series = spec.profiles[region]
    if "demand" in series:
        share = spec.responsive_share
        if spec.dr_mode != "none":
            share *= spec.user_share.get(spec.uptake, 1.0)
        inflex, resp = split_demand(series["demand"][sl], share)
        pv_pu = series["pv"][sl]
    else:
        inflex, resp, pv_pu = series["P_L"][sl], series["P_U"][sl], None
    if spec.dr_mode == "none":
        return AggregatorProfile(region, inflex, resp, np.zeros(h), StorageParams(0.0, 0.0))
    row = spec.uptake_table[region][spec.uptake]
    pv = pv_pu * row.pv_capacity if pv_pu is not None else series["P_PV"][sl]
    st = StorageParams(row.soc_min, row.soc_max, round_trip_efficiency=spec.round_trip_efficiency)
    return AggregatorProfile(region, inflex, resp, pv, st)


def apply_substitutions(spec: ScenarioSpec) -> NetworkModel:
    """Swap conventional units for renewables; CSP traces are shifted circularly."""
    model = spec.base_model
    if not spec.substitutions:
        return model
    known = {g.id for g in model.generators}
    gens = {g.id: g for g in model.generators}
    for sub in spec.substitutions:
        if sub.replace not in known:
            raise ModelValidationError(f"unknown generator {sub.replace!r} in substitutions")
        if sub.generator.availability is None:
            raise DataError(f"missing availability trace for {sub.generator.id}")
        gen = sub.generator
        if gen.kind == GeneratorKind.CSP and spec.csp_shift:
            gen = replace(gen, availability=np.roll(gen.availability, spec.csp_shift))
        gens.pop(sub.replace, None)
        gens[gen.id] = gen
    return model.replace(generators=tuple(gens.values()))


def model_for_day(spec: ScenarioSpec, year_model: NetworkModel, day: int, caps=None) -> NetworkModel:
    h = spec.horizon.steps
    sl = slice(day * h, (day + 1) * h)
    gens = [
        replace(g, availability=np.asarray(g.availability)[sl]) if g.availability is not None else g
        for g in year_model.generators
    ]
    aggs = [aggregator_for_day(spec, r, day) for r in year_model.region_ids]
    model = year_model.replace(generators=tuple(gens), aggregators=tuple(aggs))
    if caps:
        model = model.with_charge_caps(caps)
    return model


def problem_for_day(spec, year_model, day, caps=None) -> dispatch.DispatchProblem:
    model = model_for_day(spec, year_model, day, caps)
    pinned = None
    if spec.dr_mode == "none":
        pinned = {a.region: np.array(a.responsive_load) for a in model.aggregators}
    return dispatch.DispatchProblem(model, spec.horizon, pinned_flex=pinned)


# ---------------------------------------------------------------- config


def _generator_from_sub(entry: dict, base_dir: Path, year_steps: int) -> Substitution:
    try:
        trace = read_series(base_dir / entry["trace"], year_steps)
        gen = Generator.from_prices(
            entry["id"], entry["region"], float(entry["capacity"]), [0.0], entry["kind"], availability=trace
        )
        return Substitution(entry["replace"], gen)
    except KeyError as exc:
        raise DataError(f"substitution entry missing field {exc}") from None


def load_scenarios(path, names: Sequence[str] | None = None) -> list[ScenarioSpec]:
    """Parse a scenario file into specs (in file order)."""
    path = Path(path)
    cfg = read_yaml(path)
    base_dir = path.parent
    try:
        base_model = load_network(base_dir / cfg["network"])
        hz = Horizon(**cfg.get("horizon", {}))
        year_steps = int(cfg.get("year_steps", 365 * hz.steps))
        profiles = load_profiles(cfg["profiles"], hz, year_steps, cfg.get("units", "MW"), base_dir)
        scale = unit_scale(cfg.get("uptake_units", "MW"))
        table = {
            r: {lvl: UptakeRow(v["soc_min"] * scale, v["soc_max"] * scale, v["pv_capacity"] * scale) for lvl, v in rows.items()}
            for r, rows in cfg.get("uptake_table", {}).items()
        }
        sub_sets = {
            k: tuple(_generator_from_sub(e, base_dir, year_steps) for e in v)
            for k, v in cfg.get("substitution_sets", {}).items()
        }
        cal = dict(cfg.get("calibration", {}))
        cal_days = tuple(cal.pop("days", (0,)))
        n_days = year_steps // hz.steps
        entries = cfg["scenarios"]
    except KeyError as exc:
        raise DataError(f"{path}: missing field {exc}") from None
    except TypeError as exc:
        raise DataError(f"{path}: {exc}") from None
    specs = []
    for e in entries:
        if names and e["name"] not in names:
            continue
        subs = e.get("substitutions", ())
        if isinstance(subs, str):
            if subs not in sub_sets:
                raise DataError(f"{path}: unknown substitution set {subs!r}")
            subs = sub_sets[subs]
        else:
            subs = tuple(_generator_from_sub(s, base_dir, year_steps) for s in subs)
        cal_cfg = {**cal, **e.get("calibration", {})}
        spec = ScenarioSpec(
            name=e["name"],
            base_model=base_model,
            profiles=profiles,
            substitutions=subs,
            dr_mode=e.get("dr_mode", "none"),
            uptake=e.get("uptake"),
            csp_shift=int(e.get("csp_shift", cfg.get("csp_shift", 0))),
            days=tuple(e.get("days", range(n_days))),
            calibration=storage.CalibrationConfig(**{k: v for k, v in cal_cfg.items() if k != "days"}),
            calibration_days=tuple(cal_cfg.get("days", cal_days)),
            horizon=hz,
            uptake_table=table,
            responsive_share=float(cfg.get("responsive_share", RESPONSIVE_SHARE)),
            user_share={k: float(v) for k, v in cfg.get("user_share", {}).items()},
            target_region=e.get("target_region", cfg.get("target_region", base_model.reference_region)),
            loadability_step=float(cfg.get("loadability_step", 10.0)),
            price_mode=e.get("price_mode", cfg.get("price_mode", "nodal")),
            pair=e.get("pair"),
        )
        bad = spec.violations()
        if bad:
            raise ModelValidationError(f"{path}: {bad[0]}", bad)
        specs.append(spec)
    if names:
        missing = set(names) - {s.name for s in specs}
        if missing:
            raise DataError(f"{path}: unknown scenario(s) {sorted(missing)}")
    return specs


# ---------------------------------------------------------------- running


def _signature(spec: ScenarioSpec, caps: dict) -> str:
    key = json.dumps(
        {
            "name": spec.name, "mode": spec.dr_mode, "uptake": spec.uptake, "shift": spec.csp_shift,
            "price": spec.price_mode, "caps": {k: caps[k] for k in sorted(caps)},
            "subs": [s.replace for s in spec.substitutions], "step": spec.loadability_step, "target": spec.target_region,
            "users": spec.user_share.get(spec.uptake, 1.0), "share": spec.responsive_share,
            "cal": repr(spec.calibration),
        },
        sort_keys=True,
    )
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def calibrate(spec: ScenarioSpec, year_model: NetworkModel | None = None) -> storage.StorageCalibration:
    year_model = year_model or apply_substitutions(spec)
    problems = [problem_for_day(spec, year_model, d) for d in spec.calibration_days]
    return storage.calibrate_charge_cap(problems, spec.calibration)


def _summarise(spec, day, sol, losses, recomputed, iterations, anticipator_objective, signature, caps):
    model = sol.model
    aggs = [model.aggregator(r) for r in model.region_ids]
    flex = np.array([sol.flex(a.region) for a in aggs])
    pv = np.array([a.pv for a in aggs])
    resp = np.array([a.responsive_load for a in aggs])
    battery = flex - resp + pv
    soc = np.array([storage.soc_trajectory(sol, a) for a in aggs])
    dh = spec.horizon.step_length
    energy_res = {
        a.region: float(
            np.sum(sol.flex(a.region)) * dh
            - np.sum(a.responsive_load - a.pv) * dh
            - float(losses.get(a.region, 0.0))
        )
        for a in aggs
    }
    load = analysis.loadability(model, sol, spec.target_region, spec.loadability_step)
    return DaySummary(
        scenario=spec.name,
        day=day,
        step_length=dh,
        objective=sol.objective,
        regions=tuple(model.region_ids),
        generators=tuple(g.id for g in model.generators),
        gas_turbines=tuple(g.id for g in model.generators if g.kind == GeneratorKind.GAS_TURBINE),
        generation=sol.generation,
        spill=sol.spill,
        unserved=sol.unserved,
        line_flows=sol.line_flows,
        price=sol.nodal_price,
        inflexible=np.array([a.inflexible_load for a in aggs]),
        responsive=resp,
        pv=pv,
        flexible=flex,
        battery=battery,
        soc=soc,
        battery_loss={k: float(v) for k, v in losses.items()},
        recomputed_loss={k: float(v) for k, v in recomputed.items()},
        demand=load.base_demand,
        loadability=load.per_hour,
        balance_residual=float(np.max(np.abs(sol.balance_residual()))),
        flow_residual=float(np.max(np.abs(sol.flow_residual()))),
        energy_residual=energy_res,
        anticipator_objective=anticipator_objective,
        loss_iterations=int(iterations),
        signature=signature,
        charge_cap={k: float(v) for k, v in caps.items()},
    )


def anticipator_day(spec, year_model, day, caps):
    """Battery-loss fixed point for one day; returns the LossCalibration."""
    prob = problem_for_day(spec, year_model, day, caps)
    return storage.calibrate_loss(prob, spec.calibration)


def run_day(spec: ScenarioSpec, year_model: NetworkModel, day: int, caps: dict, signature: str = "",
            paired: DaySummary | None = None, dump_lp=None) -> DaySummary:
    """Solve one day of ``spec`` and summarise it."""
    try:
        if spec.dr_mode == "none":
            prob = problem_for_day(spec, year_model, day)
            lp = dispatch.build(prob)
            if dump_lp:
                dispatch.write_mps(lp, Path(dump_lp) / f"{spec.name}_{day:03d}.mps", prob.model, spec.name)
            sol = dispatch.solve(prob, lp)
            return _summarise(spec, day, sol, {}, {}, 1, None, signature, caps)
        if spec.dr_mode == "anticipator":
            lc = anticipator_day(spec, year_model, day, caps)
            if dump_lp:
                lp = dispatch.build(lc.solution.problem)
                dispatch.write_mps(lp, Path(dump_lp) / f"{spec.name}_{day:03d}.mps", lc.solution.model, spec.name)
            return _summarise(spec, day, lc.solution, lc.battery_loss, lc.recomputed, lc.iterations, None, signature, caps)
        # taker: reuse the paired anticipator's loss when available
        if paired is not None:
            losses, ant_obj = paired.battery_loss, paired.objective
        else:
            lc = anticipator_day(spec, year_model, day, caps)
            losses, ant_obj = lc.battery_loss, lc.solution.objective
        prob = problem_for_day(spec, year_model, day, caps)
        base = dispatch.solve(pricetaker.inflexible_problem(prob))
        signal = pricetaker.derive_price_signal(base, spec.price_mode)
        responses = pricetaker.taker_responses(prob, signal, losses)
        frozen = prob.with_losses(losses).with_pinned(responses)
        lp = dispatch.build(frozen)
        if dump_lp:
            dispatch.write_mps(lp, Path(dump_lp) / f"{spec.name}_{day:03d}.mps", frozen.model, spec.name)
        sol = dispatch.solve(frozen, lp)
        recomputed = {a.region: storage.battery_energy_loss(sol, a) for a in sol.model.aggregators}
        return _summarise(spec, day, sol, losses, recomputed, 1, ant_obj, signature, caps)
    except AggDRError as exc:
        exc.args = (f"scenario {spec.name}, day {day}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def _day_path(out_dir, name, day) -> Path:
    return Path(out_dir) / "days" / name / f"{day:03d}.json"


def _load_summary(path: Path, signature: str) -> DaySummary | None:
    if not path.exists():
        return None
    try:
        s = DaySummary.from_json(path.read_text())
    except (ValueError, KeyError, TypeError, DataError):
        return None
    return s if signature is None or s.signature == signature else None


def _calibration_path(out_dir, name) -> Path:
    return Path(out_dir) / "calibration" / f"{name}.json"


def _save_calibration(cal: storage.StorageCalibration, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {
        "charge_cap": cal.charge_cap,
        "converged": cal.converged,
        "iterations": cal.iterations,
        "evidence": cal.evidence,
        "alpha": cal.alpha,
        "days": [
            {
                "battery_loss": d.battery_loss,
                "recomputed_loss": d.recomputed_loss,
                "soc": {k: v.tolist() for k, v in d.soc.items()},
            }
            for d in cal.days
        ],
    }
    path.write_text(json.dumps(data, sort_keys=True, indent=1))
    cal.write_csv(path.with_suffix(".csv"))


def _load_calibration(path: Path) -> storage.StorageCalibration | None:
    if not path.exists():
        return None
    try:
        data = json.loads(path.read_text())
        days = tuple(
            storage.DayCheck(d["battery_loss"], d["recomputed_loss"], {k: np.array(v) for k, v in d["soc"].items()}, None)
            for d in data["days"]
        )
        return storage.StorageCalibration(
            data["charge_cap"], data["converged"], data["iterations"], days, data["evidence"], data["alpha"]
        )
    except (ValueError, KeyError, TypeError):
        return None


def _run_day_job(args):
    spec, year_model, day, caps, signature, paired, dump_lp, out_dir = args
    summary = run_day(spec, year_model, day, caps, signature, paired, dump_lp)
    if out_dir is not None:
        _write_atomic(_day_path(out_dir, spec.name, day), summary.to_json())
    return summary


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def run_scenario(
    spec: ScenarioSpec,
    out_dir=None,
    days: Sequence[int] | None = None,
    parallel: int = 1,
    dump_lp=None,
    calibration: storage.StorageCalibration | None = None,
    progress=None,
    paired_days: dict | None = None,
) -> ScenarioResult:
    """Run ``spec`` over ``days`` (default: ``spec.days``).

    With ``out_dir`` set, calibration and finished days are persisted there
    and reused on the next call. A taker scenario with ``pair`` reuses the
    paired anticipator's calibration and daily losses when they are on disk.
    """
    bad = spec.violations()
    if bad:
        raise ModelValidationError(f"{len(bad)} scenario violation(s): {bad[0]}", bad)
    days = list(spec.days if days is None else days)
    for d in days:
        if not 0 <= d < spec.n_days:
            raise ModelValidationError(f"{spec.name}: day {d} outside 0..{spec.n_days - 1}")
    year_model = apply_substitutions(spec)
    check = validate(year_model.replace(generators=tuple(replace(g, availability=None) for g in year_model.generators)))
    if check:
        raise ModelValidationError(f"{spec.name}: {check[0]}", check)

    caps: dict[str, float] = {}
    if spec.dr_mode != "none":
        if calibration is None and out_dir is not None:
            for name in ([spec.pair] if spec.pair else []) + [spec.name]:
                calibration = _load_calibration(_calibration_path(out_dir, name))
                if calibration is not None:
                    break
        if calibration is None:
            calibration = calibrate(spec, year_model)
        if out_dir is not None:
            _save_calibration(calibration, _calibration_path(out_dir, spec.name))
        caps = dict(calibration.charge_cap)

    signature = _signature(spec, caps)
    summaries: dict[int, DaySummary] = {}
    todo = []
    for d in days:
        cached = _load_summary(_day_path(out_dir, spec.name, d), signature) if out_dir is not None else None
        if cached is not None:
            summaries[d] = cached
            continue
        paired = None
        if spec.dr_mode == "taker" and spec.pair:
            cand = (paired_days or {}).get(d)
            if cand is None and out_dir is not None:
                p = _day_path(out_dir, spec.pair, d)
                cand = _load_summary(p, None) if p.exists() else None
            paired = cand if cand is not None and _pair_matches(cand, caps) else None
        todo.append((spec, year_model, d, caps, signature, paired, dump_lp, out_dir))

    if parallel > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for s in pool.map(_run_day_job, todo, chunksize=max(1, len(todo) // (4 * parallel))):
                summaries[s.day] = s
                if progress:
                    progress(spec.name, s.day)
    else:
        for job in todo:
            s = _run_day_job(job)
            summaries[s.day] = s
            if progress:
                progress(spec.name, s.day)

    ordered = tuple(summaries[d] for d in days)
    return summarise_result(spec, ordered, calibration, caps, year_model.has_renewables())


def _pair_matches(summary: DaySummary, caps: dict) -> bool:
    # a paired day is usable only if it ran with the same charge caps
    return summary.charge_cap == {k: float(v) for k, v in caps.items()}


def summarise_result(spec, days: Sequence[DaySummary], calibration, caps, has_renewables) -> ScenarioResult:
    metrics = analysis.balancing_metrics(days)
    if days:
        per_hour = np.concatenate([d.loadability for d in days])
        base = np.concatenate([d.demand for d in days])
    else:
        per_hour = base = np.zeros(0)
    load = analysis.LoadabilityResult(per_hour, spec.target_region, spec.loadability_step, base)
    return ScenarioResult(spec.name, metrics, load, tuple(days), calibration, has_renewables, dict(caps))


def run_batch(specs: Sequence[ScenarioSpec], out_dir=None, days=None, parallel: int = 1, dump_lp=None,
              progress=None) -> list[ScenarioResult]:
    """Run scenarios in order; anticipators first so takers can reuse their days."""
    order = sorted(range(len(specs)), key=lambda i: specs[i].dr_mode == "taker")
    results: dict[int, ScenarioResult] = {}
    by_name: dict[str, ScenarioResult] = {}
    for i in order:
        spec = specs[i]
        pair = by_name.get(spec.pair) if spec.dr_mode == "taker" and spec.pair else None
        res = run_scenario(
            spec, out_dir, days, parallel, dump_lp,
            calibration=pair.calibration if pair else None,
            progress=progress,
            paired_days={d.day: d for d in pair.daily_solutions} if pair else None,
        )
        results[i] = by_name[spec.name] = res
    return [results[i] for i in range(len(specs))]
