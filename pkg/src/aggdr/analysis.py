"""Balancing metrics and DC loadability.

Loadability sweep, per hour: demand in the target region grows in steps of
``step_size`` MW. Target-region dispatchable units pick the increase up in
equal shares (capped at their limits, with a capped unit's share passed on
to the others). Once they are exhausted, the remainder is imported through
the network from the reference region's dispatchable units, which act as
the slack. Each step recomputes DC flows; the sweep stops at the first step
that breaks a line or generator limit. The hour's loadability is the total
system demand at the last feasible step.

System demand is counted as consumption by default: inflexible plus
responsive load, including the part met behind the meter by PV and
batteries. ``basis="nett"`` counts grid-side nett demand instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from typing import Iterable

import numpy as np

from .errors import ModelValidationError, NoGeneratorsInRegion
from .grid import NetworkModel

SLACK_TOL = 1e-3  # MW; an hour counts as spilled/unserved above this
LIMIT_TOL = 1e-6


@dataclass(frozen=True)
class BalancingMetrics:
    spilled_energy: float = 0.0  # MWh
    spilled_hours_pct: float = 0.0
    unserved_energy: float = 0.0  # MWh
    unserved_hours: float = 0.0
    backup_energy: float = 0.0  # MWh from gas turbines
    spilled_hours: float = 0.0
    total_hours: float = 0.0

    def __add__(self, other: "BalancingMetrics") -> "BalancingMetrics":
        summed = {f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)}
        hours = summed["total_hours"]
        summed["spilled_hours_pct"] = 100.0 * summed["spilled_hours"] / hours if hours else 0.0
        return BalancingMetrics(**summed)


def balancing_metrics(solutions: Iterable) -> BalancingMetrics:
    """Fold spill, unserved and gas-turbine energy over consecutive horizons.

    Each item needs ``spill`` and ``unserved`` arrays shaped (regions, steps),
    a ``gas_turbine_output()`` method and a ``step_length`` attribute; both
    ``DispatchSolution`` and persisted day summaries qualify.
    """
    total = BalancingMetrics()
    for sol in solutions:
        dh = sol.step_length
        spill = np.asarray(sol.spill)
        uns = np.asarray(sol.unserved)
        steps = spill.shape[1]
        spilled = np.any(spill > SLACK_TOL, axis=0)
        short = np.any(uns > SLACK_TOL, axis=0)
        total = total + BalancingMetrics(
            spilled_energy=float(spill.sum() * dh),
            unserved_energy=float(uns.sum() * dh),
            unserved_hours=float(short.sum() * dh),
            backup_energy=float(np.sum(sol.gas_turbine_output()) * dh),
            spilled_hours=float(spilled.sum() * dh),
            total_hours=float(steps * dh),
        )
    return total


@dataclass(frozen=True, eq=False)
class LoadabilityResult:
    per_hour: np.ndarray  # MW
    target_region: str
    step_size: float
    base_demand: np.ndarray | None = None
    last_step: np.ndarray | None = None

    @property
    def average(self) -> float:
        return float(np.mean(self.per_hour)) if len(self.per_hour) else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "base_demand", "loadability"])
            for t, val in enumerate(self.per_hour):
                base = self.base_demand[t] if self.base_demand is not None else float("nan")
                w.writerow([t, f"{base:.6f}", f"{val:.6f}"])


def share_added_demand(headroom: np.ndarray, added: float) -> np.ndarray:
    """Split ``added`` MW equally over units, capping each at its headroom.

    A capped unit's unmet share is spread over the remaining units. Returns
    the pick-up per unit; the total is ``min(added, headroom.sum())``.
    """
    room = np.clip(np.asarray(headroom, dtype=float), 0.0, None)
    pick = np.zeros_like(room)
    left = float(added)
    open_ = room > 0
    while left > 1e-12 and open_.any():
        share = left / open_.sum()
        step = np.where(open_, np.minimum(share, room - pick), 0.0)
        pick += step
        left -= step.sum()
        open_ = open_ & (room - pick > 1e-12)
    return pick


def transfer_sensitivity(model: NetworkModel, source: str, sink: str) -> np.ndarray:
    """Line-flow change (MW per MW) for injection at ``source`` withdrawn at ``sink``."""
    R = len(model.regions)
    flow_map = np.zeros((len(model.lines), R))
    for k, line in enumerate(model.lines):
        b = line.susceptance * model.base_mva
        flow_map[k, model.region_index(line.from_region)] = b
        flow_map[k, model.region_index(line.to_region)] = -b
    lap = np.sign(flow_map).T @ flow_map
    ref = model.region_index(model.reference_region)
    keep = [i for i in range(R) if i != ref]
    inj = np.zeros(R)
    inj[model.region_index(source)] += 1.0
    inj[model.region_index(sink)] -= 1.0
    theta = np.zeros(R)
    if keep:
        theta[keep] = np.linalg.solve(lap[np.ix_(keep, keep)], inj[keep])
    return flow_map @ theta


def system_demand(solution, basis: str = "consumption") -> np.ndarray:
    """Total system demand per step (MW) on the chosen basis."""
    if basis == "nett":
        return solution.regional_demand().sum(axis=0)
    if basis != "consumption":
        raise ValueError(f"unknown demand basis {basis!r}")
    out = np.zeros(solution.steps)
    for agg in solution.model.aggregators:
        out += agg.inflexible_load[: solution.steps] + agg.responsive_load[: solution.steps]
    return out


def loadability(
    model: NetworkModel | None,
    solution,
    target_region: str,
    step_size: float = 10.0,
    basis: str = "consumption",
) -> LoadabilityResult:
    """Per-hour DC loadability around the solved operating point.

    ``model`` defaults to the solution's model. Hours that already carry
    unserved energy score their base demand.

    Raises:
        NoGeneratorsInRegion: no dispatchable unit in ``target_region``.
    """
    if not step_size > 0:
        raise ModelValidationError("loadability step_size must be > 0")
    model = model or solution.model
    if target_region not in model.region_ids:
        raise ModelValidationError(f"unknown target region {target_region!r}")
    T = solution.steps
    gens = list(model.generators)
    target = [i for i, g in enumerate(gens) if g.region == target_region and not g.renewable]
    if not target:
        raise NoGeneratorsInRegion(f"no dispatchable generators in {target_region}")
    ref = model.reference_region
    slack = [] if ref == target_region else [i for i, g in enumerate(gens) if g.region == ref and not g.renewable]

    upper = np.array([g.upper_bound(T) for g in gens])
    headroom = np.clip(upper - solution.generation, 0.0, None)
    h_target = headroom[target].sum(axis=0)
    h_slack = headroom[slack].sum(axis=0) if slack else np.zeros(T)
    sens = transfer_sensitivity(model, ref, target_region) if slack else np.zeros(len(model.lines))
    fmin = np.array([ln.flow_min for ln in model.lines])
    fmax = np.array([ln.flow_max for ln in model.lines])

    demand = system_demand(solution, basis)
    short = np.asarray(solution.unserved).sum(axis=0) > SLACK_TOL
    last = np.zeros(T, dtype=int)
    for h in range(T):
        if short[h]:
            continue
        flows = solution.line_flows[:, h]
        if np.any(flows > fmax + LIMIT_TOL) or np.any(flows < fmin - LIMIT_TOL):
            continue
        kmax = int(np.floor((h_target[h] + h_slack[h]) / step_size + 1e-9)) + 1
        added = step_size * np.arange(1, kmax + 1)
        imported = np.clip(added - h_target[h], 0.0, None)
        ok = imported <= h_slack[h] + LIMIT_TOL
        trial = flows[:, None] + sens[:, None] * imported[None, :]
        ok &= np.all(trial <= fmax[:, None] + LIMIT_TOL, axis=0)
        ok &= np.all(trial >= fmin[:, None] - LIMIT_TOL, axis=0)
        bad = np.flatnonzero(~ok)
        last[h] = bad[0] if len(bad) else kmax
    per_hour = demand + last * step_size
    return LoadabilityResult(per_hour, target_region, float(step_size), demand, last)
