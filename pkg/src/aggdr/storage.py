"""Implicit battery model: SOC reconstruction and heuristic calibration.

Battery state of charge is not an LP variable. Instead two nested searches
pick the aggregated maximum grid-charging rate (``charge_cap``) and a battery
energy loss consistent with the resulting schedule:

* the inner search steps the loss guess up by ``beta`` until the loss
  recomputed from the solved schedule is no more than ``epsilon`` above it;
* the outer search steps ``charge_cap`` up by ``alpha`` while the
  reconstructed SOC stays inside its limits and returns the last cap that
  did.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dispatch import DispatchProblem, DispatchSolution, battery_power, solve
from .errors import DegenerateStorage, NonConvergence
from .grid import AggregatorProfile

log = logging.getLogger(__name__)

SOC_TOL = 1e-6


@dataclass(frozen=True)
class CalibrationConfig:
    """Search parameters. ``alpha``/``beta`` may be per-region mappings.

    ``None`` selects the scale-free defaults: ``alpha`` is 1% of the
    aggregator's peak responsive load and ``beta`` 0.5% of its responsive
    energy over the horizon.
    """

    alpha: float | dict | None = None
    beta: float | dict | None = None
    epsilon: float = 1.0
    max_outer_iters: int = 200
    max_inner_iters: int = 200
    mode: str = "joint"  # or "sequential"

    def violations(self) -> list[str]:
        out = []
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            vals = val.values() if isinstance(val, dict) else [val]
            if any(v is not None and not v > 0 for v in vals):
                out.append(f"{name} must be > 0")
        if not self.epsilon > 0:
            out.append("epsilon must be > 0")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            out.append("iteration caps must be >= 1")
        if self.mode not in ("joint", "sequential"):
            out.append(f"unknown mode {self.mode!r}")
        return out

    def alpha_for(self, agg: AggregatorProfile) -> float:
        return _pick(self.alpha, agg.region, 0.01 * float(np.max(agg.responsive_load)))

    def beta_for(self, agg: AggregatorProfile, step_length: float) -> float:
        default = 0.005 * float(np.sum(agg.responsive_load) * step_length)
        return _pick(self.beta, agg.region, default)


def _pick(value, region, default):
    if isinstance(value, dict):
        value = value.get(region)
    if value is None:
        value = default
    # a zero default (no responsive load) would stall the search
    return float(value) if value > 0 else 1.0


def soc_trajectory(solution: DispatchSolution, agg: AggregatorProfile) -> np.ndarray:
    """SOC per step: starts at ``soc_initial`` and integrates battery power.

    ``SOC(h) = SOC(h-1) + P_B(h-1) * dh``; no efficiency term appears in
    the recursion.
    """
    pb = battery_power(solution, agg.region)
    dh = solution.problem.horizon.step_length
    soc = np.empty(len(pb))
    soc[0] = agg.storage.soc_initial
    soc[1:] = agg.storage.soc_initial + np.cumsum(pb[:-1]) * dh
    return soc


def soc_violation(soc: np.ndarray, agg: AggregatorProfile) -> float:
    """Largest excursion (MWh) outside the SOC limits over steps 2..H."""
    tail = soc[1:]
    if len(tail) == 0:
        return 0.0
    over = np.max(tail - agg.storage.soc_max)
    under = np.max(agg.storage.soc_min - tail)
    return float(max(over, under, 0.0))


def soc_within_limits(soc: np.ndarray, agg: AggregatorProfile, tol: float = SOC_TOL) -> bool:
    return soc_violation(soc, agg) <= tol


def battery_energy_loss(solution: DispatchSolution, agg: AggregatorProfile) -> float:
    """``(1 - eta) * sum of positive battery power * dh`` in MWh."""
    pb = battery_power(solution, agg.region)
    dh = solution.problem.horizon.step_length
    eta = agg.storage.round_trip_efficiency
    return float((1.0 - eta) * np.sum(np.clip(pb, 0.0, None)) * dh)


@dataclass(frozen=True, eq=False)
class LossCalibration:
    battery_loss: dict[str, float]
    recomputed: dict[str, float]
    solution: DispatchSolution
    iterations: int

    def gap(self, region: str) -> float:
        """Recomputed minus used loss (the inner loop's exit test)."""
        return self.recomputed[region] - self.battery_loss[region]


def calibrate_loss(
    problem: DispatchProblem,
    config: CalibrationConfig,
    regions: Sequence[str] | None = None,
) -> LossCalibration:
    """Fixed-point search for the battery loss of each coupled aggregator.

    All listed aggregators are searched together because they share one LP:
    each iteration solves with the current guesses, recomputes the losses
    and bumps by ``beta`` every guess whose recomputed loss exceeds it by
    more than ``epsilon``. Guesses only ever increase.

    Raises:
        NonConvergence: after ``max_inner_iters`` solves; ``.result`` holds
            the last iterate.
    """
    model = problem.model
    if regions is None:
        regions = [a.region for a in model.aggregators if not problem.is_pinned(a.region)]
    aggs = {r: model.aggregator(r) for r in regions}
    dh = problem.horizon.step_length
    for r, agg in aggs.items():
        if agg.charge_cap < 0:
            raise ValueError(f"aggregator {r}: charge_cap must be >= 0")
    guess = {r: 0.0 for r in regions}
    betas = {r: config.beta_for(a, dh) for r, a in aggs.items()}

    recomputed: dict[str, float] = {}
    solution = None
    for it in range(1, config.max_inner_iters + 1):
        solution = solve(problem.with_losses(guess))
        recomputed = {r: battery_energy_loss(solution, a) for r, a in aggs.items()}
        behind = [r for r in regions if recomputed[r] - guess[r] > config.epsilon]
        if not behind:
            return LossCalibration(dict(guess), recomputed, solution, it)
        for r in behind:
            guess[r] += betas[r]
    last = LossCalibration(dict(guess), recomputed, solution, config.max_inner_iters)
    worst = max(last.gap(r) for r in regions)
    raise NonConvergence(
        f"battery loss search did not converge in {config.max_inner_iters} iterations "
        f"(largest gap {worst:.3f} MWh)",
        gap=worst,
        result=last,
    )


@dataclass(frozen=True, eq=False)
class DayCheck:
    """Calibration evidence for one representative horizon."""

    battery_loss: dict[str, float]
    recomputed_loss: dict[str, float]
    soc: dict[str, np.ndarray]
    solution: DispatchSolution


@dataclass(frozen=True, eq=False)
class StorageCalibration:
    charge_cap: dict[str, float]
    converged: dict[str, bool]
    iterations: dict[str, int]
    days: tuple[DayCheck, ...]
    # region -> caps of the first trial that violated that region's SOC limits
    evidence: dict[str, dict[str, float]] = field(default_factory=dict)
    alpha: dict[str, float] = field(default_factory=dict)

    @property
    def battery_loss(self) -> dict[str, float]:
        return self.days[0].battery_loss

    @property
    def soc_trajectory(self) -> dict[str, np.ndarray]:
        return self.days[0].soc

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["aggregator", "charge_cap", "battery_loss", "iterations", "converged"])
            for region in sorted(self.charge_cap):
                w.writerow(
                    [
                        region,
                        f"{self.charge_cap[region]:.6f}",
                        f"{self.battery_loss.get(region, 0.0):.6f}",
                        self.iterations[region],
                        str(self.converged[region]).lower(),
                    ]
                )


def _evaluate(problems, caps, config, regions):
    """Run the loss search on every horizon at ``caps``; return DayChecks."""
    out = []
    for prob in problems:
        prob = prob.with_model(prob.model.with_charge_caps(caps))
        lc = calibrate_loss(prob, config, regions)
        soc = {r: soc_trajectory(lc.solution, prob.model.aggregator(r)) for r in regions}
        out.append(DayCheck(lc.battery_loss, lc.recomputed, soc, lc.solution))
    return out


def _violators(days, problems, regions):
    bad = set()
    for day, prob in zip(days, problems):
        for r in regions:
            if not soc_within_limits(day.soc[r], prob.model.aggregator(r)):
                bad.add(r)
    return bad


def calibrate_charge_cap(
    problems: DispatchProblem | Sequence[DispatchProblem],
    config: CalibrationConfig = CalibrationConfig(),
) -> StorageCalibration:
    """Search the largest SOC-feasible ``charge_cap`` for every aggregator.

    ``problems`` are representative horizons; a cap is accepted only if the
    SOC limits hold on all of them. In ``joint`` mode every still-active
    aggregator steps up by its ``alpha`` at once; an aggregator whose SOC
    leaves its limits is frozen at its previous cap. ``sequential`` mode
    searches aggregators one at a time in region order.

    Aggregators with ``soc_min == soc_max`` are pinned at cap 0 and reported
    unconverged. If the search stops on ``max_outer_iters`` while an
    aggregator is still feasible, that aggregator is reported unconverged.
    """
    if isinstance(problems, DispatchProblem):
        problems = [problems]
    problems = list(problems)
    bad = config.violations()
    if bad:
        raise ValueError("; ".join(bad))
    base = problems[0].model
    regions = [a.region for a in base.aggregators if not problems[0].is_pinned(a.region)]
    alpha = {r: config.alpha_for(base.aggregator(r)) for r in regions}

    degenerate = [r for r in regions if base.aggregator(r).storage.soc_max <= base.aggregator(r).storage.soc_min]
    for r in degenerate:
        log.warning("%s: %s", r, DegenerateStorage(f"aggregator {r}: soc_min equals soc_max"))

    caps = {r: 0.0 for r in regions}
    days = _evaluate(problems, caps, config, regions)
    infeasible_at_zero = _violators(days, problems, regions)
    converged = {r: r not in infeasible_at_zero and r not in degenerate for r in regions}
    iterations = {r: 0 for r in regions}
    evidence: dict[str, dict[str, float]] = {}
    for r in infeasible_at_zero | set(degenerate):
        evidence[r] = dict(caps)

    watch = [r for r in regions if r not in infeasible_at_zero]
    order = [[r] for r in regions] if config.mode == "sequential" else [regions]
    for group in order:
        active = [r for r in group if converged[r]]
        it = 0
        while active and it < config.max_outer_iters:
            it += 1
            trial = dict(caps)
            for r in active:
                trial[r] = caps[r] + alpha[r]
                iterations[r] += 1
            trial_days = _evaluate(problems, trial, config, regions)
            violators = _violators(trial_days, problems, watch)
            if not violators:
                caps, days = trial, trial_days
                continue
            hit = [r for r in active if r in violators]
            if not hit:
                # a frozen aggregator broke: no further joint step is safe
                hit = list(active)
            for r in hit:
                evidence[r] = dict(trial)
                active.remove(r)
            # retry the remaining ones from the accepted state
        for r in active:
            converged[r] = False
            log.warning("aggregator %s: charge cap search hit max_outer_iters", r)

    return StorageCalibration(
        charge_cap=dict(caps),
        converged=converged,
        iterations=iterations,
        days=tuple(days),
        evidence=evidence,
        alpha=alpha,
    )
