"""Price-taking comparator.

Three stages, no feedback between them:

1. dispatch with flexibility disabled (users draw ``P_U - P_PV``) and read
   the nodal prices off the balance duals;
2. each aggregator independently minimises its energy bill against those
   prices subject to its own flex bounds and energy requirement;
3. re-dispatch with every aggregator's flexible demand frozen at its
   response.

Stage 2 is a single-row LP (a continuous knapsack), solved exactly by
filling the cheapest steps first. Equal prices go to the earlier step, which
is what makes identical users pile into the same hours.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dispatch import DispatchProblem, DispatchSolution, check_energy_interval, energy_target, solve
from .errors import DataError
from .grid import AggregatorProfile, Horizon

PRICE_DECIMALS = 2


@dataclass(frozen=True, eq=False)
class PriceSignal:
    """Price in $/MWh per region per step."""

    regions: tuple[str, ...]
    price: np.ndarray  # (n_regions, steps)

    def __post_init__(self):
        arr = np.array(self.price, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != len(self.regions):
            raise ValueError("price must have one row per region")
        if not np.all(np.isfinite(arr)):
            raise ValueError("price signal must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "price", arr)

    def of(self, region: str) -> np.ndarray:
        try:
            return self.price[self.regions.index(region)]
        except ValueError:
            raise KeyError(f"price signal does not cover region {region!r}") from None

    def system(self, weights: np.ndarray | None = None) -> "PriceSignal":
        """Collapse to one system price (weighted mean over regions) per step."""
        if weights is None:
            flat = self.price.mean(axis=0)
        else:
            w = np.asarray(weights, dtype=float)
            flat = (self.price * w).sum(axis=0) / np.where(w.sum(axis=0) > 0, w.sum(axis=0), 1.0)
        flat = np.round(flat, PRICE_DECIMALS)
        return PriceSignal(self.regions, np.tile(flat, (len(self.regions), 1)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["region", "step", "price"])
            for i, region in enumerate(self.regions):
                for t, p in enumerate(self.price[i]):
                    w.writerow([region, t, f"{p:.{PRICE_DECIMALS}f}"])

    @classmethod
    def read_csv(cls, path) -> "PriceSignal":
        rows: dict[str, dict[int, float]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["region", "step", "price"]:
                raise DataError(f"{path}: expected header region,step,price")
            for n, row in enumerate(reader, start=2):
                try:
                    rows.setdefault(row["region"], {})[int(row["step"])] = float(row["price"])
                except (TypeError, ValueError) as exc:
                    raise DataError(f"{path}:{n}: {exc}") from exc
        regions = tuple(rows)
        steps = max(len(v) for v in rows.values())
        price = np.zeros((len(regions), steps))
        for i, r in enumerate(regions):
            if sorted(rows[r]) != list(range(steps)):
                raise DataError(f"{path}: region {r} does not cover steps 0..{steps - 1}")
            price[i] = [rows[r][t] for t in range(steps)]
        return cls(regions, price)


def unmodified_flex(agg: AggregatorProfile) -> np.ndarray:
    """Users' own consumption nett of PV, clipped to the flex bounds."""
    return np.clip(agg.responsive_load - agg.pv, agg.flex_min, agg.flex_max)


def inflexible_problem(problem: DispatchProblem) -> DispatchProblem:
    pinned = {a.region: unmodified_flex(a) for a in problem.model.aggregators}
    return problem.with_pinned(pinned)


def derive_price_signal(
    base: DispatchProblem | DispatchSolution, mode: str = "nodal"
) -> PriceSignal:
    """Prices from the dispatch with flexibility disabled.

    Accepts either the inflexible solution itself or a problem, which is
    then pinned and solved. Prices are rounded to cents, which removes the
    LP's tie-break perturbations from the duals.
    """
    if isinstance(base, DispatchProblem):
        base = solve(inflexible_problem(base))
    model = base.model
    price = np.clip(np.round(base.nodal_price, PRICE_DECIMALS), 0.0, None)
    signal = PriceSignal(tuple(model.region_ids), price)
    if mode == "system":
        return signal.system(weights=base.regional_demand())
    if mode != "nodal":
        raise ValueError(f"unknown price mode {mode!r}")
    return signal


def taker_response(
    agg: AggregatorProfile,
    signal: PriceSignal,
    battery_loss: float,
    horizon: Horizon | None = None,
) -> np.ndarray:
    """Bill-minimising flexible demand for one aggregator (MW per step).

    Starts every step at ``flex_min`` and pours the remaining energy into
    steps in order of (price, step index), each up to ``flex_max``.
    """
    horizon = horizon or Horizon(agg.steps)
    check_energy_interval(agg, horizon, battery_loss)
    dh = horizon.step_length
    price = signal.of(agg.region)[: agg.steps]
    flex = np.array(agg.flex_min, dtype=float)
    remaining = energy_target(agg, horizon, battery_loss) - float(flex.sum() * dh)
    room = agg.flex_max - flex
    last = 0
    for t in np.lexsort((np.arange(len(price)), price)):
        if remaining <= 0:
            break
        take = min(room[t], remaining / dh)
        flex[t] += take
        remaining -= take * dh
        last = t
    # rounding dust from the running subtraction goes to the last step filled
    flex[last] += remaining / dh
    return flex


def taker_responses(
    problem: DispatchProblem, signal: PriceSignal, losses: Mapping[str, float] | None = None
) -> dict[str, np.ndarray]:
    losses = problem.battery_loss if losses is None else losses
    return {
        a.region: taker_response(a, signal, float(losses.get(a.region, 0.0)), problem.horizon)
        for a in problem.model.aggregators
    }


def taker_dispatch(problem: DispatchProblem, responses: Mapping[str, np.ndarray]) -> DispatchSolution:
    """Re-dispatch with flexible demand frozen at ``responses``."""
    return solve(problem.with_pinned(dict(responses)))
