"""Static network, generator and aggregator data types.

Units are MW / MWh / $/MWh throughout. Power series are numpy arrays of
length ``Horizon.steps``; they are frozen (read-only) on construction so the
objects can be shared between workers.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

BLOCK_TOL = 1e-6


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


class GeneratorKind(str, Enum):
    COAL = "coal"
    GAS_TURBINE = "gas_turbine"
    HYDRO = "hydro"
    BIOMASS = "biomass"
    WIND = "wind"
    CSP = "csp"

    @property
    def renewable(self) -> bool:
        return self in (GeneratorKind.WIND, GeneratorKind.CSP)


@dataclass(frozen=True)
class Horizon:
    steps: int = 24
    step_length: float = 1.0  # hours

    @property
    def hours(self) -> float:
        return self.steps * self.step_length


@dataclass(frozen=True)
class Region:
    id: str
    name: str = ""


@dataclass(frozen=True)
class Line:
    """Inter-region line. Positive flow runs ``from_region -> to_region``."""

    from_region: str
    to_region: str
    susceptance: float  # per unit on the model's MVA base
    flow_min: float
    flow_max: float

    @property
    def id(self) -> str:
        return f"{self.from_region}-{self.to_region}"


@dataclass(frozen=True)
class BidBlock:
    price: float
    capacity: float


@dataclass(frozen=True, eq=False)
class Generator:
    """A bidding generator.

    ``availability`` (per-unit, one value per step) turns ``p_max`` into a
    time-varying upper bound; it is used for wind and CSP plants, whose
    output is treated as must-take.
    """

    id: str
    region: str
    p_max: float
    blocks: tuple[BidBlock, ...]
    kind: GeneratorKind = GeneratorKind.COAL
    p_min: float = 0.0
    availability: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GeneratorKind(self.kind))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.availability is not None:
            object.__setattr__(self, "availability", _frozen(self.availability))

    @classmethod
    def from_prices(cls, id, region, p_max, prices, kind=GeneratorKind.COAL, **kw):
        """Split ``p_max`` into equal-width blocks, one per price."""
        width = p_max / len(prices)
        blocks = tuple(BidBlock(float(p), width) for p in prices)
        return cls(id=id, region=region, p_max=p_max, blocks=blocks, kind=kind, **kw)

    @property
    def renewable(self) -> bool:
        return self.kind.renewable

    def upper_bound(self, steps: int) -> np.ndarray:
        """Per-step maximum output in MW."""
        if self.availability is None:
            return np.full(steps, self.p_max)
        return self.p_max * np.asarray(self.availability[:steps])

    def cost(self, output: float) -> float:
        """Cost in $/h of producing ``output`` MW, filling blocks in order."""
        remaining = output
        total = 0.0
        for block in self.blocks:
            used = min(max(remaining, 0.0), block.capacity)
            total += used * block.price
            remaining -= used
        if remaining > BLOCK_TOL:
            raise ValueError(f"{self.id}: output {output} exceeds block capacity")
        return total


@dataclass(frozen=True, eq=False)
class StorageParams:
    soc_min: float
    soc_max: float
    soc_initial: float | None = None
    round_trip_efficiency: float = 0.9

    def __post_init__(self):
        if self.soc_initial is None:
            object.__setattr__(self, "soc_initial", 0.5 * (self.soc_min + self.soc_max))


@dataclass(frozen=True, eq=False)
class AggregatorProfile:
    """One load aggregator (one per region).

    ``responsive_load`` is the price-responsive demand before PV and storage
    act on it; ``flex_min`` is the lower bound on flexible demand (zero means
    users never export to the grid).
    """

    region: str
    inflexible_load: np.ndarray
    responsive_load: np.ndarray
    pv: np.ndarray
    storage: StorageParams
    flex_min: np.ndarray | None = None
    charge_cap: float = 0.0

    def __post_init__(self):
        for name in ("inflexible_load", "responsive_load", "pv"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.flex_min is None:
            object.__setattr__(self, "flex_min", _frozen(np.zeros(len(self.responsive_load))))
        else:
            object.__setattr__(self, "flex_min", _frozen(self.flex_min))

    @property
    def id(self) -> str:
        return self.region

    @property
    def steps(self) -> int:
        return len(self.responsive_load)

    @property
    def flex_max(self) -> np.ndarray:
        return self.charge_cap + self.responsive_load

    def with_charge_cap(self, charge_cap: float) -> "AggregatorProfile":
        return dataclasses.replace(self, charge_cap=float(charge_cap))


@dataclass(frozen=True, eq=False)
class NetworkModel:
    regions: tuple[Region, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    aggregators: tuple[AggregatorProfile, ...] = ()
    reference_region: str = ""
    base_mva: float = 100.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "lines", tuple(self.lines))
        # lexicographic generator order fixes LP variable order and tie-breaking
        object.__setattr__(self, "generators", tuple(sorted(self.generators, key=lambda g: g.id)))
        object.__setattr__(self, "aggregators", tuple(self.aggregators))
        if not self.reference_region and self.regions:
            object.__setattr__(self, "reference_region", self.regions[0].id)
        object.__setattr__(self, "_index", {r.id: i for i, r in enumerate(self.regions)})

    @property
    def region_ids(self) -> list[str]:
        return [r.id for r in self.regions]

    def region_index(self, region_id: str) -> int:
        return self._index[region_id]

    def aggregator(self, region_id: str) -> AggregatorProfile:
        for agg in self.aggregators:
            if agg.region == region_id:
                return agg
        raise KeyError(f"unknown aggregator {region_id!r}")

    def generator(self, gen_id: str) -> Generator:
        for gen in self.generators:
            if gen.id == gen_id:
                return gen
        raise KeyError(f"unknown generator {gen_id!r}")

    def replace(self, **changes) -> "NetworkModel":
        return dataclasses.replace(self, **changes)

    def with_aggregators(self, aggregators: Sequence[AggregatorProfile]) -> "NetworkModel":
        return self.replace(aggregators=tuple(aggregators))

    def with_charge_caps(self, caps: dict[str, float]) -> "NetworkModel":
        aggs = [a.with_charge_cap(caps.get(a.region, a.charge_cap)) for a in self.aggregators]
        return self.with_aggregators(aggs)

    def has_renewables(self) -> bool:
        return any(g.renewable for g in self.generators)


def validate(model: NetworkModel, horizon: Horizon | None = None) -> list[str]:
    """Check every type invariant; return one message per violation."""
    out: list[str] = []
    ids = [r.id for r in model.regions]
    known = set(ids)
    if len(known) != len(ids):
        out.append("regions: duplicate region ids")
    if model.reference_region not in known:
        out.append(f"network: reference region {model.reference_region!r} does not exist")

    for line in model.lines:
        tag = f"line {line.id}"
        for end in (line.from_region, line.to_region):
            if end not in known:
                out.append(f"{tag}: endpoint {end!r} does not exist")
        if line.from_region == line.to_region:
            out.append(f"{tag}: from and to are the same region")
        if line.flow_min > line.flow_max:
            out.append(f"{tag}: flow_min exceeds flow_max")
        if not line.susceptance > 0:
            out.append(f"{tag}: susceptance must be positive")

    gen_ids = [g.id for g in model.generators]
    if len(set(gen_ids)) != len(gen_ids):
        out.append("generators: duplicate generator ids")
    for gen in model.generators:
        out.extend(_generator_violations(gen, known, horizon))

    seen = {}
    for agg in model.aggregators:
        if agg.region not in known:
            out.append(f"aggregator {agg.region}: region does not exist")
        seen[agg.region] = seen.get(agg.region, 0) + 1
        out.extend(_aggregator_violations(agg, horizon))
    if model.aggregators:
        for rid in ids:
            if seen.get(rid, 0) != 1:
                out.append(f"aggregator {rid}: expected exactly one aggregator, found {seen.get(rid, 0)}")

    if ids and not _connected(ids, model.lines):
        out.append("network: line graph is not connected")
    return out


def _generator_violations(gen, known, horizon):
    tag = f"generator {gen.id}"
    out = []
    if gen.region not in known:
        out.append(f"{tag}: region {gen.region!r} does not exist")
    if not 0 <= gen.p_min <= gen.p_max:
        out.append(f"{tag}: requires 0 <= p_min <= p_max")
    total = sum(b.capacity for b in gen.blocks)
    if abs(total - gen.p_max) > BLOCK_TOL * max(1.0, gen.p_max):
        out.append(f"{tag}: block capacities sum to {total:g}, p_max is {gen.p_max:g}")
    for b in gen.blocks:
        if b.price < 0 or b.capacity < 0:
            out.append(f"{tag}: negative block price or capacity")
            break
    prices = [b.price for b in gen.blocks]
    if any(p2 < p1 for p1, p2 in zip(prices, prices[1:])):
        out.append(f"{tag}: block prices must be nondecreasing")
    if gen.renewable and (len(gen.blocks) != 1 or gen.blocks[0].price != 0):
        out.append(f"{tag}: renewable units bid a single zero-price block")
    if gen.availability is not None:
        if np.any(gen.availability < 0) or np.any(gen.availability > 1 + 1e-9):
            out.append(f"{tag}: availability must lie in [0, 1]")
        if horizon is not None and len(gen.availability) != horizon.steps:
            out.append(f"{tag}: availability length {len(gen.availability)} != {horizon.steps}")
    return out


def _aggregator_violations(agg, horizon):
    tag = f"aggregator {agg.region}"
    out = []
    n = horizon.steps if horizon is not None else agg.steps
    for name in ("inflexible_load", "responsive_load", "pv", "flex_min"):
        series = getattr(agg, name)
        if len(series) != n:
            out.append(f"{tag}: {name} has length {len(series)}, expected {n}")
        elif name != "flex_min" and np.any(series < 0):
            out.append(f"{tag}: {name} has negative values")
    if len(agg.flex_min) == len(agg.responsive_load) and np.any(agg.flex_min > agg.flex_max + 1e-9):
        out.append(f"{tag}: flex_min exceeds flex_max")
    if agg.charge_cap < 0:
        out.append(f"{tag}: charge_cap must be >= 0")
    st = agg.storage
    if not 0 <= st.soc_min <= st.soc_initial <= st.soc_max:
        out.append(f"{tag}: requires 0 <= soc_min <= soc_initial <= soc_max")
    if not 0 < st.round_trip_efficiency <= 1:
        out.append(f"{tag}: round_trip_efficiency must be in (0, 1]")
    return out


def _connected(ids, lines) -> bool:
    adj = {i: set() for i in ids}
    for line in lines:
        if line.from_region in adj and line.to_region in adj:
            adj[line.from_region].add(line.to_region)
            adj[line.to_region].add(line.from_region)
    seen = {ids[0]}
    queue = deque([ids[0]])
    while queue:
        for nxt in adj[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return len(seen) == len(ids)


def total_required_energy(agg: AggregatorProfile, horizon: Horizon) -> float:
    """Energy the aggregator's users need over the horizon, in MWh."""
    return float(np.sum(agg.inflexible_load + agg.responsive_load) * horizon.step_length)
