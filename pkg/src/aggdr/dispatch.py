"""Multi-period dispatch LP with aggregated flexible demand.

Decision variables per step: one output per bid block, one flexible demand
per aggregator, one voltage angle per region, and unserved / spilled power
slacks per region. Line flows are linear expressions in the angles.

Per aggregator, a horizon-coupling row keeps the energy drawn by flexible
demand equal to the responsive users' energy nett of PV plus the battery
loss::

    sum_h P_F(h) dh = sum_h (P_U(h) - P_PV(h)) dh + E_loss

Battery power ``P_F - P_U + P_PV`` is split into charge and discharge
variables carrying a tiny throughput cost, so PV serves users directly
unless storing it actually lowers the dispatch cost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import InfeasibleBalanceError, InfeasibleModel, ModelValidationError, NumericalFailure
from .grid import AggregatorProfile, GeneratorKind, Horizon, NetworkModel, validate

log = logging.getLogger(__name__)

VALUE_OF_LOST_LOAD = 14_500.0
# Cost perturbations used only to break ties between equal-cost optima.
# They are far below the smallest bid spread (one cent) and never enter
# reported costs. The battery term must exceed the largest block-rank
# spread, or the LP cycles storage to chase rank differences.
BLOCK_TIE_EPS = 1e-6  # $/MWh per lexicographic block rank
BATTERY_TIE_EPS = 1e-3  # $/MWh of battery throughput; prefers using PV directly
FLEX_TIE_EPS = 1e-7  # $/MWh per step; prefers earlier steps
BALANCE_TOL = 1e-6

_HIGHS_OPTIONS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}


@dataclass(frozen=True, eq=False)
class DispatchProblem:
    model: NetworkModel
    horizon: Horizon = Horizon()
    battery_loss: Mapping[str, float] = field(default_factory=dict)
    value_of_lost_load: float = VALUE_OF_LOST_LOAD
    spill_price: float = 0.0
    # region -> flexible demand series fixed in advance (no coupling row)
    pinned_flex: Mapping[str, np.ndarray] | None = None

    def loss(self, region: str) -> float:
        return float(self.battery_loss.get(region, 0.0))

    def is_pinned(self, region: str) -> bool:
        return self.pinned_flex is not None and region in self.pinned_flex

    def violations(self) -> list[str]:
        out = validate(self.model, self.horizon)
        if self.horizon.steps < 1 or self.horizon.step_length <= 0:
            out.append("horizon: requires steps >= 1 and step_length > 0")
        for region, loss in self.battery_loss.items():
            if loss < 0:
                out.append(f"aggregator {region}: battery_loss must be >= 0")
        top = max((b.price for g in self.model.generators for b in g.blocks), default=0.0)
        if not self.value_of_lost_load > top:
            out.append("problem: value_of_lost_load must exceed every bid price")
        if self.spill_price < 0:
            out.append("problem: spill_price must be >= 0")
        return out

    def with_losses(self, losses: Mapping[str, float]) -> "DispatchProblem":
        merged = dict(self.battery_loss)
        merged.update(losses)
        return _replace(self, battery_loss=merged)

    def with_model(self, model: NetworkModel) -> "DispatchProblem":
        return _replace(self, model=model)

    def with_pinned(self, pinned: Mapping[str, np.ndarray] | None) -> "DispatchProblem":
        return _replace(self, pinned_flex=pinned)


def _replace(obj, **changes):
    import dataclasses

    return dataclasses.replace(obj, **changes)


def energy_target(agg: AggregatorProfile, horizon: Horizon, loss: float) -> float:
    """Right-hand side of the horizon-coupling row for one aggregator (MWh)."""
    dh = horizon.step_length
    return float(np.sum(agg.responsive_load - agg.pv) * dh + loss)


def check_energy_interval(agg: AggregatorProfile, horizon: Horizon, loss: float) -> None:
    """Interval test: can the flex bounds deliver the required energy at all?"""
    dh = horizon.step_length
    target = energy_target(agg, horizon, loss)
    lo = float(np.sum(agg.flex_min) * dh)
    hi = float(np.sum(agg.flex_max) * dh)
    slack = 1e-9 * max(1.0, abs(target))
    if not lo - slack <= target <= hi + slack:
        raise InfeasibleBalanceError(
            f"aggregator {agg.region}: energy target {target:.3f} MWh outside "
            f"flex range [{lo:.3f}, {hi:.3f}] MWh"
        )


@dataclass(frozen=True)
class Layout:
    """Column/row bookkeeping for the assembled LP."""

    steps: int
    n_blocks: int
    n_aggs: int
    n_regions: int
    n_lines: int
    block_owner: tuple[int, ...]  # generator index of each block
    agg_regions: tuple[str, ...]
    coupled: tuple[str, ...]  # aggregators with a coupling row

    @property
    def off_block(self):
        return 0

    @property
    def off_flex(self):
        return self.steps * self.n_blocks

    @property
    def off_angle(self):
        return self.off_flex + self.steps * self.n_aggs

    @property
    def off_unserved(self):
        return self.off_angle + self.steps * self.n_regions

    @property
    def off_spill(self):
        return self.off_unserved + self.steps * self.n_regions

    @property
    def off_charge(self):
        return self.off_spill + self.steps * self.n_regions

    @property
    def off_discharge(self):
        return self.off_charge + self.steps * len(self.coupled)

    @property
    def n_vars(self):
        return self.off_discharge + self.steps * len(self.coupled)

    @property
    def n_balance_rows(self):
        return self.steps * self.n_regions

    def names(self, model: NetworkModel) -> list[str]:
        blocks = []
        counts: dict[int, int] = {}
        for owner in self.block_owner:
            k = counts.get(owner, 0)
            counts[owner] = k + 1
            blocks.append(f"{model.generators[owner].id}_b{k}")
        regions = model.region_ids
        out = []
        for prefix, items in (
            ("g", blocks),
            ("pf", list(self.agg_regions)),
            ("d", regions),
            ("u", regions),
            ("s", regions),
            ("bc", list(self.coupled)),
            ("bd", list(self.coupled)),
        ):
            out.extend(f"{prefix}_{item}_t{t}" for t in range(self.steps) for item in items)
        return out


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub."""

    c: np.ndarray
    cost: np.ndarray  # unperturbed objective coefficients
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    A_ub: sparse.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    layout: Layout
    row_names_eq: tuple[str, ...]
    row_names_ub: tuple[str, ...]


def _line_matrix(model: NetworkModel) -> np.ndarray:
    """(n_lines, n_regions) map from angles to MW flows."""
    m = np.zeros((len(model.lines), len(model.regions)))
    for k, line in enumerate(model.lines):
        b = line.susceptance * model.base_mva
        m[k, model.region_index(line.from_region)] = b
        m[k, model.region_index(line.to_region)] = -b
    return m


def build(problem: DispatchProblem) -> LinearProgram:
    """Assemble the dispatch LP for ``problem``."""
    bad = problem.violations()
    if bad:
        raise ModelValidationError(f"{len(bad)} model violation(s): {bad[0]}", bad)

    model, hz = problem.model, problem.horizon
    T, dh = hz.steps, hz.step_length
    gens = model.generators
    regions = model.region_ids
    R, L = len(regions), len(model.lines)
    aggs = sorted(model.aggregators, key=lambda a: model.region_index(a.region))
    A = len(aggs)

    owner, price, cap = [], [], []
    for gi, gen in enumerate(gens):
        for block in gen.blocks:
            owner.append(gi)
            price.append(block.price)
            cap.append(block.capacity)
    owner_arr = np.array(owner, dtype=int)
    price_arr = np.array(price, dtype=float)
    cap_arr = np.array(cap, dtype=float)
    NB = len(owner)

    coupled = tuple(a.region for a in aggs if not problem.is_pinned(a.region))
    for agg in aggs:
        if agg.region in coupled:
            check_energy_interval(agg, hz, problem.loss(agg.region))

    lay = Layout(T, NB, A, R, L, tuple(owner), tuple(a.region for a in aggs), coupled)
    n = lay.n_vars
    t_idx = np.arange(T)

    # objective
    cost = np.zeros(n)
    c = np.zeros(n)
    blk = (lay.off_block + t_idx[:, None] * NB + np.arange(NB)[None, :]).ravel()
    cost[blk] = np.tile(price_arr * dh, T)
    c[blk] = cost[blk] + np.tile(np.arange(NB) * BLOCK_TIE_EPS * dh, T)
    flx = (lay.off_flex + t_idx[:, None] * A + np.arange(A)[None, :]).ravel()
    c[flx] = np.repeat(t_idx * FLEX_TIE_EPS * dh, A)
    uns = lay.off_unserved + np.arange(T * R)
    spl = lay.off_spill + np.arange(T * R)
    cost[uns] = c[uns] = problem.value_of_lost_load * dh
    cost[spl] = c[spl] = problem.spill_price * dh
    C = len(coupled)
    c[lay.off_charge : lay.n_vars] = BATTERY_TIE_EPS * dh

    # bounds
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    ub_blocks = np.tile(cap_arr, (T, 1))
    lb_blocks = np.zeros((T, NB))
    for gi, gen in enumerate(gens):
        if gen.renewable:
            (b,) = np.flatnonzero(owner_arr == gi)
            avail = gen.upper_bound(T)
            ub_blocks[:, b] = avail
            lb_blocks[:, b] = avail  # must-take; surplus goes to spill
        elif gen.availability is not None:
            scale = np.asarray(gen.availability[:T], dtype=float)
            ub_blocks[:, owner_arr == gi] *= scale[:, None]
    lb[blk] = lb_blocks.ravel()
    ub[blk] = ub_blocks.ravel()
    for a, agg in enumerate(aggs):
        cols = lay.off_flex + t_idx * A + a
        if problem.is_pinned(agg.region):
            fixed = np.asarray(problem.pinned_flex[agg.region], dtype=float)[:T]
            lb[cols] = ub[cols] = fixed
        else:
            lb[cols] = agg.flex_min[:T]
            ub[cols] = agg.flex_max[:T]
    ang = lay.off_angle + np.arange(T * R)
    lb[ang] = -np.inf
    ref = lay.off_angle + t_idx * R + model.region_index(model.reference_region)
    lb[ref] = ub[ref] = 0.0

    # nodal balance rows: row = t*R + r
    rows, cols, vals = [], [], []
    gen_region = np.array([model.region_index(g.region) for g in gens], dtype=int)
    blk_region = gen_region[owner_arr]
    for t in range(T):
        rows.append(t * R + blk_region)
        cols.append(lay.off_block + t * NB + np.arange(NB))
        vals.append(np.ones(NB))
    agg_region = np.array([model.region_index(a.region) for a in aggs], dtype=int)
    for t in range(T):
        rows.append(t * R + agg_region)
        cols.append(lay.off_flex + t * A + np.arange(A))
        vals.append(-np.ones(A))
    rows.append(np.arange(T * R))
    cols.append(uns)
    vals.append(np.ones(T * R))
    rows.append(np.arange(T * R))
    cols.append(spl)
    vals.append(-np.ones(T * R))
    # minus net outflow: -(M^T M_b) delta, with M the signed incidence
    flow_map = _line_matrix(model)
    incidence = np.sign(flow_map)
    lap = incidence.T @ flow_map  # (R, R)
    li, lj = np.nonzero(lap)
    for t in range(T):
        rows.append(t * R + li)
        cols.append(lay.off_angle + t * R + lj)
        vals.append(-lap[li, lj])
    b_eq = np.zeros(T * R + len(coupled))
    for agg in aggs:
        r = model.region_index(agg.region)
        b_eq[t_idx * R + r] += agg.inflexible_load[:T]

    # coupling rows
    for k, region in enumerate(coupled):
        a = lay.agg_regions.index(region)
        rows.append(np.full(T, T * R + k))
        cols.append(lay.off_flex + t_idx * A + a)
        vals.append(np.full(T, dh))
        agg = aggs[a]
        b_eq[T * R + k] = energy_target(agg, hz, problem.loss(region))
    # battery split rows: P_F - charge + discharge = P_U - P_PV
    b_eq = np.concatenate([b_eq, np.zeros(T * C)])
    for k, region in enumerate(coupled):
        a = lay.agg_regions.index(region)
        agg = aggs[a]
        r0 = T * R + C + t_idx * C + k
        for off, sign in ((lay.off_flex + t_idx * A + a, 1.0), (lay.off_charge + t_idx * C + k, -1.0),
                          (lay.off_discharge + t_idx * C + k, 1.0)):
            rows.append(r0)
            cols.append(off)
            vals.append(np.full(T, sign))
        b_eq[r0] = agg.responsive_load[:T] - agg.pv[:T]
    A_eq = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(T * R + C + T * C, n),
    )

    # inequalities: flow limits and generator minimum output
    urows, ucols, uvals, b_ub, ub_names = [], [], [], [], []
    nrow = 0
    for k, line in enumerate(model.lines):
        nz = np.flatnonzero(flow_map[k])
        for sign, limit, tag in ((1.0, line.flow_max, "max"), (-1.0, -line.flow_min, "min")):
            if not np.isfinite(limit):
                continue
            for t in range(T):
                urows.append(np.full(len(nz), nrow))
                ucols.append(lay.off_angle + t * R + nz)
                uvals.append(sign * flow_map[k, nz])
                b_ub.append(limit)
                ub_names.append(f"flow{tag}_{line.id}_t{t}")
                nrow += 1
    for gi, gen in enumerate(gens):
        if gen.p_min <= 0 or gen.renewable:
            continue
        bl = np.flatnonzero(owner_arr == gi)
        for t in range(T):
            urows.append(np.full(len(bl), nrow))
            ucols.append(lay.off_block + t * NB + bl)
            uvals.append(-np.ones(len(bl)))
            b_ub.append(-gen.p_min)
            ub_names.append(f"pmin_{gen.id}_t{t}")
            nrow += 1
    if nrow:
        A_ub = sparse.csr_matrix(
            (np.concatenate(uvals), (np.concatenate(urows), np.concatenate(ucols))), shape=(nrow, n)
        )
    else:
        A_ub = sparse.csr_matrix((0, n))

    eq_names = tuple(f"bal_{regions[r]}_t{t}" for t in range(T) for r in range(R)) + tuple(
        f"energy_{region}" for region in coupled
    ) + tuple(f"batt_{region}_t{t}" for t in range(T) for region in coupled)
    return LinearProgram(
        c=c,
        cost=cost,
        A_eq=A_eq,
        b_eq=b_eq,
        A_ub=A_ub,
        b_ub=np.array(b_ub, dtype=float),
        lb=lb,
        ub=ub,
        layout=lay,
        row_names_eq=eq_names,
        row_names_ub=tuple(ub_names),
    )


@dataclass(frozen=True, eq=False)
class DispatchSolution:
    """Solved dispatch. Arrays are indexed ``[entity, step]``.

    Entity order follows ``model.generators``, ``model.regions``,
    ``model.lines`` and, for aggregators, ``aggregator_ids``.
    """

    problem: DispatchProblem
    generation: np.ndarray
    block_output: np.ndarray
    flexible_demand: np.ndarray
    aggregator_ids: tuple[str, ...]
    angles: np.ndarray
    line_flows: np.ndarray
    unserved: np.ndarray
    spill: np.ndarray
    nodal_price: np.ndarray
    objective: float
    iterations: int = 0

    @property
    def model(self) -> NetworkModel:
        return self.problem.model

    @property
    def steps(self) -> int:
        return self.problem.horizon.steps

    @property
    def step_length(self) -> float:
        return self.problem.horizon.step_length

    def _agg_row(self, aggregator: str) -> int:
        try:
            return self.aggregator_ids.index(aggregator)
        except ValueError:
            raise KeyError(f"unknown aggregator {aggregator!r}") from None

    def flex(self, aggregator: str) -> np.ndarray:
        return self.flexible_demand[self._agg_row(aggregator)]

    def generation_of(self, gen_id: str) -> np.ndarray:
        ids = [g.id for g in self.model.generators]
        return self.generation[ids.index(gen_id)]

    def regional_demand(self) -> np.ndarray:
        """Nett demand per region and step (inflexible + flexible)."""
        out = np.zeros((len(self.model.regions), self.steps))
        for agg in self.model.aggregators:
            out[self.model.region_index(agg.region)] += nett_demand(self, agg.region)
        return out

    def regional_generation(self) -> np.ndarray:
        out = np.zeros((len(self.model.regions), self.steps))
        for gi, gen in enumerate(self.model.generators):
            out[self.model.region_index(gen.region)] += self.generation[gi]
        return out

    def balance_residual(self) -> np.ndarray:
        """Nodal balance mismatch (MW) with flows recomputed from angles."""
        flows = _line_matrix(self.model) @ self.angles
        outflow = np.zeros_like(self.unserved)
        for k, line in enumerate(self.model.lines):
            outflow[self.model.region_index(line.from_region)] += flows[k]
            outflow[self.model.region_index(line.to_region)] -= flows[k]
        return (
            self.regional_generation() + self.unserved - self.spill - self.regional_demand() - outflow
        )

    def flow_residual(self) -> np.ndarray:
        return self.line_flows - _line_matrix(self.model) @ self.angles

    def gas_turbine_output(self) -> np.ndarray:
        mask = np.array([g.kind == GeneratorKind.GAS_TURBINE for g in self.model.generators])
        if not mask.any():
            return np.zeros(self.steps)
        return self.generation[mask].sum(axis=0)


def solve(problem: DispatchProblem, lp: LinearProgram | None = None) -> DispatchSolution:
    """Solve the dispatch LP and unpack primal values and nodal prices."""
    if lp is None:
        lp = build(problem)
    res = linprog(
        lp.c,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq,
        b_eq=lp.b_eq,
        bounds=np.column_stack([lp.lb, lp.ub]),
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status == 2:
        raise InfeasibleModel(f"dispatch LP infeasible despite slacks: {res.message}")
    if res.status != 0:
        raise NumericalFailure(
            f"dispatch LP failed: {res.message}",
            status=res.status,
            diagnostics={"nit": getattr(res, "nit", None), "message": res.message},
        )
    return _unpack(problem, lp, res)


def _unpack(problem, lp, res) -> DispatchSolution:
    lay = lp.layout
    model = problem.model
    T, NB, A, R = lay.steps, lay.n_blocks, lay.n_aggs, lay.n_regions
    x = res.x
    dh = problem.horizon.step_length

    blocks = x[lay.off_block : lay.off_flex].reshape(T, NB).T
    gen = np.zeros((len(model.generators), T))
    np.add.at(gen, np.array(lay.block_owner, dtype=int), blocks)
    flex = x[lay.off_flex : lay.off_angle].reshape(T, A).T
    angles = x[lay.off_angle : lay.off_unserved].reshape(T, R).T
    unserved = x[lay.off_unserved : lay.off_spill].reshape(T, R).T
    spill = x[lay.off_spill : lay.off_charge].reshape(T, R).T
    flows = _line_matrix(model) @ angles
    duals = np.asarray(res.eqlin.marginals)[: lay.n_balance_rows]
    prices = duals.reshape(T, R).T / dh
    return DispatchSolution(
        problem=problem,
        generation=gen,
        block_output=blocks,
        flexible_demand=flex,
        aggregator_ids=lay.agg_regions,
        angles=angles,
        line_flows=flows,
        unserved=np.clip(unserved, 0.0, None),
        spill=np.clip(spill, 0.0, None),
        nodal_price=prices,
        objective=float(lp.cost @ x),
        iterations=int(getattr(res, "nit", 0) or 0),
    )


def battery_power(solution: DispatchSolution, aggregator: str, step: int | None = None):
    """Aggregated battery power, positive when charging (MW).

    Users draw ``P_F`` from the grid, consume ``P_U`` and generate ``P_PV``;
    the battery takes the rest: ``P_B = P_F - P_U + P_PV``.
    """
    agg = solution.model.aggregator(aggregator)
    series = solution.flex(aggregator) - agg.responsive_load + agg.pv
    return series if step is None else float(series[step])


def nett_demand(solution: DispatchSolution, aggregator: str, step: int | None = None):
    """Inflexible plus flexible demand seen by the grid (MW)."""
    agg = solution.model.aggregator(aggregator)
    series = agg.inflexible_load + solution.flex(aggregator)
    return series if step is None else float(series[step])


def write_mps(lp: LinearProgram, path, model: NetworkModel, name: str = "DISPATCH") -> None:
    """Dump ``lp`` in free-format MPS (objective row ``COST``)."""
    names = lp.layout.names(model)
    A_eq = lp.A_eq.tocsc()
    A_ub = lp.A_ub.tocsc()
    with open(path, "w") as fh:
        fh.write(f"NAME {name}\nROWS\n N COST\n")
        for r in lp.row_names_eq:
            fh.write(f" E {r}\n")
        for r in lp.row_names_ub:
            fh.write(f" L {r}\n")
        fh.write("COLUMNS\n")
        for j, col in enumerate(names):
            if lp.c[j] != 0:
                fh.write(f" {col} COST {lp.c[j]!r}\n")
            for mat, rnames in ((A_eq, lp.row_names_eq), (A_ub, lp.row_names_ub)):
                start, end = mat.indptr[j], mat.indptr[j + 1]
                for i, v in zip(mat.indices[start:end], mat.data[start:end]):
                    fh.write(f" {col} {rnames[i]} {v!r}\n")
        fh.write("RHS\n")
        for r, v in zip(lp.row_names_eq, lp.b_eq):
            if v != 0:
                fh.write(f" RHS {r} {v!r}\n")
        for r, v in zip(lp.row_names_ub, lp.b_ub):
            if v != 0:
                fh.write(f" RHS {r} {v!r}\n")
        fh.write("BOUNDS\n")
        for col, lo, hi in zip(names, lp.lb, lp.ub):
            if lo == hi:
                fh.write(f" FX BND {col} {lo!r}\n")
                continue
            if np.isneginf(lo) and np.isposinf(hi):
                fh.write(f" FR BND {col}\n")
                continue
            if np.isneginf(lo):
                fh.write(f" MI BND {col}\n")
            elif lo != 0:
                fh.write(f" LO BND {col} {lo!r}\n")
            if np.isfinite(hi):
                fh.write(f" UP BND {col} {hi!r}\n")
        fh.write("ENDATA\n")
