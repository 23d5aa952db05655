"""Line planning MILP over a headway representation and a path set.

The model is assembled into a solver-neutral :class:`LinearProgram`, which a
:class:`SolverBackend` turns into numbers. The bundled backend drives HiGHS
through :func:`scipy.optimize.milp`.

Variables
    ``y[l, h]``   binary, open line ``l`` at represented headway ``h``
    ``x[p]``      share of the OD's demand on path ``p``, in [0, 1]
    ``z[l, v]``   vehicles of type ``v`` on line ``l`` (integer by default)
    ``d[g]``      binary, signature ``g`` used (valid inequalities only)
"""
from __future__ import annotations

import math
import re
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Optional, Protocol, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from .instance import Instance
from .paths import PathSet

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
LIMIT = "limit"

# tags for constraint families
DEMAND = "demand"
CAPACITY = "capacity"
LINKING = "linking"
ONE_HEADWAY = "one_headway"
FLEET = "fleet"
BUDGET = "budget"
SIGNATURE_USE = "signature_use"
SIGNATURE_FLEET = "signature_fleet"

_FLOW_SNAP = 1e-9

Representation = Mapping[str, Mapping[float, float]]


class SolverError(RuntimeError):
    """The MILP engine failed for a reason other than infeasibility or a limit."""


# --------------------------------------------------------------------------
# solver-neutral container


@dataclass
class Row:
    coefs: dict[int, float]
    lo: float
    hi: float
    tag: str
    name: str


@dataclass
class LinearProgram:
    names: list[str] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    integer: list[bool] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lower: float = 0.0, upper: float = math.inf, integer: bool = False, cost: float = 0.0) -> int:
        if not math.isfinite(cost):
            raise ValueError(f"objective coefficient of {name} is not finite")
        self.names.append(name)
        self.lower.append(lower)
        self.upper.append(upper)
        self.integer.append(integer)
        self.cost.append(cost)
        return len(self.names) - 1

    def add_row(self, coefs: Mapping[int, float], lo: float, hi: float, tag: str) -> int:
        self.rows.append(Row(dict(coefs), lo, hi, tag, f"{tag}_{len(self.rows)}"))
        return len(self.rows) - 1

    def rows_tagged(self, tag: str) -> list[Row]:
        return [r for r in self.rows if r.tag == tag]

    def matrix(self) -> sparse.csr_matrix:
        data, ri, ci = [], [], []
        for k, row in enumerate(self.rows):
            for j, a in row.coefs.items():
                ri.append(k)
                ci.append(j)
                data.append(a)
        return sparse.csr_matrix((data, (ri, ci)), shape=(len(self.rows), self.n_vars))

    def to_lp_text(self) -> str:
        """CPLEX LP format, readable by most MILP engines."""

        def term_list(coefs: Mapping[int, float]) -> str:
            parts = []
            for j, a in coefs.items():
                if a == 0:
                    continue
                sign = "-" if a < 0 else "+"
                parts.append(f"{sign} {abs(a)!r} {safe[j]}")
            if not parts:
                return "0 " + safe[0] if safe else "0"
            text = " ".join(parts)
            return text[2:] if text.startswith("+ ") else text

        safe = [_lp_name(n) for n in self.names]
        out = ["\\ line planning model", "Minimize", " obj: " + term_list(dict(enumerate(self.cost))), "Subject To"]
        for row in self.rows:
            lhs = term_list(row.coefs)
            if row.lo == row.hi:
                out.append(f" {row.name}: {lhs} = {row.lo!r}")
                continue
            if math.isfinite(row.lo):
                out.append(f" {row.name}_lo: {lhs} >= {row.lo!r}")
            if math.isfinite(row.hi):
                out.append(f" {row.name}_hi: {lhs} <= {row.hi!r}")
        out.append("Bounds")
        for j, n in enumerate(safe):
            lo, hi = self.lower[j], self.upper[j]
            hi_text = "+inf" if math.isinf(hi) else repr(hi)
            out.append(f" {lo!r} <= {n} <= {hi_text}")
        binaries = [safe[j] for j in range(self.n_vars) if self.integer[j] and self.lower[j] == 0 and self.upper[j] == 1]
        generals = [safe[j] for j in range(self.n_vars) if self.integer[j] and safe[j] not in set(binaries)]
        if binaries:
            out += ["Binaries", " " + " ".join(binaries)]
        if generals:
            out += ["Generals", " " + " ".join(generals)]
        out.append("End")
        return "\n".join(out) + "\n"


def _lp_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.]", "_", name)


# --------------------------------------------------------------------------
# backends


class RawResult(NamedTuple):
    status: str
    values: Optional[np.ndarray]
    objective: float
    bound: float
    message: str


class SolverBackend(Protocol):
    supports_integer: bool
    supports_warm_start: bool

    def solve(self, lp: LinearProgram, gap: float, time_limit: Optional[float]) -> RawResult: ...


class ScipyMilpBackend:
    """HiGHS via scipy. Deterministic for fixed inputs; reentrant across models."""

    supports_integer = True
    supports_warm_start = False

    def solve(self, lp: LinearProgram, gap: float, time_limit: Optional[float]) -> RawResult:
        if lp.n_vars == 0:
            return RawResult(OPTIMAL, np.zeros(0), 0.0, 0.0, "empty model")
        constraints = []
        if lp.rows:
            constraints.append(
                LinearConstraint(lp.matrix(), [r.lo for r in lp.rows], [r.hi for r in lp.rows])
            )
        options: dict = {"mip_rel_gap": gap, "presolve": True}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)
        res = milp(
            c=np.asarray(lp.cost, dtype=float),
            constraints=constraints,
            integrality=np.asarray(lp.integer, dtype=int),
            bounds=Bounds(lp.lower, lp.upper),
            options=options,
        )
        bound = getattr(res, "mip_dual_bound", None)
        if res.status == 0:
            fun = float(res.fun)
            return RawResult(OPTIMAL, np.asarray(res.x), fun, fun if bound is None else float(bound), res.message)
        if res.status == 2:
            return RawResult(INFEASIBLE, None, math.nan, math.inf, res.message)
        if res.status == 1:
            x = None if res.x is None else np.asarray(res.x)
            fun = math.nan if res.fun is None else float(res.fun)
            return RawResult(LIMIT, x, fun, -math.inf if bound is None else float(bound), res.message)
        raise SolverError(f"MILP engine failed: {res.message}")


DEFAULT_BACKEND = ScipyMilpBackend()


# --------------------------------------------------------------------------
# the line planning model


@dataclass(frozen=True)
class ModelOptions:
    integer_vehicles: bool = True
    gap: float = 1e-9
    time_limit: Optional[float] = None
    # keep only the passenger term in the objective (budget still applies)
    passenger_only: bool = False
    budget: Optional[float] = None


@dataclass
class LppModel:
    instance: Instance
    pathset: PathSet
    representation: dict[str, dict[float, float]]
    options: ModelOptions
    lp: LinearProgram
    y: dict[tuple[str, float], int]
    x: dict[int, int]
    z: dict[tuple[str, str], int]
    delta: dict[tuple[str, tuple], int]

    def write_lp(self, path: Path | str) -> None:
        Path(path).write_text(self.lp.to_lp_text(), encoding="utf-8")

    def vehicle_vars(self, line: str) -> list[tuple[int, float]]:
        """(variable index, capacity) of every vehicle type on ``line``."""
        caps = {v.id: v.capacity for v in self.instance.fleet}
        return [(j, caps[v]) for (l, v), j in self.z.items() if l == line]


def true_representation(instance: Instance) -> dict[str, dict[float, float]]:
    """Every operative headway paired with its exact vehicle requirement."""
    return {l.id: {h: float(v) for h, v in l.profile.entries} for l in instance.lines}


def build_model(
    instance: Instance,
    representation: Representation,
    pathset: PathSet,
    options: ModelOptions = ModelOptions(),
    valid_inequalities: Sequence = (),
) -> LppModel:
    """Assemble the MILP. ``pathset`` must already be restricted to ``representation``."""
    costs = instance.costs
    fleet = instance.fleet
    lp = LinearProgram()
    rep = {l: dict(sorted(hs.items())) for l, hs in representation.items() if hs}
    demand = {d.id: d.demand for d in instance.od}
    budget = costs.budget if options.budget is None else options.budget
    line_cost = 0.0 if options.passenger_only else costs.line_fixed_cost

    y: dict[tuple[str, float], int] = {}
    z: dict[tuple[str, str], int] = {}
    for line in instance.lines:
        if line.id not in rep:
            continue
        for h in rep[line.id]:
            y[line.id, h] = lp.add_var(f"y[{line.id},{h:g}]", 0, 1, True, line_cost)
        for v in fleet:
            vcost = 0.0 if options.passenger_only else v.cost
            z[line.id, v.id] = lp.add_var(f"z[{line.id},{v.id}]", 0, math.inf, options.integer_vehicles, vcost)

    x: dict[int, int] = {}
    for i, p in enumerate(pathset.paths):
        if not pathset.in_model(i):
            continue
        if any(u not in y for u in p.usages):
            raise ValueError(f"path {p.signature_text} of OD {p.od} uses an unrepresented headway")
        w = demand[p.od]
        coef = costs.lam * p.cost * w
        if not p.alternative and not options.passenger_only:
            coef -= costs.fare * w
        x[i] = lp.add_var(f"x[{i}]", 0, 1, False, coef)

    by_od: dict[str, list[int]] = defaultdict(list)
    for i in x:
        by_od[pathset.paths[i].od].append(i)
    for d in pathset.od_ids:
        if not by_od[d]:
            raise ValueError(f"OD {d} has no path in the model")
        lp.add_row({x[i]: 1.0 for i in by_od[d]}, 1.0, 1.0, DEMAND)

    caps = {v.id: v.capacity for v in fleet}
    for arc, users in sorted(pathset.through_arc.items()):
        users = [i for i in users if i in x]
        if not users:
            continue
        line = pathset.ivt_lines[arc]
        coefs: dict[int, float] = defaultdict(float)
        for i in users:
            coefs[x[i]] += demand[pathset.paths[i].od]
        for v in fleet:
            coefs[z[line, v.id]] -= caps[v.id]
        lp.add_row(coefs, -math.inf, 0.0, CAPACITY)

    for (d, l, h), users in sorted(pathset.using.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        users = [i for i in users if i in x]
        if users:
            coefs = {x[i]: 1.0 for i in users}
            coefs[y[l, h]] = -1.0
            lp.add_row(coefs, -math.inf, 0.0, LINKING)

    for l, hs in rep.items():
        if l not in instance.line_by_id:
            raise ValueError(f"representation names unknown line {l!r}")
        lp.add_row({y[l, h]: 1.0 for h in hs}, -math.inf, 1.0, ONE_HEADWAY)
        for h, phi in hs.items():
            coefs = {z[l, v.id]: -1.0 for v in fleet}
            coefs[y[l, h]] = float(phi)
            lp.add_row(coefs, -math.inf, 0.0, FLEET)

    if math.isfinite(budget):
        coefs = {}
        for (l, vid), j in z.items():
            coefs[j] = next(v.cost for v in fleet if v.id == vid)
        for j in y.values():
            coefs[j] = costs.line_fixed_cost
        lp.add_row(coefs, -math.inf, budget, BUDGET)

    delta: dict[tuple[str, tuple], int] = {}
    for target in valid_inequalities:
        if not target.attached:
            continue
        key = (target.od, target.signature)
        variants = [i for i in pathset.by_signature.get(key, ()) if i in x]
        if not variants:
            continue
        if key not in delta:
            delta[key] = lp.add_var(f"d[{target.od},{len(delta)}]", 0, 1, True, 0.0)
            coefs = {x[i]: 1.0 for i in variants}
            coefs[delta[key]] = -1.0
            lp.add_row(coefs, -math.inf, 0.0, SIGNATURE_USE)
        if target.line not in rep:
            continue
        coefs = {z[target.line, v.id]: -1.0 for v in fleet}
        coefs[delta[key]] = float(target.vehicles)
        lp.add_row(coefs, -math.inf, 0.0, SIGNATURE_FLEET)

    return LppModel(instance, pathset, {l: dict(hs) for l, hs in rep.items()}, options, lp, y, x, z, delta)


# --------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class ObjectiveBreakdown:
    passenger: float  # lambda-scaled
    vehicles: float
    lines: float
    revenue: float  # enters the objective with a minus sign
    passenger_raw: float  # lambda = 1

    @property
    def total(self) -> float:
        return self.passenger + self.vehicles + self.lines - self.revenue

    def as_dict(self) -> dict[str, float]:
        return {
            "passenger": self.passenger,
            "vehicles": self.vehicles,
            "lines": self.lines,
            "revenue": self.revenue,
            "passenger_normalized": self.passenger_raw,
            "total": self.total,
        }


@dataclass
class LppSolution:
    status: str
    objective: float
    bound: float
    opened: dict[str, float]
    vehicles: dict[str, float]
    vehicles_by_type: dict[tuple[str, str], float]
    flows: np.ndarray
    pathset: PathSet
    breakdown: Optional[ObjectiveBreakdown]
    wall_time: float = 0.0
    message: str = ""

    @property
    def has_values(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE) or (self.status == LIMIT and self.breakdown is not None)


def plan_breakdown(
    instance: Instance,
    pathset: PathSet,
    flows: np.ndarray,
    vehicles_by_type: Mapping[tuple[str, str], float],
    opened: Mapping[str, float],
) -> ObjectiveBreakdown:
    """Objective terms of a plan, independent of how it was obtained."""
    costs = instance.costs
    demand = {d.id: d.demand for d in instance.od}
    raw = 0.0
    fares = 0.0
    for i, p in enumerate(pathset.paths):
        f = flows[i]
        if f == 0:
            continue
        w = demand[p.od] * f
        raw += p.cost * w
        if not p.alternative:
            fares += costs.fare * w
    vcost = {v.id: v.cost for v in instance.fleet}
    vehicles = sum(vcost[v] * n for (_, v), n in vehicles_by_type.items())
    return ObjectiveBreakdown(
        passenger=float(costs.lam * raw),
        vehicles=float(vehicles),
        lines=float(costs.line_fixed_cost * len(opened)),
        revenue=float(fares),
        passenger_raw=float(raw),
    )


def model_objective(breakdown: ObjectiveBreakdown, options: ModelOptions) -> float:
    """Objective value the model assigns to a plan with this breakdown."""
    return breakdown.passenger if options.passenger_only else breakdown.total


def objective_components(solution: LppSolution) -> ObjectiveBreakdown:
    if solution.breakdown is None:
        raise ValueError(f"solution with status {solution.status!r} has no values")
    return solution.breakdown


def _cheapest_operation(model: LppModel, first: RawResult, backend: SolverBackend) -> RawResult:
    """Among passenger-optimal plans, pick one with the lowest operating cost.

    Without this second stage vehicles are free and their count arbitrary.
    """
    lp = model.lp
    fleet_cost = {v.id: v.cost for v in model.instance.fleet}
    second = LinearProgram(list(lp.names), list(lp.lower), list(lp.upper), list(lp.integer), [0.0] * lp.n_vars, list(lp.rows))
    for (_, vid), j in model.z.items():
        second.cost[j] = fleet_cost[vid]
    for j in model.y.values():
        second.cost[j] = model.instance.costs.line_fixed_cost
    # HiGHS needs some room beyond its own feasibility tolerance here
    cap = first.objective + 1e-7 * max(1.0, abs(first.objective))
    second.add_row({j: c for j, c in enumerate(lp.cost) if c != 0}, -math.inf, cap, "passenger_optimum")
    raw = backend.solve(second, model.options.gap, model.options.time_limit)
    if raw.status != OPTIMAL:
        return first
    # report the passenger objective, as the model defines it
    value = float(np.dot(lp.cost, raw.values))
    return RawResult(OPTIMAL, raw.values, value, first.bound, first.message)


def solve(model: LppModel, backend: SolverBackend = DEFAULT_BACKEND) -> LppSolution:
    t0 = time.perf_counter()
    opts = model.options
    raw = backend.solve(model.lp, opts.gap, opts.time_limit)
    if opts.passenger_only and raw.status == OPTIMAL:
        raw = _cheapest_operation(model, raw, backend)
    wall = time.perf_counter() - t0
    ps = model.pathset
    n = len(ps.paths)
    if raw.values is None:
        return LppSolution(raw.status, math.nan, raw.bound, {}, {}, {}, np.zeros(n), ps, None, wall, raw.message)

    v = raw.values
    opened: dict[str, float] = {}
    for (l, h), j in model.y.items():
        if v[j] > 0.5:
            opened[l] = h
    by_type: dict[tuple[str, str], float] = {}
    for key, j in model.z.items():
        val = float(v[j])
        val = float(round(val)) if opts.integer_vehicles else max(val, 0.0)
        if val > 0:
            by_type[key] = val
    vehicles: dict[str, float] = defaultdict(float)
    for (l, _), n_v in by_type.items():
        vehicles[l] += n_v
    flows = np.zeros(n)
    for i, j in model.x.items():
        f = min(max(float(v[j]), 0.0), 1.0)
        # drop solver residue so reported plans are clean
        if f < _FLOW_SNAP:
            f = 0.0
        elif f > 1.0 - _FLOW_SNAP:
            f = 1.0
        flows[i] = f
    breakdown = plan_breakdown(model.instance, ps, flows, by_type, opened)
    objective = model_objective(breakdown, opts)
    return LppSolution(
        raw.status, objective, float(raw.bound), opened, dict(vehicles), by_type, flows, ps, breakdown, wall, raw.message
    )


def solve_direct(
    instance: Instance,
    pathset: PathSet,
    options: ModelOptions = ModelOptions(),
    valid_inequalities: Sequence = (),
    backend: SolverBackend = DEFAULT_BACKEND,
) -> LppSolution:
    """The full model: every operative headway at its exact vehicle requirement."""
    model = build_model(instance, true_representation(instance), pathset, options, valid_inequalities)
    return solve(model, backend)
