"""Service metrics, passenger re-assignment and the fixed-demand benchmark."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from scipy.special import softmax

from .instance import Instance, InstanceError, vehicles_required
from .milp import (
    DEFAULT_BACKEND,
    LppSolution,
    ModelOptions,
    ObjectiveBreakdown,
    SolverBackend,
    plan_breakdown,
    solve_direct,
)
from .paths import RIGID, SERVICE, PathSet, generate_paths

DEFAULT_THETA = -0.2


@dataclass(frozen=True)
class LineConcept:
    """Opened lines with their headway and vehicles per vehicle type."""

    headways: Mapping[str, float]
    vehicles_by_type: Mapping[tuple[str, str], float] = field(default_factory=dict)

    @property
    def vehicles(self) -> dict[str, float]:
        out: dict[str, float] = {l: 0.0 for l in self.headways}
        for (l, _), n in self.vehicles_by_type.items():
            out[l] = out.get(l, 0.0) + n
        return out

    @classmethod
    def from_solution(cls, solution: LppSolution) -> "LineConcept":
        return cls(dict(solution.opened), dict(solution.vehicles_by_type))

    @classmethod
    def with_required_vehicles(cls, instance: Instance, headways: Mapping[str, float]) -> "LineConcept":
        """Concept running each line with exactly the vehicles its headway needs (first vehicle type)."""
        vtype = instance.fleet[0].id
        return cls(
            dict(headways),
            {(l, vtype): float(vehicles_required(instance.line_by_id[l], h)) for l, h in headways.items()},
        )

    def validate(self, instance: Instance) -> None:
        fleet = {v.id for v in instance.fleet}
        for l, h in self.headways.items():
            line = instance.line_by_id.get(l)
            if line is None:
                raise InstanceError(f"concept opens unknown line {l!r}")
            if h not in line.headways:
                raise InstanceError(f"headway {h} is not an operative headway of line {l!r}")
        for (l, v) in self.vehicles_by_type:
            if l not in self.headways:
                raise InstanceError(f"vehicles assigned to closed line {l!r}")
            if v not in fleet:
                raise InstanceError(f"unknown vehicle type {v!r}")

    def operable(self, instance: Instance) -> bool:
        z = self.vehicles
        return all(z[l] >= vehicles_required(instance.line_by_id[l], h) - 1e-6 for l, h in self.headways.items())


@dataclass
class Assignment:
    rule: str
    pathset: PathSet
    flows: np.ndarray


def available_paths(concept: LineConcept, pathset: PathSet, od: str) -> list[int]:
    """Paths of ``od`` riding only operated (line, headway) pairs; the alternative path last."""
    out = []
    for i in pathset.by_od[od]:
        p = pathset.paths[i]
        if p.alternative:
            continue
        if all(concept.headways.get(l) == h for l, h in p.usages):
            out.append(i)
    out.append(pathset.alternative[od])
    return out


def assign_logit(concept: LineConcept, pathset: PathSet, theta: float = DEFAULT_THETA) -> Assignment:
    """Multinomial logit over each OD's available paths; capacity is ignored."""
    flows = np.zeros(len(pathset.paths))
    for od in pathset.od_ids:
        idx = available_paths(concept, pathset, od)
        costs = np.array([pathset.paths[i].cost for i in idx])
        flows[idx] = softmax(theta * costs)
    return Assignment("logit", pathset, flows)


def assign_shortest(concept: LineConcept, pathset: PathSet) -> Assignment:
    """All-or-nothing on the cheapest available path.

    Ties go to a network path over the alternative mode, then to the smallest
    signature.
    """
    flows = np.zeros(len(pathset.paths))
    for od in pathset.od_ids:
        idx = available_paths(concept, pathset, od)
        best = min(
            idx,
            key=lambda i: (
                pathset.paths[i].cost,
                pathset.paths[i].alternative,
                pathset.paths[i].signature_text,
                pathset.paths[i].usages,
            ),
        )
        flows[best] = 1.0
    return Assignment("shortest", pathset, flows)


def model_assignment(solution: LppSolution) -> Assignment:
    return Assignment("model", solution.pathset, np.asarray(solution.flows, dtype=float))


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ArcLoad:
    line: str
    from_stop: str
    to_stop: str
    travel_time: float
    flow: float
    capacity: float

    @property
    def utilization(self) -> float:
        if self.capacity <= 0:
            return math.inf if self.flow > 0 else 0.0
        return self.flow / self.capacity


@dataclass
class MetricsReport:
    rule: str
    total_demand: float
    demand_captured: float
    average_cost: float
    passenger_cost: float  # at lambda = 1
    passenger_minutes: float  # passenger cost divided by the minute divisor
    breakdown: ObjectiveBreakdown
    objective: float
    loads: list[ArcLoad]
    arc_utilization: float
    weighted_utilization: float
    share_arcs_at_capacity: float
    over_capacity_arcs: int
    share_ods_split: float
    extra_cost: list[tuple[str, str, float, float]]  # od, path, extra cost, passengers
    assignment: list[tuple[str, str, str, float, float]]  # od, signature, headways, share, cost

    @property
    def demand_lost(self) -> float:
        return self.total_demand - self.demand_captured

    @property
    def demand_captured_pct(self) -> float:
        return 100.0 * self.demand_captured / self.total_demand if self.total_demand > 0 else 0.0

    @property
    def mean_extra_cost(self) -> float:
        w = sum(r[3] for r in self.extra_cost)
        return sum(r[2] * r[3] for r in self.extra_cost) / w if w > 0 else 0.0

    def summary(self) -> dict:
        return {
            "rule": self.rule,
            "total_demand": self.total_demand,
            "demand_captured": self.demand_captured,
            "demand_captured_pct": self.demand_captured_pct,
            "demand_lost": self.demand_lost,
            "average_cost": self.average_cost,
            "passenger_cost": self.passenger_cost,
            "passenger_minutes": self.passenger_minutes,
            "objective": self.objective,
            "breakdown": self.breakdown.as_dict(),
            "arc_utilization": self.arc_utilization,
            "weighted_utilization": self.weighted_utilization,
            "share_arcs_at_capacity": self.share_arcs_at_capacity,
            "over_capacity_arcs": self.over_capacity_arcs,
            "share_ods_split": self.share_ods_split,
            "mean_extra_cost": self.mean_extra_cost,
        }

    def write(self, directory: Path | str, prefix: str = "") -> None:
        """summary JSON plus flat loads and assignment tables."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{prefix}metrics.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with open(d / f"{prefix}loads.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=";", lineterminator="\n")
            w.writerow(["line", "from", "to", "travel_time", "flow", "capacity", "utilization"])
            for a in self.loads:
                w.writerow([a.line, a.from_stop, a.to_stop, repr(a.travel_time), repr(a.flow), repr(a.capacity), repr(a.utilization)])
        with open(d / f"{prefix}assignment.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=";", lineterminator="\n")
            w.writerow(["od", "signature", "headways", "share", "cost"])
            for row in self.assignment:
                w.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4])])


def metrics(
    concept: LineConcept,
    assignment: Assignment,
    instance: Instance,
    minute_divisor: Optional[float] = None,
) -> MetricsReport:
    """Service metrics of a concept under an assignment.

    ``minute_divisor`` converts generalized cost to minutes for reporting;
    by default the in-vehicle rate per minute. Utilization weighted by
    passenger-minutes averages each arc's utilization with weight flow times
    travel time. Loads above capacity are reported, never clamped.
    """
    ps = assignment.pathset
    flows = assignment.flows
    demand = {d.id: d.demand for d in instance.od}
    total = instance.total_demand
    if minute_divisor is None:
        minute_divisor = instance.costs.ivt_rate / 60.0 or 1.0

    captured = 0.0
    raw = 0.0
    served_cost = 0.0
    rows = []
    for i, p in enumerate(ps.paths):
        f = float(flows[i])
        if f <= 0:
            continue
        w = demand[p.od] * f
        raw += p.cost * w
        if not p.alternative:
            captured += w
            served_cost += p.cost * w
        rows.append((p.od, p.signature_text, "|".join(f"{h:g}" for _, h in p.usages), f, p.cost))

    caps = {v.id: v.capacity for v in instance.fleet}
    capacity: dict[str, float] = {l: 0.0 for l in concept.headways}
    for (l, v), n in concept.vehicles_by_type.items():
        capacity[l] += caps[v] * n
    arc_flow: dict[int, float] = {}
    for arc, users in ps.through_arc.items():
        arc_flow[arc] = sum(demand[ps.paths[i].od] * float(flows[i]) for i in users)
    loads = []
    for line in instance.lines:
        if line.id not in concept.headways:
            continue
        stops = line.stop_sequence
        edges = instance.network.edge_by_id
        for k, eid in enumerate(line.edge_sequence):
            tt = edges[eid].travel_time
            for u, v in ((stops[k], stops[k + 1]), (stops[k + 1], stops[k])):
                arc = ps.ivt_arc_ids.get((line.id, u, v))
                loads.append(ArcLoad(line.id, u, v, tt, arc_flow.get(arc, 0.0), capacity[line.id]))

    utils = [a.utilization for a in loads]
    pm = sum(a.flow * a.travel_time for a in loads)
    weighted = sum(a.utilization * a.flow * a.travel_time for a in loads) / pm if pm > 0 else 0.0
    at_cap = sum(1 for a in loads if a.flow > 0 and a.flow >= a.capacity - 1e-6)
    over = sum(1 for a in loads if a.flow > a.capacity + 1e-6)

    split = 0
    positive = 0
    extra = []
    for od in ps.od_ids:
        if demand[od] <= 0:
            continue
        positive += 1
        used = [i for i in ps.by_od[od] if flows[i] > 1e-9]
        if len(used) > 1:
            split += 1
        avail = [i for i in available_paths(concept, ps, od) if not ps.paths[i].alternative]
        if not avail:
            continue
        cheapest = min(ps.paths[i].cost for i in avail)
        for i in used:
            if not ps.paths[i].alternative:
                extra.append((od, ps.paths[i].signature_text, ps.paths[i].cost - cheapest, demand[od] * float(flows[i])))

    breakdown = plan_breakdown(instance, ps, flows, concept.vehicles_by_type, concept.headways)
    return MetricsReport(
        rule=assignment.rule,
        total_demand=total,
        demand_captured=captured,
        average_cost=served_cost / captured if captured > 0 else 0.0,
        passenger_cost=raw,
        passenger_minutes=raw / minute_divisor,
        breakdown=breakdown,
        objective=breakdown.total,
        loads=loads,
        arc_utilization=float(np.mean(utils)) if utils else 0.0,
        weighted_utilization=weighted,
        share_arcs_at_capacity=at_cap / len(loads) if loads else 0.0,
        over_capacity_arcs=over,
        share_ods_split=split / positive if positive else 0.0,
        extra_cost=extra,
        assignment=rows,
    )


# --------------------------------------------------------------------------
# fixed-demand benchmark


@dataclass
class BenchmarkVariant:
    name: str
    solution: LppSolution
    concept: LineConcept
    report: MetricsReport


@dataclass
class BenchmarkResult:
    budget: float
    variants: dict[str, BenchmarkVariant]

    def table(self) -> list[dict]:
        out = []
        for name, v in self.variants.items():
            s = v.report.summary()
            out.append(
                {
                    "variant": name,
                    "objective": v.report.objective,
                    "demand_captured_pct": s["demand_captured_pct"],
                    "passenger_cost": s["passenger_cost"],
                    "average_cost": s["average_cost"],
                    "operating_cost": v.report.breakdown.vehicles + v.report.breakdown.lines,
                    "lines": len(v.concept.headways),
                    "vehicles": sum(v.concept.vehicles.values()),
                }
            )
        return out

    def write(self, directory: Path | str) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        rows = self.table()
        with open(d / "benchmark.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), delimiter=";", lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(x) if isinstance(x, float) else x) for k, x in r.items()})
        for name, v in self.variants.items():
            v.report.write(d, prefix=f"{name}_")


def post_process_rigid(solution: LppSolution, service: PathSet, instance: Instance) -> LppSolution:
    """Re-evaluate a fixed-demand plan under service thresholds.

    Flow on a path that passengers would accept stays; everything else is
    lost to the alternative mode. The plan itself is unchanged.
    """
    flows = np.zeros(len(service.paths))
    for i, f in enumerate(solution.flows):
        if f <= 0:
            continue
        p = solution.pathset.paths[i]
        j = None
        if not p.alternative and p.cost <= service.threshold[p.od] * (1 + 1e-9) + 1e-9:
            j = service.index_of.get(p.key)
        flows[service.alternative[p.od] if j is None else j] += f
    breakdown = plan_breakdown(instance, service, flows, solution.vehicles_by_type, solution.opened)
    return replace(solution, pathset=service, flows=flows, breakdown=breakdown, objective=breakdown.total, message="post-processed")


def rigid_benchmark(
    instance: Instance,
    backend: SolverBackend = DEFAULT_BACKEND,
    service: Optional[PathSet] = None,
    rigid: Optional[PathSet] = None,
) -> BenchmarkResult:
    """Fixed-demand plan versus service-dependent plans at the same operating budget."""
    if rigid is None:
        rigid = generate_paths(instance, mode=RIGID)
    if service is None:
        service = generate_paths(instance, mode=SERVICE)
    unbudgeted = instance.with_costs(budget=math.inf)
    r = solve_direct(unbudgeted, rigid, backend=backend)
    if r.breakdown is None:
        raise RuntimeError(f"fixed-demand model ended with status {r.status}")
    budget = r.breakdown.vehicles + r.breakdown.lines
    # a hair of slack so the fixed-demand plan stays within its own budget numerically
    budget_opts = ModelOptions(budget=budget * (1 + 1e-12) + 1e-9)
    rt = post_process_rigid(r, service, instance)
    t = solve_direct(instance, service, budget_opts, backend=backend)
    tp = solve_direct(instance, service, replace(budget_opts, passenger_only=True), backend=backend)

    variants = {}
    for name, sol in (("R", r), ("R,T", rt), ("T", t), ("T,P", tp)):
        if sol.breakdown is None:
            raise RuntimeError(f"benchmark variant {name} ended with status {sol.status}")
        concept = LineConcept.from_solution(sol)
        variants[name] = BenchmarkVariant(name, sol, concept, metrics(concept, model_assignment(sol), instance))
    return BenchmarkResult(budget, variants)
