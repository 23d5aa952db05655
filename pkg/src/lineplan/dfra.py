"""Dynamic frequency refinement.

Instead of offering every (line, headway) pair to the model at once, the
algorithm starts from one optimistic pair per line: the shortest headway
priced at the vehicle count of the longest one. Each solve of this relaxed
model is a lower bound. When the model promises a headway it did not buy
enough vehicles for, the offending pair is tightened and the headway the
vehicles can actually sustain is added. The first solve whose plan is
operable is optimal.

Every represented pair carries a vehicle bound that never exceeds the true
requirement. Between two consecutive represented headways ``a < b`` of a line
the bound of ``a`` is at most the requirement of the candidate just below
``b``, and the longest represented headway carries the line's minimum fleet.
Any true plan therefore maps onto a represented pair that is no worse, which
is what keeps each solve a valid lower bound.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .cgn import ChangeAndGoNetwork, build_cgn
from .instance import Instance, Line, achievable_headway, next_smaller_headway, vehicles_required
from .milp import (
    DEFAULT_BACKEND,
    FEASIBLE,
    INFEASIBLE,
    LIMIT,
    OPTIMAL,
    LppSolution,
    ModelOptions,
    SolverBackend,
    build_model,
    model_objective,
    plan_breakdown,
    solve,
)
from .paths import COST_TOL, SERVICE, PathSet, Signature, generate_paths, restrict_paths, signature_cost

log = logging.getLogger(__name__)

_VEHICLE_TOL = 1e-6


class RefinementError(RuntimeError):
    """A violated line admits no tightening; the representation is inconsistent."""


class HeadwayRepresentation(Mapping):
    """Per line, the represented headways with their vehicle lower bounds."""

    def __init__(self, bounds: Mapping[str, Mapping[float, float]], iteration: int = 0):
        self._bounds = {l: dict(sorted(hs.items())) for l, hs in bounds.items()}
        self.iteration = iteration

    def __getitem__(self, line: str) -> dict[float, float]:
        return self._bounds[line]

    def __iter__(self) -> Iterator[str]:
        return iter(self._bounds)

    def __len__(self) -> int:
        return len(self._bounds)

    def __repr__(self) -> str:
        return f"HeadwayRepresentation({self._bounds!r}, iteration={self.iteration})"

    def copy(self, iteration: Optional[int] = None) -> "HeadwayRepresentation":
        return HeadwayRepresentation(self._bounds, self.iteration if iteration is None else iteration)

    @property
    def size(self) -> int:
        return sum(len(hs) for hs in self._bounds.values())

    def pairs(self, line: str) -> list[tuple[float, float]]:
        return list(self._bounds[line].items())

    def as_dict(self) -> dict[str, dict[float, float]]:
        return {l: dict(hs) for l, hs in self._bounds.items()}

    def _set(self, line: str, headway: float, bound: float) -> None:
        hs = self._bounds.setdefault(line, {})
        hs[headway] = bound
        self._bounds[line] = dict(sorted(hs.items()))


def initialize(instance: Instance) -> HeadwayRepresentation:
    """One optimistic pair per line: shortest headway, fewest vehicles."""
    return HeadwayRepresentation(
        {l.id: {l.profile.h_min: float(l.profile.v_min)} for l in instance.lines}
    )


class Violation(NamedTuple):
    line: str
    headway: float
    vehicles: float
    required: int


def check_feasibility(solution: LppSolution, instance: Instance) -> list[Violation]:
    """Opened lines whose vehicles cannot run the selected headway."""
    out = []
    for l, h in sorted(solution.opened.items()):
        line = instance.line_by_id[l]
        z = solution.vehicles.get(l, 0.0)
        need = vehicles_required(line, h)
        if z < need - _VEHICLE_TOL:
            out.append(Violation(l, h, z, need))
    return out


def _tighten(rep: HeadwayRepresentation, line: Line, headway: float, vehicles: float) -> None:
    """Cut off running ``line`` at ``headway`` with ``vehicles`` and add the sustainable headway."""
    bounds = rep[line.id]
    sustainable, _ = achievable_headway(line, max(vehicles, 1.0))
    if sustainable <= headway:
        raise RefinementError(
            f"line {line.id!r}: {vehicles} vehicles already run headway {headway}, nothing to tighten"
        )
    below = next_smaller_headway(line, sustainable)
    new_bound = float(vehicles_required(line, below))
    if new_bound <= bounds[headway] + _VEHICLE_TOL:
        raise RefinementError(f"line {line.id!r}: bound at headway {headway} cannot increase")
    bounds[headway] = new_bound

    above = [h for h in bounds if h > sustainable]
    v_min = float(line.profile.v_min)
    insert_bound = v_min
    if above:
        insert_bound = max(v_min, float(vehicles_required(line, next_smaller_headway(line, min(above)))))
    rep._set(line.id, sustainable, max(insert_bound, bounds.get(sustainable, 0.0)))


def similar_lines(instance: Instance, line: str, kappa: int) -> list[str]:
    """Up to ``kappa`` other lines sharing the most edges with ``line`` (ties by id)."""
    if kappa <= 0:
        return []
    mine = set(instance.line_by_id[line].edge_sequence)
    scored = []
    for other in instance.lines:
        if other.id == line:
            continue
        overlap = len(mine & set(other.edge_sequence))
        if overlap > 0:
            scored.append((-overlap, other.id))
    return [l for _, l in sorted(scored)[:kappa]]


def refine(
    representation: HeadwayRepresentation,
    solution: LppSolution,
    instance: Instance,
    kappa: int = 0,
    violations: Optional[Sequence[Violation]] = None,
) -> HeadwayRepresentation:
    """Tighten every violated line, and optionally the same headway on similar lines.

    A similar line is tightened at the violated headway as if the model had
    promised it with exactly its current bound of vehicles.
    """
    if violations is None:
        violations = check_feasibility(solution, instance)
    if not violations:
        raise RefinementError("refine called on an operable solution")
    rep = representation.copy(representation.iteration + 1)
    for v in violations:
        _tighten(rep, instance.line_by_id[v.line], v.headway, v.vehicles)
    violated = {v.line for v in violations}
    for v in violations:
        for other_id in similar_lines(instance, v.line, kappa):
            if other_id in violated or other_id not in rep or v.headway not in rep[other_id]:
                continue
            other = instance.line_by_id[other_id]
            stand_in = rep[other_id][v.headway]
            if stand_in < vehicles_required(other, v.headway) - _VEHICLE_TOL:
                _tighten(rep, other, v.headway, stand_in)
    return rep


# --------------------------------------------------------------------------
# valid inequalities


@dataclass(frozen=True)
class ValidInequalityTarget:
    od: str
    signature: Signature
    line: str
    headway: float  # longest headway of ``line`` keeping the signature acceptable
    vehicles: int  # vehicles that headway needs
    active: bool
    redundant: bool

    @property
    def attached(self) -> bool:
        return self.active and not self.redundant


def default_valid_inequality_headway(instance: Instance) -> float:
    return instance.max_headway / 2.0


def valid_inequality_targets(
    pathset: PathSet,
    instance: Instance,
    headway_threshold: Optional[float] = None,
    cgn: Optional[ChangeAndGoNetwork] = None,
) -> list[ValidInequalityTarget]:
    """Per signature and line, the fleet a passenger using it forces.

    Each line of the signature is scanned with all other lines at their
    shortest headway. Targets whose headway exceeds ``headway_threshold``
    are kept but inactive; targets needing only the minimum fleet are marked
    redundant.
    """
    if pathset.mode != SERVICE:
        return []
    if headway_threshold is None:
        headway_threshold = default_valid_inequality_headway(instance)
    if cgn is None:
        cgn = build_cgn(instance)
    out = []
    for (od, sig) in sorted(pathset.by_signature, key=lambda k: (k[0], str(k[1]))):
        cbar = pathset.threshold[od]
        lines = [instance.line_by_id[l] for l, _, _ in sig]
        for k, line in enumerate(lines):
            best = [l.profile.h_min for l in lines]
            chosen = None
            for h in reversed(line.headways):
                best[k] = h
                if signature_cost(cgn, instance, sig, best) <= cbar + COST_TOL * max(1.0, abs(cbar)):
                    chosen = h
                    break
            if chosen is None:
                continue
            need = vehicles_required(line, chosen)
            out.append(
                ValidInequalityTarget(
                    od, sig, line.id, chosen, need,
                    active=chosen <= headway_threshold,
                    redundant=need == line.profile.v_min,
                )
            )
    return out


# --------------------------------------------------------------------------
# repair


def lift(solution: LppSolution, full: PathSet) -> np.ndarray:
    """Flows of a restricted solution re-indexed onto the full path set."""
    flows = np.zeros(len(full.paths))
    for i, f in enumerate(solution.flows):
        if f > 0:
            flows[full.index_of[solution.pathset.paths[i].key]] += f
    return flows


def repair(
    solution: LppSolution,
    instance: Instance,
    pathset: PathSet,
    options: ModelOptions = ModelOptions(),
) -> LppSolution:
    """Turn any restricted solution into an operable plan on the full path set.

    Every opened line runs at the headway its vehicles sustain. Each path's
    flow moves to the same ride at the new headways when that variant is
    offered, otherwise to the alternative mode. Rides are unchanged, so
    capacities still hold; vehicles and opened lines are unchanged, so the
    budget still holds.
    """
    opened: dict[str, float] = {}
    for l, h in solution.opened.items():
        line = instance.line_by_id[l]
        z = solution.vehicles.get(l, 0.0)
        if z < 1 - _VEHICLE_TOL:
            continue
        true_h, ok = achievable_headway(line, z)
        if ok:
            opened[l] = true_h
    by_type = {k: n for k, n in solution.vehicles_by_type.items() if k[0] in opened}

    flows = np.zeros(len(pathset.paths))
    for i, f in enumerate(solution.flows):
        if f <= 0:
            continue
        p = solution.pathset.paths[i]
        target = None
        if p.alternative:
            target = pathset.alternative[p.od]
        elif all(l in opened for l in p.lines):
            usages = tuple((l, opened[l]) for l in p.lines)
            target = pathset.index_of.get((p.od, p.signature, usages))
        if target is None:
            target = pathset.alternative[p.od]
        flows[target] += f

    breakdown = plan_breakdown(instance, pathset, flows, by_type, opened)
    vehicles: dict[str, float] = {}
    for (l, _), n in by_type.items():
        vehicles[l] = vehicles.get(l, 0.0) + n
    return LppSolution(
        FEASIBLE,
        model_objective(breakdown, options),
        math.nan,
        opened,
        vehicles,
        by_type,
        flows,
        pathset,
        breakdown,
        message="repaired",
    )


# --------------------------------------------------------------------------
# outer loop


@dataclass(frozen=True)
class DfraOptions:
    kappa: int = 0
    # None picks half the longest headway; 0 switches the inequalities off
    valid_inequality_headway: Optional[float] = None
    iteration_limit: Optional[int] = None
    time_limit: Optional[float] = None
    model: ModelOptions = ModelOptions()
    path_mode: str = SERVICE


@dataclass
class IterationRecord:
    iteration: int
    lower_bound: float
    upper_bound: float
    violations: int
    violated_lines: tuple[str, ...]
    represented: int
    paths: int
    wall_time: float
    representation: dict[str, dict[float, float]]
    opened: dict[str, float]
    vehicles: dict[str, float]


@dataclass
class DfraResult:
    solution: Optional[LppSolution]
    proven_optimal: bool
    termination: str
    log: list[IterationRecord] = field(default_factory=list)
    lower_bound: float = -math.inf
    upper_bound: float = math.inf
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.log)

    @property
    def objective(self) -> float:
        return math.nan if self.solution is None else self.solution.objective


def iteration_limit_default(instance: Instance) -> int:
    return sum(len(l.headways) for l in instance.lines)


def run(
    instance: Instance,
    pathset: Optional[PathSet] = None,
    options: DfraOptions = DfraOptions(),
    backend: SolverBackend = DEFAULT_BACKEND,
) -> DfraResult:
    t0 = time.perf_counter()
    cgn = build_cgn(instance)
    if pathset is None:
        pathset = generate_paths(instance, cgn, mode=options.path_mode)
    h_t = options.valid_inequality_headway
    targets = valid_inequality_targets(pathset, instance, h_t, cgn) if h_t is None or h_t > 0 else []
    limit = options.iteration_limit or iteration_limit_default(instance)

    rep = initialize(instance)
    result = DfraResult(None, False, "iteration_limit")
    best_ub = math.inf
    incumbent: Optional[LppSolution] = None
    while True:
        if options.time_limit is not None and time.perf_counter() - t0 > options.time_limit:
            result.termination = "time_limit"
            break
        it_start = time.perf_counter()
        restricted = restrict_paths(pathset, rep)
        model_opts = options.model
        if options.time_limit is not None:
            remaining = max(options.time_limit - (time.perf_counter() - t0), 1e-3)
            model_opts = replace(model_opts, time_limit=remaining)
        model = build_model(instance, rep, restricted, model_opts, targets)
        sol = solve(model, backend)

        if sol.status == INFEASIBLE:
            result.termination = "infeasible"
            break
        if sol.status == LIMIT and sol.breakdown is None:
            result.termination = "time_limit"
            break

        lb = sol.bound
        violations = check_feasibility(sol, instance)
        if violations:
            repaired = repair(sol, instance, pathset, options.model)
        else:
            repaired = _on_full(sol, pathset)
        if repaired.objective < best_ub:
            best_ub = repaired.objective
            incumbent = repaired
        result.lower_bound = max(result.lower_bound, lb)
        result.upper_bound = best_ub
        result.log.append(
            IterationRecord(
                iteration=len(result.log),
                lower_bound=lb,
                upper_bound=repaired.objective,
                violations=len(violations),
                violated_lines=tuple(v.line for v in violations),
                represented=rep.size,
                paths=len(restricted.paths),
                wall_time=time.perf_counter() - it_start,
                representation=rep.as_dict(),
                opened=dict(sol.opened),
                vehicles=dict(sol.vehicles),
            )
        )
        log.info(
            "iteration %d: lb=%.6g ub=%.6g violations=%d represented=%d",
            len(result.log) - 1, lb, repaired.objective, len(violations), rep.size,
        )
        if sol.status == LIMIT:
            result.termination = "time_limit"
            break
        if not violations:
            result.termination = "optimal"
            result.proven_optimal = True
            incumbent = _on_full(sol, pathset)
            result.upper_bound = incumbent.objective
            break
        if len(result.log) >= limit:
            result.termination = "iteration_limit"
            break
        rep = refine(rep, sol, instance, options.kappa, violations)

    result.solution = incumbent
    result.wall_time = time.perf_counter() - t0
    return result


def _on_full(solution: LppSolution, full: PathSet) -> LppSolution:
    flows = lift(solution, full)
    return LppSolution(
        solution.status,
        solution.objective,
        solution.bound,
        dict(solution.opened),
        dict(solution.vehicles),
        dict(solution.vehicles_by_type),
        flows,
        full,
        solution.breakdown,
        solution.wall_time,
        solution.message,
    )


def write_iteration_log(result: DfraResult, path: Path | str) -> None:
    """One row per model solve, for plotting bound trajectories."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=";", lineterminator="\n")
        w.writerow(["iteration", "lower_bound", "upper_bound", "violations", "represented", "paths", "wall_time"])
        for r in result.log:
            w.writerow([r.iteration, repr(r.lower_bound), repr(r.upper_bound), r.violations, r.represented, r.paths, f"{r.wall_time:.6f}"])
