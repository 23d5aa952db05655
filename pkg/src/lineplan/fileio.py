"""Instance directories and solution files.

An instance directory holds four semicolon-separated tables with a header
row and a flat JSON config::

    stops.csv   id;name;x;y
    edges.csv   id;from;to;travel_time_min
    od.csv      origin;destination;passengers
    pool.csv    line_id;edge_id;position
    config.json cost parameters, lambda, budget, headways, turnaround, thresholds

Writing an instance that was just read reproduces the files byte for byte
as long as they were written by :func:`save_instance` in the first place.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from pathlib import Path
from typing import Any, Optional

from .evaluate import LineConcept
from .instance import (
    DEFAULT_HEADWAYS,
    CostParameters,
    Edge,
    Instance,
    InstanceError,
    ODPair,
    PublicTransportNetwork,
    Stop,
    ThresholdRule,
    VehicleType,
    make_line,
    vehicles_required,
)
from .milp import LppSolution

DELIMITER = ";"

_COST_KEYS = (
    "ivt_rate",
    "perceived_wait_rate",
    "hidden_wait_rate",
    "perceived_wait_cap",
    "transfer_wait_rate",
    "transfer_penalty",
    "vehicle_cost",
    "line_fixed_cost",
    "vehicle_capacity",
    "fare",
)
_KNOWN_KEYS = set(_COST_KEYS) | {
    "lambda",
    "budget",
    "headways",
    "line_headways",
    "turnaround_min",
    "line_turnaround",
    "threshold_fixed",
    "threshold_cap_factor",
    "threshold_base_factor",
    "rigid_tolerance_min",
    "vehicle_types",
}


class InstanceFileError(InstanceError):
    """Malformed or inconsistent instance file, with file and line context."""


def _num(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _jsonable(x: float) -> Any:
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 1e15 else x


def _read_table(path: Path, columns: tuple[str, ...]) -> list[tuple[int, dict[str, str]]]:
    if not path.is_file():
        raise InstanceFileError(f"{path}: missing file")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh, delimiter=DELIMITER)
            header = reader.fieldnames or []
            missing = [c for c in columns if c not in header]
            if missing:
                raise InstanceFileError(f"{path}:1: missing column(s) {missing}")
            rows = []
            for row in reader:
                if all(not (v or "").strip() for v in row.values()):
                    continue
                if None in row or any(row[c] is None for c in columns):
                    raise InstanceFileError(f"{path}:{reader.line_num}: wrong number of fields")
                rows.append((reader.line_num, {k: row[k].strip() for k in columns}))
            return rows
    except UnicodeDecodeError as exc:
        raise InstanceFileError(f"{path}: not UTF-8 ({exc})") from None


def _float(path: Path, line: int, field: str, text: str, optional: bool = False) -> Optional[float]:
    if optional and text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise InstanceFileError(f"{path}:{line}: field {field!r} is not a number: {text!r}") from None


def load_instance(path: Path | str) -> Instance:
    """Read and validate an instance directory; nothing is returned on any error."""
    d = Path(path)
    if not d.is_dir():
        raise InstanceFileError(f"{d}: not a directory")
    cfg_path = d / "config.json"
    if not cfg_path.is_file():
        raise InstanceFileError(f"{cfg_path}: missing file")
    try:
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InstanceFileError(f"{cfg_path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InstanceFileError(f"{cfg_path}: expected a flat object")
    unknown = sorted(set(cfg) - _KNOWN_KEYS)
    if unknown:
        raise InstanceFileError(f"{cfg_path}: unknown key(s) {unknown}")

    p = d / "stops.csv"
    stops = []
    for n, row in _read_table(p, ("id", "name", "x", "y")):
        stops.append(Stop(row["id"], row["name"], _float(p, n, "x", row["x"], True), _float(p, n, "y", row["y"], True)))

    p = d / "edges.csv"
    edges = []
    for n, row in _read_table(p, ("id", "from", "to", "travel_time_min")):
        edges.append(Edge(row["id"], row["from"], row["to"], _float(p, n, "travel_time_min", row["travel_time_min"])))
    try:
        network = PublicTransportNetwork(tuple(stops), tuple(edges))
    except InstanceError as exc:
        raise InstanceFileError(f"{d}: {exc}") from None

    p = d / "od.csv"
    od = []
    for n, row in _read_table(p, ("origin", "destination", "passengers")):
        o, t = row["origin"], row["destination"]
        for s in (o, t):
            if s not in network.stop_ids:
                raise InstanceFileError(f"{p}:{n}: unknown stop {s!r}")
        try:
            od.append(ODPair(f"{o}>{t}", o, t, _float(p, n, "passengers", row["passengers"])))
        except InstanceError as exc:
            raise InstanceFileError(f"{p}:{n}: {exc}") from None
    if not od:
        raise InstanceFileError(f"{p}: no OD pairs")

    headways = cfg.get("headways", list(DEFAULT_HEADWAYS))
    line_headways = cfg.get("line_headways", {})
    turnaround = float(cfg.get("turnaround_min", 0.0))
    line_turnaround = cfg.get("line_turnaround", {})

    p = d / "pool.csv"
    pool: dict[str, list[tuple[float, str, int]]] = {}
    for n, row in _read_table(p, ("line_id", "edge_id", "position")):
        if row["edge_id"] not in network.edge_by_id:
            raise InstanceFileError(f"{p}:{n}: unknown edge {row['edge_id']!r}")
        pos = _float(p, n, "position", row["position"])
        pool.setdefault(row["line_id"], []).append((pos, row["edge_id"], n))
    if not pool:
        raise InstanceFileError(f"{p}: no lines in the pool")
    lines = []
    for lid, entries in pool.items():
        entries.sort()
        positions = [e[0] for e in entries]
        if len(set(positions)) != len(positions):
            raise InstanceFileError(f"{p}:{entries[0][2]}: line {lid!r} repeats a position")
        try:
            lines.append(
                make_line(
                    network,
                    lid,
                    [e[1] for e in entries],
                    headways=line_headways.get(lid, headways),
                    turnaround=float(line_turnaround.get(lid, turnaround)),
                )
            )
        except InstanceError as exc:
            raise InstanceFileError(f"{p}:{entries[0][2]}: {exc}") from None
    unknown_lines = sorted((set(line_headways) | set(line_turnaround)) - set(pool))
    if unknown_lines:
        raise InstanceFileError(f"{cfg_path}: per-line settings for unknown line(s) {unknown_lines}")

    try:
        cost_kwargs = {k: float(cfg[k]) for k in _COST_KEYS if k in cfg}
        budget = cfg.get("budget")
        costs = CostParameters(
            **cost_kwargs,
            lam=float(cfg.get("lambda", 1.0)),
            budget=math.inf if budget is None else float(budget),
        )
        defaults = ThresholdRule()
        fixed = cfg.get("threshold_fixed")
        rule = ThresholdRule(
            cap_factor=float(cfg.get("threshold_cap_factor", defaults.cap_factor)),
            base_factor=float(cfg.get("threshold_base_factor", defaults.base_factor)),
            fixed=None if fixed is None else float(fixed),
            rigid_tolerance=float(cfg.get("rigid_tolerance_min", defaults.rigid_tolerance)),
        )
        vtypes = tuple(
            VehicleType(str(v["id"]), float(v["cost"]), float(v["capacity"])) for v in cfg.get("vehicle_types", [])
        )
        return Instance(network, tuple(lines), tuple(od), costs, vtypes, rule)
    except (InstanceError, TypeError, ValueError, KeyError) as exc:
        raise InstanceFileError(f"{d}: {exc}") from None


def _write_table(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=DELIMITER, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def instance_config(instance: Instance) -> dict[str, Any]:
    c = instance.costs
    cfg: dict[str, Any] = {k: _jsonable(getattr(c, k)) for k in _COST_KEYS}
    cfg["lambda"] = _jsonable(c.lam)
    cfg["budget"] = None if math.isinf(c.budget) else _jsonable(c.budget)
    # the most common settings become the defaults, the rest per line
    hs_counts = Counter(l.candidate_headways for l in instance.lines)
    common_hs = max(hs_counts, key=lambda hs: (hs_counts[hs], hs))
    cfg["headways"] = [_jsonable(h) for h in common_hs]
    per_line = {l.id: [_jsonable(h) for h in l.candidate_headways] for l in instance.lines if l.candidate_headways != common_hs}
    if per_line:
        cfg["line_headways"] = per_line
    ta_counts = Counter(l.turnaround for l in instance.lines)
    common_ta = max(ta_counts, key=lambda t: (ta_counts[t], -t))
    cfg["turnaround_min"] = _jsonable(common_ta)
    per_line_ta = {l.id: _jsonable(l.turnaround) for l in instance.lines if l.turnaround != common_ta}
    if per_line_ta:
        cfg["line_turnaround"] = per_line_ta
    r = instance.thresholds
    cfg["threshold_fixed"] = None if r.fixed is None else _jsonable(r.fixed)
    cfg["threshold_cap_factor"] = _jsonable(r.cap_factor)
    cfg["threshold_base_factor"] = _jsonable(r.base_factor)
    cfg["rigid_tolerance_min"] = _jsonable(r.rigid_tolerance)
    if instance.vehicle_types:
        cfg["vehicle_types"] = [
            {"id": v.id, "cost": _jsonable(v.cost), "capacity": _jsonable(v.capacity)} for v in instance.vehicle_types
        ]
    return cfg


def save_instance(instance: Instance, path: Path | str) -> None:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    opt = lambda x: "" if x is None else _num(x)  # noqa: E731
    _write_table(d / "stops.csv", ["id", "name", "x", "y"], [[s.id, s.name, opt(s.x), opt(s.y)] for s in instance.network.stops])
    _write_table(
        d / "edges.csv",
        ["id", "from", "to", "travel_time_min"],
        [[e.id, e.u, e.v, _num(e.travel_time)] for e in instance.network.edges],
    )
    _write_table(
        d / "od.csv",
        ["origin", "destination", "passengers"],
        [[o.origin, o.destination, _num(o.demand)] for o in instance.od],
    )
    _write_table(
        d / "pool.csv",
        ["line_id", "edge_id", "position"],
        [[l.id, e, str(k + 1)] for l in instance.lines for k, e in enumerate(l.edge_sequence)],
    )
    (d / "config.json").write_text(json.dumps(instance_config(instance), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# solutions


def solution_record(solution: LppSolution, instance: Instance) -> dict[str, Any]:
    """Deterministic JSON-ready view of a solution (no timings)."""
    ps = solution.pathset
    demand = {d.id: d.demand for d in instance.od}
    opened = []
    for l in sorted(solution.opened):
        opened.append(
            {
                "line": l,
                "headway": solution.opened[l],
                "vehicles": solution.vehicles.get(l, 0.0),
                "vehicles_by_type": {v: n for (ll, v), n in sorted(solution.vehicles_by_type.items()) if ll == l},
            }
        )
    flows = []
    for i, p in enumerate(ps.paths):
        f = float(solution.flows[i])
        if f <= 0:
            continue
        flows.append(
            {
                "od": p.od,
                "signature": p.signature_text,
                "headways": [h for _, h in p.usages],
                "share": f,
                "passengers": f * demand[p.od],
                "cost": p.cost,
            }
        )
    return {
        "status": solution.status,
        "objective": solution.objective,
        "opened": opened,
        "breakdown": None if solution.breakdown is None else solution.breakdown.as_dict(),
        "flows": flows,
    }


def write_solution(solution: LppSolution, instance: Instance, path: Path | str) -> None:
    Path(path).write_text(json.dumps(solution_record(solution, instance), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_concept(path: Path | str, instance: Instance) -> LineConcept:
    """Line concept from a solution file or a hand-written ``{"opened": [...]}`` file.

    Entries without ``vehicles_by_type`` put all ``vehicles`` on the first
    vehicle type; entries without ``vehicles`` get exactly what the headway
    needs.
    """
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InstanceFileError(f"{p}: {exc}") from None
    vtype = instance.fleet[0].id
    headways: dict[str, float] = {}
    by_type: dict[tuple[str, str], float] = {}
    for k, entry in enumerate(data.get("opened", [])):
        try:
            l = str(entry["line"])
            h = float(entry["headway"])
        except (KeyError, TypeError, ValueError):
            raise InstanceFileError(f"{p}: opened entry {k} needs 'line' and 'headway'") from None
        headways[l] = h
        if entry.get("vehicles_by_type"):
            for v, n in entry["vehicles_by_type"].items():
                by_type[l, v] = float(n)
        elif "vehicles" in entry:
            by_type[l, vtype] = float(entry["vehicles"])
        elif l in instance.line_by_id:
            by_type[l, vtype] = float(vehicles_required(instance.line_by_id[l], h))
    concept = LineConcept(headways, by_type)
    try:
        concept.validate(instance)
    except InstanceError as exc:
        raise InstanceFileError(f"{p}: {exc}") from None
    return concept
