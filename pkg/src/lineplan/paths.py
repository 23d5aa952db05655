"""Candidate passenger paths per OD pair.

A path is a simple walk through the change-and-go network from the origin's
access node to the destination's egress node with at most one transfer, where
every arc of a line carries the same headway. Paths are generated per
*geographic signature* (the sequence of ridden line segments) and then
expanded over headway combinations.

Two modes are supported:

``service``
    only frequency variants whose cost stays within the OD threshold are kept,
    plus an alternative-mode path priced exactly at the threshold.
``rigid``
    a signature that is acceptable at all is kept at *every* headway
    combination; the alternative path only enters the model for ODs without
    any network path.
"""
from __future__ import annotations

import csv
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import networkx as nx
import numpy as np

from .cgn import ChangeAndGoNetwork, access_cost, build_cgn, ride_cost, transfer_cost
from .instance import Instance, ODPair

log = logging.getLogger(__name__)

SERVICE = "service"
RIGID = "rigid"
MODES = (SERVICE, RIGID)

DEFAULT_MAX_PATHS_PER_OD = 50_000

# relative slack on cost comparisons (threshold tests, dominance ties)
COST_TOL = 1e-9

Segment = tuple[str, str, str]  # (line, board stop, alight stop)
Signature = tuple[Segment, ...]


class PathExplosionError(RuntimeError):
    """Too many candidate paths for one OD pair."""

    def __init__(self, od_id: str, count: int, cap: int):
        super().__init__(f"OD {od_id!r} has {count} candidate paths, above the cap of {cap}")
        self.od_id = od_id


def _leq(a: float, b: float) -> bool:
    return a <= b + COST_TOL * max(1.0, abs(b))


def signature_key(sig: Signature) -> str:
    if not sig:
        return "*"
    return "|".join(f"{l}:{a}>{b}" for l, a, b in sig)


def parse_signature(text: str) -> Signature:
    if text == "*":
        return ()
    segs = []
    for part in text.split("|"):
        line, stops = part.split(":", 1)
        a, b = stops.split(">", 1)
        segs.append((line, a, b))
    return tuple(segs)


@dataclass(frozen=True)
class PassengerPath:
    od: str
    arcs: tuple[int, ...]
    cost: float
    usages: tuple[tuple[str, float], ...]
    signature: Signature
    alternative: bool = False

    @property
    def lines(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.usages)

    @property
    def transfers(self) -> int:
        return max(len(self.signature) - 1, 0)

    @property
    def key(self) -> tuple:
        return (self.od, self.signature, self.usages)

    @property
    def signature_text(self) -> str:
        return signature_key(self.signature)


def dominates(p1: PassengerPath, p2: PassengerPath) -> bool:
    """p1 is no more expensive, uses a subset of p2's lines, and the same headway on each."""
    if p1.od != p2.od:
        raise ValueError("dominance is only defined within one OD pair")
    if p1.alternative or p2.alternative:
        return False
    return _leq(p1.cost, p2.cost) and set(p1.usages) <= set(p2.usages)


@dataclass
class PathSet:
    """Candidate paths of every OD, with the alternative path always present.

    ``origin_index`` maps each path to its position in the parent set when
    the set was obtained by restriction.
    """

    mode: str
    paths: list[PassengerPath]
    od_ids: list[str]
    threshold: dict[str, float]
    tmin: dict[str, Optional[float]]
    origin_index: Optional[np.ndarray] = None

    @cached_property
    def by_od(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {d: [] for d in self.od_ids}
        for i, p in enumerate(self.paths):
            out[p.od].append(i)
        return out

    @cached_property
    def alternative(self) -> dict[str, int]:
        return {p.od: i for i, p in enumerate(self.paths) if p.alternative}

    @cached_property
    def index_of(self) -> dict[tuple, int]:
        return {p.key: i for i, p in enumerate(self.paths)}

    @cached_property
    def through_arc(self) -> dict[int, list[int]]:
        """In-vehicle arc id -> indices of paths riding it."""
        out: dict[int, list[int]] = defaultdict(list)
        for i, p in enumerate(self.paths):
            if p.alternative:
                continue
            for a in self._ivt_arcs(p):
                out[a].append(i)
        return dict(out)

    @cached_property
    def using(self) -> dict[tuple[str, str, float], list[int]]:
        """(od, line, headway) -> path indices."""
        out: dict[tuple[str, str, float], list[int]] = defaultdict(list)
        for i, p in enumerate(self.paths):
            for l, h in p.usages:
                out[p.od, l, h].append(i)
        return dict(out)

    @cached_property
    def by_signature(self) -> dict[tuple[str, Signature], list[int]]:
        out: dict[tuple[str, Signature], list[int]] = defaultdict(list)
        for i, p in enumerate(self.paths):
            if not p.alternative:
                out[p.od, p.signature].append(i)
        return dict(out)

    # (line, from stop, to stop) -> in-vehicle arc id of the underlying network
    ivt_arc_ids: Mapping[tuple[str, str, str], int] = field(default_factory=dict, repr=False)

    @cached_property
    def ivt_lines(self) -> dict[int, str]:
        return {a: key[0] for key, a in self.ivt_arc_ids.items()}

    def _ivt_arcs(self, p: PassengerPath) -> list[int]:
        return [a for a in p.arcs if a in self.ivt_lines]

    def has_network_path(self, od: str) -> bool:
        return len(self.by_od[od]) > 1

    def in_model(self, i: int) -> bool:
        """Whether path ``i`` is offered to the optimizer.

        Rigid sets keep the alternative path for evaluation, but the model
        only sees it when the OD has no network path.
        """
        p = self.paths[i]
        if self.mode == RIGID and p.alternative:
            return not self.has_network_path(p.od)
        return True

    @property
    def n_network_paths(self) -> int:
        return sum(1 for p in self.paths if not p.alternative)

    def stats(self) -> dict[str, float]:
        sigs = {(p.od, p.signature) for p in self.paths if not p.alternative}
        n = max(len(self.od_ids), 1)
        return {
            "ods": len(self.od_ids),
            "signatures": len(sigs),
            "paths": self.n_network_paths,
            "paths_per_od": self.n_network_paths / n,
            "signatures_per_od": len(sigs) / n,
        }


def _new_pathset(mode, paths, od_ids, threshold, tmin, ivt_arc_ids, origin_index=None) -> PathSet:
    return PathSet(mode, paths, od_ids, threshold, tmin, origin_index, ivt_arc_ids)


# --------------------------------------------------------------------------
# thresholds


def shortest_ptn_time(instance: Instance, od: ODPair) -> Optional[float]:
    """Shortest in-vehicle time through the PTN, or None when disconnected."""
    try:
        return float(nx.shortest_path_length(instance.network.graph, od.origin, od.destination, weight="weight"))
    except nx.NetworkXNoPath:
        return None


def threshold(instance: Instance, t_min: float) -> float:
    """Maximum acceptable path cost for an OD whose shortest ride takes ``t_min`` minutes.

    ``min(cap * C, base * C + tau)`` with ``C`` the ride cost of ``t_min`` and
    ``tau`` one initial wait plus one transfer, both at the longest headway.
    """
    rule = instance.thresholds
    if rule.fixed is not None:
        return float(rule.fixed)
    costs = instance.costs
    c_min = ride_cost(t_min, costs)
    h = instance.max_headway
    tau = access_cost(h, costs) + transfer_cost(h, costs)
    return min(rule.cap_factor * c_min, rule.base_factor * c_min + tau)


# --------------------------------------------------------------------------
# generation


def candidate_signatures(instance: Instance, origin: str, destination: str) -> list[Signature]:
    """Direct and one-transfer line sequences; every ride covers at least one edge."""
    lines_at: dict[str, list] = defaultdict(list)
    for line in instance.lines:
        for s in line.stop_sequence:
            lines_at[s].append(line)
    sigs: list[Signature] = []
    for a in lines_at.get(origin, ()):
        if destination in a.stop_index:
            sigs.append(((a.id, origin, destination),))
    for a in lines_at.get(origin, ()):
        for x in a.stop_sequence:
            if x in (origin, destination):
                continue
            for b in lines_at[x]:
                if b.id == a.id or destination not in b.stop_index:
                    continue
                sigs.append(((a.id, origin, x), (b.id, x, destination)))
    return sigs


def _ride_arcs(cgn: ChangeAndGoNetwork, instance: Instance, seg: Segment) -> list[int]:
    line = instance.line_by_id[seg[0]]
    stops = line.segment_stops(seg[1], seg[2])
    return [cgn.ivt_arc[line.id, u, v] for u, v in zip(stops, stops[1:])]


def _ride_edges(instance: Instance, sig: Signature) -> tuple[str, ...]:
    out: list[str] = []
    for l, a, b in sig:
        out.extend(instance.line_by_id[l].segment_edges(a, b))
    return tuple(out)


def path_arcs(cgn: ChangeAndGoNetwork, instance: Instance, sig: Signature, headways: Sequence[float]) -> list[int]:
    """Arc sequence of a signature with one headway per segment."""
    arcs = [cgn.access_arc[sig[0][1], sig[0][0], headways[0]]]
    for k, seg in enumerate(sig):
        line, board, alight = seg
        if k > 0:
            arcs.append(cgn.board_arc[board, line, headways[k]])
        arcs.extend(_ride_arcs(cgn, instance, seg))
        if k + 1 < len(sig):
            arcs.append(cgn.alight_arc[alight, line, headways[k]])
        else:
            arcs.append(cgn.egress_arc[alight, line, headways[k]])
    return arcs


def signature_cost(cgn: ChangeAndGoNetwork, instance: Instance, sig: Signature, headways: Sequence[float]) -> float:
    """Generalized cost of ``sig`` ridden at the given per-segment headways."""
    return _arc_sum(cgn, path_arcs(cgn, instance, sig, headways))


def _arc_sum(cgn: ChangeAndGoNetwork, arcs: Iterable[int]) -> float:
    total = 0.0
    for a in arcs:
        total += cgn.arcs[a].cost
    return total


def _drop_same_line_transfers(instance, cgn, sigs: list[Signature]) -> list[Signature]:
    """Remove transfer signatures that only retrace a direct ride costing no more.

    Compared at every line's shortest headway so the decision does not
    depend on frequencies.
    """
    direct_best: dict[tuple[str, ...], float] = {}
    for sig in sigs:
        if len(sig) == 1:
            best = _best_cost(instance, cgn, sig)
            edges = _ride_edges(instance, sig)
            direct_best[edges] = min(best, direct_best.get(edges, np.inf))
    kept = []
    for sig in sigs:
        if len(sig) > 1:
            d = direct_best.get(_ride_edges(instance, sig))
            if d is not None and _leq(d, _best_cost(instance, cgn, sig)):
                continue
        kept.append(sig)
    return kept


def _best_cost(instance, cgn, sig: Signature) -> float:
    hs = [instance.line_by_id[l].profile.h_min for l, _, _ in sig]
    return _arc_sum(cgn, path_arcs(cgn, instance, sig, hs))


def _prune_dominated(paths: list[PassengerPath]) -> list[PassengerPath]:
    groups: dict[frozenset, list[int]] = defaultdict(list)
    usage_sets = [frozenset(p.usages) for p in paths]
    keys = [p.signature_text for p in paths]
    for i, u in enumerate(usage_sets):
        groups[u].append(i)
    group_min = {u: min(paths[j].cost for j in idx) for u, idx in groups.items()}

    kept = []
    for i, p in enumerate(paths):
        u = usage_sets[i]
        dominated = False
        for r in range(1, len(u)):
            for sub in itertools.combinations(sorted(u), r):
                s = frozenset(sub)
                if s in groups and _leq(group_min[s], p.cost):
                    dominated = True
                    break
            if dominated:
                break
        if not dominated:
            for j in groups[u]:
                if j == i or not _leq(paths[j].cost, p.cost):
                    continue
                mutual = _leq(p.cost, paths[j].cost)
                if not mutual or keys[j] < keys[i]:
                    dominated = True
                    break
        if not dominated:
            kept.append(p)
    return kept


def _od_paths(instance, cgn, od: ODPair, mode: str, cbar: float, t_min: Optional[float], cap: int) -> list[PassengerPath]:
    if t_min is None:
        return []
    sigs = _drop_same_line_transfers(instance, cgn, candidate_signatures(instance, od.origin, od.destination))
    edges = instance.network.edge_by_id
    out: list[PassengerPath] = []
    for sig in sigs:
        lines = [instance.line_by_id[l] for l, _, _ in sig]
        if mode == RIGID:
            ride_time = sum(edges[e].travel_time for e in _ride_edges(instance, sig))
            ok = ride_time <= t_min + instance.thresholds.rigid_tolerance + 1e-9
            if not ok and not _leq(_best_cost(instance, cgn, sig), cbar):
                continue
        for hs in itertools.product(*(l.headways for l in lines)):
            arcs = path_arcs(cgn, instance, sig, hs)
            cost = _arc_sum(cgn, arcs)
            if mode == SERVICE and not _leq(cost, cbar):
                continue
            out.append(
                PassengerPath(
                    od=od.id,
                    arcs=tuple(arcs),
                    cost=cost,
                    usages=tuple((l.id, h) for l, h in zip(lines, hs)),
                    signature=sig,
                )
            )
            if len(out) > cap:
                raise PathExplosionError(od.id, len(out), cap)
    out = _prune_dominated(out)
    out.sort(key=lambda p: (p.signature_text, p.usages))
    return out


def generate_paths(
    instance: Instance,
    cgn: Optional[ChangeAndGoNetwork] = None,
    mode: str = SERVICE,
    max_paths_per_od: int = DEFAULT_MAX_PATHS_PER_OD,
) -> PathSet:
    if mode not in MODES:
        raise ValueError(f"unknown path mode {mode!r}")
    if cgn is None:
        cgn = build_cgn(instance)
    paths: list[PassengerPath] = []
    thresholds: dict[str, float] = {}
    tmins: dict[str, Optional[float]] = {}
    for od in instance.od:
        t_min = shortest_ptn_time(instance, od)
        if t_min is None:
            log.warning("OD %s is disconnected in the PTN; only the alternative mode is offered", od.id)
            cbar = float(instance.thresholds.fixed or 0.0)
        else:
            cbar = threshold(instance, t_min)
        tmins[od.id] = t_min
        thresholds[od.id] = cbar
        paths.extend(_od_paths(instance, cgn, od, mode, cbar, t_min, max_paths_per_od))
        paths.append(alternative_path(cgn, od, cbar))
    return _new_pathset(mode, paths, [d.id for d in instance.od], thresholds, tmins, dict(cgn.ivt_arc))


def alternative_path(cgn: ChangeAndGoNetwork, od: ODPair, cbar: float) -> PassengerPath:
    return PassengerPath(
        od=od.id,
        arcs=(cgn.alternative_arc[od.origin, od.destination],),
        cost=cbar,
        usages=(),
        signature=(),
        alternative=True,
    )


def restrict_paths(pathset: PathSet, representation: Mapping[str, Iterable[float]]) -> PathSet:
    """Sub-set of paths whose every (line, headway) usage is represented.

    Alternative paths are always kept.
    """
    allowed = {l: set(hs) for l, hs in representation.items()}
    keep = [
        i
        for i, p in enumerate(pathset.paths)
        if all(h in allowed.get(l, ()) for l, h in p.usages)
    ]
    return _new_pathset(
        pathset.mode,
        [pathset.paths[i] for i in keep],
        list(pathset.od_ids),
        dict(pathset.threshold),
        dict(pathset.tmin),
        pathset.ivt_arc_ids,
        origin_index=np.asarray(keep, dtype=np.int64),
    )


# --------------------------------------------------------------------------
# persistence


def write_pathset(pathset: PathSet, path: Path | str) -> None:
    """Semicolon file with one row per path: od;signature;headways;cost."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=";", lineterminator="\n")
        w.writerow(["od", "signature", "headways", "cost"])
        for p in pathset.paths:
            w.writerow([p.od, p.signature_text, "|".join(repr(h) for _, h in p.usages), repr(p.cost)])


def read_pathset(path: Path | str, instance: Instance, cgn: Optional[ChangeAndGoNetwork] = None, mode: str = SERVICE) -> PathSet:
    """Rebuild a path set from :func:`write_pathset` output, re-pricing every path."""
    if cgn is None:
        cgn = build_cgn(instance)
    od_by_id = instance.od_by_id
    paths: list[PassengerPath] = []
    thresholds: dict[str, float] = {}
    tmins: dict[str, Optional[float]] = {}
    for od in instance.od:
        tmins[od.id] = shortest_ptn_time(instance, od)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter=";"))
    for n, row in enumerate(rows, start=2):
        od = od_by_id.get(row["od"])
        if od is None:
            raise ValueError(f"{path}:{n}: unknown OD {row['od']!r}")
        sig = parse_signature(row["signature"])
        stored = float(row["cost"])
        if not sig:
            thresholds[od.id] = stored
            paths.append(alternative_path(cgn, od, stored))
            continue
        hs = [float(h) for h in row["headways"].split("|")]
        try:
            arcs = path_arcs(cgn, instance, sig, hs)
        except KeyError as exc:
            raise ValueError(f"{path}:{n}: path does not exist in the network ({exc})") from None
        cost = _arc_sum(cgn, arcs)
        if not np.isclose(cost, stored, rtol=1e-9, atol=1e-9):
            raise ValueError(f"{path}:{n}: stored cost {stored} differs from recomputed {cost}")
        paths.append(
            PassengerPath(od.id, tuple(arcs), cost, tuple((s[0], h) for s, h in zip(sig, hs)), sig)
        )
    missing = [d.id for d in instance.od if d.id not in thresholds]
    if missing:
        raise ValueError(f"{path}: no alternative path for OD(s) {missing}")
    order = {d.id: k for k, d in enumerate(instance.od)}
    paths.sort(key=lambda p: (order[p.od], p.alternative))
    return _new_pathset(mode, paths, [d.id for d in instance.od], thresholds, tmins, dict(cgn.ivt_arc))
