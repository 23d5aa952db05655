"""Change-and-go network: a frequency-expanded multigraph over lines and stops.

Node kinds
    ACCESS / EGRESS  one per stop that is an OD origin / destination
    TRANSFER         one per stop served by at least two pool lines
    LINE_STOP        one per (line, stop on line)

Arc kinds
    IN_VEHICLE       both directions of every line edge, headway independent
    ACCESS / EGRESS  one per (line, headway) at the stop
    TRANSFER         alighting (line node -> transfer node, free) and boarding
                     (transfer node -> line node, priced) arcs, one per headway
    ALTERNATIVE      access -> egress for every OD stop pair

Frequency consistency of paths is not encoded in the graph; path generation
enforces it.
"""
from __future__ import annotations

import csv
import enum
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .instance import CostParameters, Instance


class NodeKind(str, enum.Enum):
    ACCESS = "access"
    EGRESS = "egress"
    TRANSFER = "transfer"
    LINE_STOP = "line_stop"


class ArcKind(str, enum.Enum):
    IN_VEHICLE = "in_vehicle"
    ACCESS = "access"
    EGRESS = "egress"
    TRANSFER = "transfer"
    ALTERNATIVE = "alternative"


@dataclass(frozen=True)
class CgnNode:
    id: int
    kind: NodeKind
    stop: str
    line: Optional[str] = None


@dataclass(frozen=True)
class CgnArc:
    id: int
    kind: ArcKind
    tail: int
    head: int
    cost: float = 0.0
    line: Optional[str] = None
    headway: Optional[float] = None
    stop: Optional[str] = None
    # in-vehicle arcs only
    edge: Optional[str] = None
    travel_time: float = 0.0
    # transfer arcs only: True for the priced boarding half
    boarding: Optional[bool] = None


def waiting_cost(wait: float, costs: CostParameters) -> float:
    """Initial wait: perceived up to the cap, hidden beyond it (rates per hour)."""
    perceived = min(wait, costs.perceived_wait_cap)
    hidden = max(wait - costs.perceived_wait_cap, 0.0)
    return (perceived * costs.perceived_wait_rate + hidden * costs.hidden_wait_rate) / 60.0


def access_cost(headway: float, costs: CostParameters) -> float:
    return waiting_cost(headway / 2.0, costs)


def transfer_cost(headway: float, costs: CostParameters) -> float:
    """Penalty plus half the receiving line's headway at the transfer rate."""
    return costs.transfer_penalty + (headway / 2.0) * costs.transfer_wait_rate / 60.0


def ride_cost(travel_time: float, costs: CostParameters) -> float:
    return travel_time * costs.ivt_rate / 60.0


def arc_cost(arc: CgnArc, costs: CostParameters) -> float:
    """Generalized cost of one arc. Alternative-mode arcs are priced per OD later."""
    if arc.kind is ArcKind.IN_VEHICLE:
        return ride_cost(arc.travel_time, costs)
    if arc.kind is ArcKind.ACCESS:
        return access_cost(arc.headway, costs)
    if arc.kind is ArcKind.TRANSFER:
        return transfer_cost(arc.headway, costs) if arc.boarding else 0.0
    return 0.0


@dataclass
class ChangeAndGoNetwork:
    nodes: list[CgnNode] = field(default_factory=list)
    arcs: list[CgnArc] = field(default_factory=list)

    access_node: dict[str, int] = field(default_factory=dict)
    egress_node: dict[str, int] = field(default_factory=dict)
    transfer_node: dict[str, int] = field(default_factory=dict)
    line_node: dict[tuple[str, str], int] = field(default_factory=dict)

    # (line, from_stop, to_stop) -> arc
    ivt_arc: dict[tuple[str, str, str], int] = field(default_factory=dict)
    # (stop, line, headway) -> arc
    access_arc: dict[tuple[str, str, float], int] = field(default_factory=dict)
    egress_arc: dict[tuple[str, str, float], int] = field(default_factory=dict)
    alight_arc: dict[tuple[str, str, float], int] = field(default_factory=dict)
    board_arc: dict[tuple[str, str, float], int] = field(default_factory=dict)
    # (origin, destination) -> arc
    alternative_arc: dict[tuple[str, str], int] = field(default_factory=dict)

    def _add_node(self, kind: NodeKind, stop: str, line: Optional[str] = None) -> int:
        node = CgnNode(len(self.nodes), kind, stop, line)
        self.nodes.append(node)
        return node.id

    def _add_arc(self, kind: ArcKind, tail: int, head: int, costs: CostParameters, **attrs) -> int:
        arc = CgnArc(len(self.arcs), kind, tail, head, **attrs)
        arc = replace(arc, cost=arc_cost(arc, costs))
        self.arcs.append(arc)
        return arc.id

    def arcs_of_kind(self, kind: ArcKind) -> list[CgnArc]:
        return [a for a in self.arcs if a.kind is kind]

    def nodes_of_kind(self, kind: NodeKind) -> list[CgnNode]:
        return [n for n in self.nodes if n.kind is kind]

    def arcs_with_headway(self, headway: float) -> list[CgnArc]:
        return [a for a in self.arcs if a.headway == headway]

    def to_networkx(self):
        """MultiDiGraph view keyed by arc id, for inspection and brute-force checks."""
        import networkx as nx

        g = nx.MultiDiGraph()
        for n in self.nodes:
            g.add_node(n.id, kind=n.kind, stop=n.stop, line=n.line)
        for a in self.arcs:
            g.add_edge(a.tail, a.head, key=a.id, cost=a.cost)
        return g

    def write(self, directory: Path | str) -> None:
        """Dump nodes.csv and arcs.csv (semicolon separated) for debugging."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=";", lineterminator="\n")
            w.writerow(["id", "kind", "stop", "line"])
            for n in self.nodes:
                w.writerow([n.id, n.kind.value, n.stop, n.line or ""])
        with open(directory / "arcs.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=";", lineterminator="\n")
            w.writerow(["id", "kind", "tail", "head", "line", "headway", "cost"])
            for a in self.arcs:
                w.writerow(
                    [a.id, a.kind.value, a.tail, a.head, a.line or "",
                     "" if a.headway is None else repr(a.headway), repr(a.cost)]
                )


def build_cgn(instance: Instance) -> ChangeAndGoNetwork:
    costs = instance.costs
    cgn = ChangeAndGoNetwork()

    origins = sorted({d.origin for d in instance.od})
    destinations = sorted({d.destination for d in instance.od})
    lines_at: dict[str, list[str]] = defaultdict(list)
    for line in instance.lines:
        for s in line.stop_sequence:
            lines_at[s].append(line.id)

    for s in origins:
        cgn.access_node[s] = cgn._add_node(NodeKind.ACCESS, s)
    for s in destinations:
        cgn.egress_node[s] = cgn._add_node(NodeKind.EGRESS, s)
    for s in sorted(lines_at):
        if len(lines_at[s]) >= 2:
            cgn.transfer_node[s] = cgn._add_node(NodeKind.TRANSFER, s)
    for line in instance.lines:
        for s in line.stop_sequence:
            cgn.line_node[line.id, s] = cgn._add_node(NodeKind.LINE_STOP, s, line.id)

    edges = instance.network.edge_by_id
    for line in instance.lines:
        stops = line.stop_sequence
        for i, eid in enumerate(line.edge_sequence):
            a, b = stops[i], stops[i + 1]
            tt = edges[eid].travel_time
            for u, v in ((a, b), (b, a)):
                cgn.ivt_arc[line.id, u, v] = cgn._add_arc(
                    ArcKind.IN_VEHICLE, cgn.line_node[line.id, u], cgn.line_node[line.id, v], costs,
                    line=line.id, edge=eid, travel_time=tt, stop=u,
                )

    for line in instance.lines:
        for s in line.stop_sequence:
            ln = cgn.line_node[line.id, s]
            for h in line.headways:
                if s in cgn.access_node:
                    cgn.access_arc[s, line.id, h] = cgn._add_arc(
                        ArcKind.ACCESS, cgn.access_node[s], ln, costs, line=line.id, headway=h, stop=s
                    )
                if s in cgn.egress_node:
                    cgn.egress_arc[s, line.id, h] = cgn._add_arc(
                        ArcKind.EGRESS, ln, cgn.egress_node[s], costs, line=line.id, headway=h, stop=s
                    )
                if s in cgn.transfer_node:
                    tn = cgn.transfer_node[s]
                    cgn.alight_arc[s, line.id, h] = cgn._add_arc(
                        ArcKind.TRANSFER, ln, tn, costs, line=line.id, headway=h, stop=s, boarding=False
                    )
                    cgn.board_arc[s, line.id, h] = cgn._add_arc(
                        ArcKind.TRANSFER, tn, ln, costs, line=line.id, headway=h, stop=s, boarding=True
                    )

    for pair in sorted({(d.origin, d.destination) for d in instance.od}):
        cgn.alternative_arc[pair] = cgn._add_arc(
            ArcKind.ALTERNATIVE, cgn.access_node[pair[0]], cgn.egress_node[pair[1]], costs
        )
    return cgn
