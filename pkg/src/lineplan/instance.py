"""Problem input types and headway/vehicle arithmetic.

Everything in here is immutable once built. Lines store their candidate
headways in minutes; frequencies only appear at the reporting boundary.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Sequence

import networkx as nx

DEFAULT_HEADWAYS: tuple[float, ...] = tuple(float(h) for h in range(2, 21))

# guards ceil() against float noise such as 60 / 7.5 / ... round-offs
_CEIL_EPS = 1e-9


class InstanceError(ValueError):
    """Raised for structurally invalid problem input."""


@dataclass(frozen=True)
class Stop:
    id: str
    name: str = ""
    x: Optional[float] = None
    y: Optional[float] = None


@dataclass(frozen=True)
class Edge:
    id: str
    u: str
    v: str
    travel_time: float

    def other(self, stop: str) -> str:
        if stop == self.u:
            return self.v
        if stop == self.v:
            return self.u
        raise KeyError(f"stop {stop!r} is not an endpoint of edge {self.id!r}")


@dataclass(frozen=True)
class PublicTransportNetwork:
    """Undirected stop/edge graph with travel times in minutes."""

    stops: tuple[Stop, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self):
        ids = [s.id for s in self.stops]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate stop ids")
        known = set(ids)
        seen = set()
        for e in self.edges:
            if e.id in seen:
                raise InstanceError(f"duplicate edge id {e.id!r}")
            seen.add(e.id)
            for s in (e.u, e.v):
                if s not in known:
                    raise InstanceError(f"edge {e.id!r} references unknown stop {s!r}")
            if e.u == e.v:
                raise InstanceError(f"edge {e.id!r} is a self-loop")
            if not e.travel_time > 0:
                raise InstanceError(f"edge {e.id!r} has non-positive travel time")

    @cached_property
    def edge_by_id(self) -> dict[str, Edge]:
        return {e.id: e for e in self.edges}

    @cached_property
    def stop_ids(self) -> frozenset[str]:
        return frozenset(s.id for s in self.stops)

    @cached_property
    def graph(self) -> nx.Graph:
        # parallel edges collapse to the fastest one; enough for shortest times
        g = nx.Graph()
        g.add_nodes_from(s.id for s in self.stops)
        for e in self.edges:
            if g.has_edge(e.u, e.v) and g[e.u][e.v]["weight"] <= e.travel_time:
                continue
            g.add_edge(e.u, e.v, weight=e.travel_time)
        return g

    def is_connected(self) -> bool:
        return len(self.stops) == 0 or nx.is_connected(self.graph)


class HeadwayProfile(NamedTuple):
    """Per-line (headway, vehicles) pairs with unique vehicle counts."""

    entries: tuple[tuple[float, int], ...]

    @property
    def headways(self) -> tuple[float, ...]:
        return tuple(h for h, _ in self.entries)

    @property
    def h_min(self) -> float:
        return self.entries[0][0]

    @property
    def h_max(self) -> float:
        return self.entries[-1][0]

    @property
    def v_min(self) -> int:
        return self.entries[-1][1]


@dataclass(frozen=True)
class Line:
    """A bidirectional line running along a simple path of the PTN.

    ``candidate_headways`` keeps the configured set verbatim. The operative
    set used by the solver is :attr:`headways`, which drops any headway that
    needs as many vehicles as a shorter one.
    """

    id: str
    edge_sequence: tuple[str, ...]
    stop_sequence: tuple[str, ...]
    roundtrip_time: float
    candidate_headways: tuple[float, ...]
    turnaround: float = 0.0

    def __post_init__(self):
        if not self.edge_sequence:
            raise InstanceError(f"line {self.id!r} has no edges")
        if len(set(self.stop_sequence)) != len(self.stop_sequence):
            raise InstanceError(f"line {self.id!r} is not a simple path")
        hs = self.candidate_headways
        if not hs or any(h <= 0 for h in hs):
            raise InstanceError(f"line {self.id!r} needs positive candidate headways")
        if list(hs) != sorted(set(hs)):
            raise InstanceError(f"line {self.id!r}: candidate headways must be strictly ascending")
        if not self.roundtrip_time > 0:
            raise InstanceError(f"line {self.id!r} has non-positive roundtrip time")

    @cached_property
    def profile(self) -> HeadwayProfile:
        entries: list[tuple[float, int]] = []
        used: set[int] = set()
        for h in self.candidate_headways:
            v = vehicles_required(self, h)
            if v not in used:
                used.add(v)
                entries.append((h, v))
        return HeadwayProfile(tuple(entries))

    @property
    def headways(self) -> tuple[float, ...]:
        return self.profile.headways

    @cached_property
    def stop_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.stop_sequence)}

    def segment_edges(self, board: str, alight: str) -> tuple[str, ...]:
        """Edge ids ridden between two stops of this line, in travel order."""
        i, j = self.stop_index[board], self.stop_index[alight]
        if i < j:
            return self.edge_sequence[i:j]
        return tuple(reversed(self.edge_sequence[j:i]))

    def segment_stops(self, board: str, alight: str) -> tuple[str, ...]:
        i, j = self.stop_index[board], self.stop_index[alight]
        if i < j:
            return self.stop_sequence[i : j + 1]
        return tuple(reversed(self.stop_sequence[j : i + 1]))


def make_line(
    network: PublicTransportNetwork,
    line_id: str,
    edge_ids: Sequence[str],
    headways: Iterable[float] = DEFAULT_HEADWAYS,
    turnaround: float = 0.0,
) -> Line:
    """Build a line from an ordered edge list, deriving stops and roundtrip time."""
    edges = []
    for eid in edge_ids:
        try:
            edges.append(network.edge_by_id[eid])
        except KeyError:
            raise InstanceError(f"line {line_id!r} references unknown edge {eid!r}") from None
    if not edges:
        raise InstanceError(f"line {line_id!r} has no edges")
    if len(edges) == 1:
        stops = [edges[0].u, edges[0].v]
    else:
        # orient the first edge towards the shared endpoint with the second
        first, second = edges[0], edges[1]
        if first.v in (second.u, second.v):
            stops = [first.u, first.v]
        elif first.u in (second.u, second.v):
            stops = [first.v, first.u]
        else:
            raise InstanceError(f"line {line_id!r}: edges {first.id!r} and {second.id!r} are not adjacent")
        for e in edges[1:]:
            try:
                stops.append(e.other(stops[-1]))
            except KeyError:
                raise InstanceError(f"line {line_id!r}: edge {e.id!r} does not continue the path") from None
    if len(set(stops)) != len(stops):
        raise InstanceError(f"line {line_id!r} is not a simple path")
    one_way = sum(e.travel_time for e in edges)
    return Line(
        id=line_id,
        edge_sequence=tuple(e.id for e in edges),
        stop_sequence=tuple(stops),
        roundtrip_time=2.0 * one_way + turnaround,
        candidate_headways=tuple(sorted(float(h) for h in headways)),
        turnaround=float(turnaround),
    )


@dataclass(frozen=True)
class ODPair:
    id: str
    origin: str
    destination: str
    demand: float

    def __post_init__(self):
        if self.origin == self.destination:
            raise InstanceError(f"OD {self.id!r} has origin equal to destination")
        if self.demand < 0:
            raise InstanceError(f"OD {self.id!r} has negative demand")


@dataclass(frozen=True)
class VehicleType:
    id: str
    cost: float
    capacity: float


@dataclass(frozen=True)
class CostParameters:
    """Monetary parameters. Rates are per hour, the wait cap is in minutes.

    Defaults are the Danish value-of-time and bus operating figures.
    """

    ivt_rate: float = 119.0
    perceived_wait_rate: float = 238.0
    hidden_wait_rate: float = 95.0
    perceived_wait_cap: float = 5.0
    transfer_wait_rate: float = 179.0
    transfer_penalty: float = 12.0
    vehicle_cost: float = 880.0
    line_fixed_cost: float = 880.0
    vehicle_capacity: float = 50.0
    fare: float = 22.0
    lam: float = 1.0
    budget: float = math.inf

    def __post_init__(self):
        for name in (
            "ivt_rate",
            "perceived_wait_rate",
            "hidden_wait_rate",
            "perceived_wait_cap",
            "transfer_wait_rate",
            "transfer_penalty",
            "vehicle_cost",
            "line_fixed_cost",
            "fare",
        ):
            if getattr(self, name) < 0:
                raise InstanceError(f"{name} must be non-negative")
        if not self.lam > 0:
            raise InstanceError("lambda must be positive")
        if not self.vehicle_capacity > 0:
            raise InstanceError("vehicle capacity must be positive")
        if self.budget < 0:
            raise InstanceError("budget must be non-negative")

    def scaled_time_values(self, factor: float) -> "CostParameters":
        """Copy with every passenger time value (not the penalty) multiplied."""
        return replace(
            self,
            ivt_rate=self.ivt_rate * factor,
            perceived_wait_rate=self.perceived_wait_rate * factor,
            hidden_wait_rate=self.hidden_wait_rate * factor,
            transfer_wait_rate=self.transfer_wait_rate * factor,
        )


@dataclass(frozen=True)
class ThresholdRule:
    """How acceptable path costs are derived per OD.

    ``fixed`` overrides the formula with one constant for every OD.
    """

    cap_factor: float = 3.0
    base_factor: float = 1.25
    fixed: Optional[float] = None
    rigid_tolerance: float = 15.0


@dataclass(frozen=True)
class Instance:
    network: PublicTransportNetwork
    lines: tuple[Line, ...]
    od: tuple[ODPair, ...]
    costs: CostParameters = field(default_factory=CostParameters)
    vehicle_types: tuple[VehicleType, ...] = ()
    thresholds: ThresholdRule = field(default_factory=ThresholdRule)

    def __post_init__(self):
        if not self.lines:
            raise InstanceError("no lines in the pool")
        if not self.od:
            raise InstanceError("no OD pairs")
        ids = [l.id for l in self.lines]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate line ids")
        for line in self.lines:
            for eid in line.edge_sequence:
                if eid not in self.network.edge_by_id:
                    raise InstanceError(f"line {line.id!r} references unknown edge {eid!r}")
        pairs = set()
        od_ids = set()
        for d in self.od:
            for s in (d.origin, d.destination):
                if s not in self.network.stop_ids:
                    raise InstanceError(f"OD {d.id!r} references unknown stop {s!r}")
            if (d.origin, d.destination) in pairs:
                raise InstanceError(f"duplicate OD pair {d.origin!r} -> {d.destination!r}")
            if d.id in od_ids:
                raise InstanceError(f"duplicate OD id {d.id!r}")
            pairs.add((d.origin, d.destination))
            od_ids.add(d.id)
        if not self.network.is_connected():
            warnings.warn("public transport network is disconnected", stacklevel=2)

    @cached_property
    def line_by_id(self) -> dict[str, Line]:
        return {l.id: l for l in self.lines}

    @cached_property
    def od_by_id(self) -> dict[str, ODPair]:
        return {d.id: d for d in self.od}

    @property
    def fleet(self) -> tuple[VehicleType, ...]:
        """Vehicle types; a single default type built from the cost parameters if none given."""
        if self.vehicle_types:
            return self.vehicle_types
        return (VehicleType("default", self.costs.vehicle_cost, self.costs.vehicle_capacity),)

    @property
    def total_demand(self) -> float:
        return sum(d.demand for d in self.od)

    @property
    def max_headway(self) -> float:
        return max(l.profile.h_max for l in self.lines)

    def with_costs(self, **changes) -> "Instance":
        return replace(self, costs=replace(self.costs, **changes))


# --------------------------------------------------------------------------
# headway <-> vehicle conversions


class Achievable(NamedTuple):
    headway: float
    sufficient: bool


def vehicles_required(line: Line, headway: float) -> int:
    """Vehicles needed to run ``line`` every ``headway`` minutes."""
    if not headway > 0:
        raise ValueError(f"headway must be positive, got {headway}")
    return max(1, math.ceil(line.roundtrip_time / headway - _CEIL_EPS))


def achievable_headway(line: Line, vehicles: float) -> Achievable:
    """Shortest candidate headway that ``vehicles`` can sustain.

    If even the longest headway needs more vehicles, ``h_max`` is returned
    with ``sufficient=False``.
    """
    if vehicles < 1 - 1e-9:
        raise ValueError(f"need at least one vehicle, got {vehicles}")
    for h, v in line.profile.entries:
        if v <= vehicles + 1e-9:
            return Achievable(h, True)
    return Achievable(line.profile.h_max, False)


def next_smaller_headway(line: Line, headway: float) -> Optional[float]:
    """Largest operative headway strictly below ``headway``; None at h_min."""
    hs = line.headways
    try:
        i = hs.index(headway)
    except ValueError:
        raise ValueError(f"{headway} is not a candidate headway of line {line.id!r}") from None
    return hs[i - 1] if i > 0 else None
