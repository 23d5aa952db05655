"""Small hand-built and random instances.

The hand-built ones are used by the demos and tests; the random generator
produces tiny instances for oracle comparisons against brute force.
"""
from __future__ import annotations

from typing import Optional

import networkx as nx
import numpy as np

from .instance import (
    CostParameters,
    Edge,
    Instance,
    ODPair,
    PublicTransportNetwork,
    Stop,
    ThresholdRule,
    make_line,
)


def od_id(origin: str, destination: str) -> str:
    return f"{origin}>{destination}"


def _od(origin: str, destination: str, demand: float) -> ODPair:
    return ODPair(od_id(origin, destination), origin, destination, float(demand))


def _chain(n: int, travel_time: float, prefix: str = "S") -> PublicTransportNetwork:
    stops = tuple(Stop(f"{prefix}{i}", f"stop {i}", float(i), 0.0) for i in range(1, n + 1))
    edges = tuple(
        Edge(f"e{i}", f"{prefix}{i}", f"{prefix}{i + 1}", travel_time) for i in range(1, n)
    )
    return PublicTransportNetwork(stops, edges)


# Passenger rates that price one end-to-end ride of the single-line example at
# 35/40/45/50/55 for headways 5/10/15/20/30: 30 minutes in vehicle at 1 per
# minute plus half the headway waited, doubled up to a 10-minute cap.
_EXAMPLE_RATES = dict(
    ivt_rate=60.0,
    perceived_wait_rate=120.0,
    hidden_wait_rate=60.0,
    perceived_wait_cap=10.0,
    transfer_wait_rate=60.0,
    transfer_penalty=0.0,
)


def single_line_example(tripled: bool = False, demand: float = 150.0) -> Instance:
    """Five stops, one line with a one-hour roundtrip, one OD end to end.

    Vehicles cost 2000 and seat 50, lines are free, there is no fare and the
    threshold is high enough that every headway is acceptable. With
    ``tripled`` every passenger time value is multiplied by three.
    """
    net = _chain(5, 7.5)
    line = make_line(net, "L1", ["e1", "e2", "e3", "e4"], headways=(5, 10, 15, 20, 30))
    costs = CostParameters(
        **_EXAMPLE_RATES,
        vehicle_cost=2000.0,
        line_fixed_cost=0.0,
        vehicle_capacity=50.0,
        fare=0.0,
        lam=1.0,
    )
    if tripled:
        costs = costs.scaled_time_values(3.0)
    return Instance(net, (line,), (_od("S1", "S5", demand),), costs, thresholds=ThresholdRule(fixed=1.0e6))


def transfer_example() -> Instance:
    """Two lines crossing at one stop; the corner-to-corner trip needs a transfer.

    ::

        A - B - C          line L1: A-B-C
            |              line L2: B-D-E
            D - E
    """
    stops = tuple(Stop(s, s) for s in "ABCDE")
    edges = (
        Edge("AB", "A", "B", 5.0),
        Edge("BC", "B", "C", 5.0),
        Edge("BD", "B", "D", 5.0),
        Edge("DE", "D", "E", 5.0),
    )
    net = PublicTransportNetwork(stops, edges)
    l1 = make_line(net, "L1", ["AB", "BC"], headways=(5, 10, 20))
    l2 = make_line(net, "L2", ["BD", "DE"], headways=(5, 10, 20))
    od = (_od("A", "E", 80.0), _od("A", "C", 40.0), _od("C", "D", 30.0))
    return Instance(net, (l1, l2), od, CostParameters(vehicle_cost=300.0))


def twin_lines_example() -> Instance:
    """Two identical lines over the same three stops."""
    net = _chain(3, 10.0)
    hs = (5, 10, 15, 20, 30)
    l1 = make_line(net, "L1", ["e1", "e2"], headways=hs)
    l2 = make_line(net, "L2", ["e1", "e2"], headways=hs)
    costs = CostParameters(**_EXAMPLE_RATES, vehicle_cost=2000.0, line_fixed_cost=500.0, vehicle_capacity=50.0, fare=0.0)
    od = (_od("S1", "S3", 150.0), _od("S3", "S1", 90.0))
    return Instance(net, (l1, l2), od, costs, thresholds=ThresholdRule(fixed=1.0e6))


def tight_threshold_example() -> Instance:
    """One line whose only acceptable headways are short, so few vehicles would fake it.

    The threshold sits between the costs at headways 10 and 15: passengers
    accept 5 or 10 minutes only, and the fare makes serving them worthwhile.
    """
    net = _chain(5, 7.5)
    line = make_line(net, "L1", ["e1", "e2", "e3", "e4"], headways=(5, 10, 15, 20, 30))
    costs = CostParameters(
        **_EXAMPLE_RATES, vehicle_cost=100.0, line_fixed_cost=0.0, vehicle_capacity=50.0, fare=10.0
    )
    return Instance(net, (line,), (_od("S1", "S5", 150.0),), costs, thresholds=ThresholdRule(fixed=42.0))


def rigid_gap_example() -> Instance:
    """A short and a long line, each the only way to serve one OD.

    With fixed demand both lines must run, and the long one runs at its
    cheap 30-minute headway, which passengers do not accept (55 against a
    threshold of 45). Under service-dependent demand that trip is dropped.
    """
    stops = (Stop("A"), Stop("B"), Stop("C"))
    edges = (Edge("AB", "A", "B", 5.0), Edge("BC", "B", "C", 30.0))
    net = PublicTransportNetwork(stops, edges)
    near = make_line(net, "NEAR", ["AB"], headways=(5, 10))
    far = make_line(net, "FAR", ["BC"], headways=(10, 30))
    costs = CostParameters(
        **_EXAMPLE_RATES, vehicle_cost=1000.0, line_fixed_cost=0.0, vehicle_capacity=100.0, fare=0.0
    )
    od = (_od("A", "B", 100.0), _od("B", "C", 100.0))
    return Instance(net, (near, far), od, costs, thresholds=ThresholdRule(fixed=45.0))


# --------------------------------------------------------------------------
# random tiny instances


_HEADWAY_POOL = (2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 15.0, 20.0, 30.0)


def random_instance(
    seed: int | np.random.Generator,
    max_stops: int = 6,
    max_lines: int = 3,
    max_headways: int = 4,
    max_ods: int = 5,
    fixed_threshold: Optional[float] = None,
) -> Instance:
    """Tiny random instance: a connected network, up to three lines and five ODs."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(rng.integers(3, max_stops + 1))
    names = [f"s{i}" for i in range(n)]
    tree = nx.random_labeled_tree(n, seed=int(rng.integers(2**31)))
    pairs = {tuple(sorted(e)) for e in tree.edges}
    for _ in range(int(rng.integers(0, 3))):
        a, b = sorted(rng.choice(n, size=2, replace=False).tolist())
        pairs.add((a, b))
    edges = tuple(
        Edge(f"e{a}_{b}", names[a], names[b], float(rng.integers(2, 11))) for a, b in sorted(pairs)
    )
    net = PublicTransportNetwork(tuple(Stop(s) for s in names), edges)
    edge_of = {frozenset((e.u, e.v)): e.id for e in edges}

    lines = []
    n_lines = int(rng.integers(1, max_lines + 1))
    g = net.graph
    attempts = 0
    while len(lines) < n_lines and attempts < 50:
        attempts += 1
        a, b = rng.choice(names, size=2, replace=False).tolist()
        # random detours so lines do not all follow shortest paths
        h = g.copy()
        nx.set_edge_attributes(h, {e: float(rng.uniform(0.5, 2.0)) for e in h.edges}, "w")
        stops = nx.shortest_path(h, a, b, weight="w")
        eids = [edge_of[frozenset((u, v))] for u, v in zip(stops, stops[1:])]
        if any(tuple(l.edge_sequence) in (tuple(eids), tuple(reversed(eids))) for l in lines) and rng.random() < 0.7:
            continue
        k = int(rng.integers(1, max_headways + 1))
        hs = sorted(rng.choice(_HEADWAY_POOL, size=k, replace=False).tolist())
        lines.append(make_line(net, f"L{len(lines) + 1}", eids, headways=hs, turnaround=float(rng.choice([0.0, 4.0, 10.0]))))

    od = []
    seen = set()
    served = sorted({s for l in lines for s in l.stop_sequence})
    for _ in range(int(rng.integers(1, max_ods + 1))):
        # mostly trips the pool can serve, sometimes anything
        pool = served if rng.random() < 0.85 else names
        a, b = rng.choice(pool, size=2, replace=False).tolist()
        if (a, b) in seen:
            continue
        seen.add((a, b))
        demand = float(rng.integers(1, 300)) if rng.random() > 0.1 else 0.0
        od.append(_od(a, b, demand))

    scale = float(rng.uniform(0.5, 3.0))
    costs = CostParameters(
        ivt_rate=119.0 * scale,
        perceived_wait_rate=238.0 * scale,
        hidden_wait_rate=95.0 * scale,
        perceived_wait_cap=float(rng.choice([3.0, 5.0, 10.0])),
        transfer_wait_rate=179.0 * scale,
        transfer_penalty=float(rng.uniform(0.0, 20.0)),
        vehicle_cost=float(rng.uniform(50.0, 800.0)),
        line_fixed_cost=float(rng.choice([0.0, rng.uniform(0.0, 1000.0)])),
        vehicle_capacity=float(rng.choice([20.0, 40.0, 60.0, 100.0])),
        fare=float(rng.uniform(20.0, 80.0)) if rng.random() < 0.85 else 0.0,
        lam=float(rng.choice([0.5, 1.0, 2.0])),
    )
    rule = ThresholdRule(
        cap_factor=float(rng.uniform(1.5, 3.0)),
        base_factor=float(rng.uniform(1.0, 1.5)),
        fixed=fixed_threshold,
    )
    return Instance(net, tuple(lines), tuple(od), costs, thresholds=rule)


def total_headways(instance: Instance) -> int:
    return sum(len(l.headways) for l in instance.lines)
