import itertools
import math

import pytest

from oracles import brute_force_paths, dijkstra
from test_cgn import figure_one
from lineplan.cgn import build_cgn
from lineplan.instance import CostParameters, Edge, Instance, ODPair, PublicTransportNetwork, Stop, ThresholdRule, make_line
from lineplan.paths import (
    RIGID,
    SERVICE,
    PassengerPath,
    PathExplosionError,
    dominates,
    generate_paths,
    parse_signature,
    read_pathset,
    restrict_paths,
    shortest_ptn_time,
    signature_cost,
    signature_key,
    threshold,
    write_pathset,
)
from lineplan.synthetic import random_instance, rigid_gap_example, single_line_example, transfer_example


def _net(edges, stops):
    return PublicTransportNetwork(tuple(Stop(s) for s in stops), tuple(Edge(*e) for e in edges))


# --------------------------------------------------------------------------
# shortest times and thresholds


def test_shortest_time_ex1():
    inst = single_line_example()
    assert shortest_ptn_time(inst, inst.od[0]) == 30.0


def test_shortest_time_one_edge():
    net = _net([("e", "a", "b", 3.0)], "ab")
    inst = Instance(net, (make_line(net, "L", ["e"]),), (ODPair("a>b", "a", "b", 1.0),))
    assert shortest_ptn_time(inst, inst.od[0]) == 3.0


def test_disconnected_od_gets_only_the_alternative():
    net = _net([("e", "a", "b", 3.0)], "abc")
    with pytest.warns(UserWarning):
        inst = Instance(net, (make_line(net, "L", ["e"]),), (ODPair("a>c", "a", "c", 5.0),))
    assert shortest_ptn_time(inst, inst.od[0]) is None
    ps = generate_paths(inst)
    assert [p.alternative for p in ps.paths] == [True]
    assert not ps.has_network_path("a>c")


def _default_rate_instance(t_min):
    net = _net([("e", "a", "b", t_min)], "ab")
    return Instance(net, (make_line(net, "L", ["e"]),), (ODPair("a>b", "a", "b", 1.0),))


def test_threshold_with_default_rates():
    inst = _default_rate_instance(10.0)
    tau = 27.75 + 12 + 10 * 179 / 60
    assert tau == pytest.approx(69.58, abs=0.01)
    t_min = 100 * 60 / 119  # ride cost 100
    assert threshold(inst, t_min) == pytest.approx(min(300, 125 + tau), rel=1e-12)
    assert threshold(inst, t_min) == pytest.approx(194.58, abs=0.01)


def test_threshold_without_waiting_costs():
    inst = _default_rate_instance(10.0)
    free = inst.with_costs(perceived_wait_rate=0.0, hidden_wait_rate=0.0, transfer_wait_rate=0.0, transfer_penalty=0.0)
    assert threshold(free, 30.0) == pytest.approx(1.25 * 30 * 119 / 60, rel=1e-12)


def test_fixed_threshold_overrides_formula():
    inst = single_line_example()
    assert threshold(inst, 30.0) == 1.0e6


@pytest.mark.parametrize("seed", range(30))
def test_shortest_time_matches_dijkstra(seed):
    inst = random_instance(seed)
    for od in inst.od:
        assert shortest_ptn_time(inst, od) == pytest.approx(dijkstra(inst, od.origin, od.destination))


# --------------------------------------------------------------------------
# generation


def test_ex1_has_one_path_per_headway():
    ps = generate_paths(single_line_example())
    costs = [p.cost for p in ps.paths if not p.alternative]
    assert costs == [35.0, 40.0, 45.0, 50.0, 55.0]
    assert [p.usages for p in ps.paths if not p.alternative] == [(("L1", h),) for h in (5.0, 10.0, 15.0, 20.0, 30.0)]
    assert sum(p.alternative for p in ps.paths) == 1
    assert ps.paths[ps.alternative["S1>S5"]].cost == 1.0e6


def test_ex1_tripled_costs():
    ps = generate_paths(single_line_example(tripled=True))
    assert [p.cost for p in ps.paths if not p.alternative] == [105.0, 120.0, 135.0, 150.0, 165.0]


def test_figure_one_paths_transfer_at_stop_three():
    ps = generate_paths(figure_one())
    network = [p for p in ps.paths if not p.alternative]
    assert network
    for p in network:
        assert p.signature == (("l1", "1", "3"), ("l2", "3", "5"))
        assert p.transfers == 1 and p.lines == ("l1", "l2")


def _retransfer_instance(direct_headway):
    """Line A covers s1-s3; lines B and C cover the same edges with a change at s2."""
    net = _net([("x", "s1", "s2", 5.0), ("y", "s2", "s3", 5.0)], ["s1", "s2", "s3"])
    a = make_line(net, "A", ["x", "y"], headways=(direct_headway,))
    b = make_line(net, "B", ["x"], headways=(2,))
    c = make_line(net, "C", ["y"], headways=(2,))
    return Instance(net, (a, b, c), (ODPair("s1>s3", "s1", "s3", 10.0),), CostParameters(), thresholds=ThresholdRule(fixed=1e6))


def test_needless_transfer_over_a_direct_ride_is_removed():
    # A every 5 minutes is cheaper than changing between the two short lines
    sigs = {p.signature_text for p in generate_paths(_retransfer_instance(5)).paths if not p.alternative}
    assert sigs == {"A:s1>s3"}


def test_transfer_kept_when_it_beats_the_direct_ride():
    sigs = {p.signature_text for p in generate_paths(_retransfer_instance(10)).paths if not p.alternative}
    assert sigs == {"A:s1>s3", "B:s1>s2|C:s2>s3"}


def test_alternative_path_priced_at_threshold():
    ps = generate_paths(transfer_example())
    for od in ps.od_ids:
        alt = ps.paths[ps.alternative[od]]
        assert alt.cost == ps.threshold[od] and alt.usages == () and alt.signature_text == "*"


@pytest.mark.parametrize("seed", range(60))
def test_paths_cost_equals_arc_sum_and_respect_threshold(seed):
    inst = random_instance(seed)
    cgn = build_cgn(inst)
    ps = generate_paths(inst, cgn)
    for od in inst.od:
        idx = ps.by_od[od.id]
        assert sum(ps.paths[i].alternative for i in idx) == 1
    for p in ps.paths:
        if p.alternative:
            continue
        assert p.cost == pytest.approx(sum(cgn.arcs[a].cost for a in p.arcs), rel=1e-12)
        assert p.cost <= ps.threshold[p.od] * (1 + 1e-9) + 1e-9
        assert p.transfers <= 1
        for other in ps.by_od[p.od]:
            q = ps.paths[other]
            if q is not p and not q.alternative:
                assert not (dominates(q, p) and not dominates(p, q))


@pytest.mark.parametrize("seed", range(40))
def test_indices_consistent(seed):
    inst = random_instance(seed)
    ps = generate_paths(inst)
    for (od, l, h), idx in ps.using.items():
        assert all(ps.paths[i].od == od and (l, h) in ps.paths[i].usages for i in idx)
    for i, p in enumerate(ps.paths):
        for l, h in p.usages:
            assert i in ps.using[p.od, l, h]
    for arc, idx in ps.through_arc.items():
        assert all(arc in ps.paths[i].arcs for i in idx)
        assert ps.ivt_lines[arc] in ps.paths[idx[0]].lines


def test_dominance_keeps_a_variant_of_every_acceptable_signature():
    for seed in range(60):
        inst = random_instance(seed)
        cgn = build_cgn(inst)
        ps = generate_paths(inst, cgn)
        rigid = generate_paths(inst, cgn, mode=RIGID)
        kept = {(p.od, p.signature) for p in ps.paths}
        for i, p in enumerate(rigid.paths):
            best = min(rigid.paths[j].cost for j in rigid.by_signature.get((p.od, p.signature), [i]))
            if not p.alternative and best <= ps.threshold[p.od] and (p.od, p.signature) not in kept:
                # the whole signature may only vanish if another path dominates its cheapest variant
                cheapest = min(rigid.by_signature[p.od, p.signature], key=lambda j: rigid.paths[j].cost)
                assert any(dominates(ps.paths[j], rigid.paths[cheapest]) for j in ps.by_od[p.od] if not ps.paths[j].alternative)


# --------------------------------------------------------------------------
# rigid mode


def test_rigid_ex1_matches_service():
    inst = single_line_example()
    assert generate_paths(inst, mode=RIGID).n_network_paths == generate_paths(inst).n_network_paths == 5


def test_rigid_keeps_unacceptable_variants():
    inst = rigid_gap_example()
    rigid = generate_paths(inst, mode=RIGID)
    service = generate_paths(inst)
    far = lambda ps: sorted(p.cost for p in ps.paths if p.lines == ("FAR",))  # noqa: E731
    assert far(service) == [40.0]
    assert far(rigid) == [40.0, 55.0]
    assert not any(rigid.in_model(rigid.alternative[od]) for od in rigid.od_ids)
    assert all(service.in_model(service.alternative[od]) for od in service.od_ids)


@pytest.mark.parametrize("seed", range(60))
def test_rigid_is_a_superset_of_service(seed):
    inst = random_instance(seed)
    cgn = build_cgn(inst)
    service = {p.key for p in generate_paths(inst, cgn).paths}
    rigid = generate_paths(inst, cgn, mode=RIGID)
    assert service <= {p.key for p in rigid.paths}
    assert rigid.n_network_paths >= len(service) - len(inst.od)


@pytest.mark.parametrize("seed", range(60))
def test_rigid_expands_every_headway_combination(seed):
    inst = random_instance(seed)
    cgn = build_cgn(inst)
    rigid = generate_paths(inst, cgn, mode=RIGID)
    for (od, sig), idx in rigid.by_signature.items():
        lines = [inst.line_by_id[l] for l, _, _ in sig]
        expected = set(itertools.product(*(l.headways for l in lines)))
        present = {tuple(h for _, h in rigid.paths[i].usages) for i in idx}
        assert present <= expected
        # a combination may only be missing when a retained path dominates it
        for hs in expected - present:
            ghost = PassengerPath(od, (), signature_cost(cgn, inst, sig, hs), tuple((l.id, h) for l, h in zip(lines, hs)), sig)
            assert any(dominates(rigid.paths[j], ghost) for j in rigid.by_od[od] if not rigid.paths[j].alternative)


# --------------------------------------------------------------------------
# dominance, restriction, persistence


def _path(cost, usages, od="d", sig="x"):
    return PassengerPath(od, (), cost, tuple(usages), ((sig, "a", "b"),))


def test_dominates_examples():
    p1 = _path(40, [("A", 10)])
    p2 = _path(55, [("A", 10), ("B", 10)])
    assert dominates(p1, p2) and not dominates(p2, p1)
    assert dominates(p1, p1)
    assert not dominates(_path(30, [("A", 5)]), p2)
    with pytest.raises(ValueError):
        dominates(p1, _path(40, [("A", 10)], od="other"))


def test_signature_text_round_trip():
    sig = (("L1", "a", "b"), ("L2", "b", "c"))
    assert signature_key(sig) == "L1:a>b|L2:b>c"
    assert parse_signature(signature_key(sig)) == sig
    assert parse_signature("*") == ()


def test_restrict_to_ideal_point():
    ps = generate_paths(single_line_example())
    sub = restrict_paths(ps, {"L1": [5.0]})
    assert [p.cost for p in sub.paths] == [35.0, 1.0e6]
    assert [ps.paths[i].key for i in sub.origin_index] == [p.key for p in sub.paths]


def test_restrict_empty_and_full():
    inst = transfer_example()
    ps = generate_paths(inst)
    empty = restrict_paths(ps, {})
    assert all(p.alternative for p in empty.paths) and len(empty.paths) == len(inst.od)
    full = restrict_paths(ps, {l.id: l.headways for l in inst.lines})
    assert [p.key for p in full.paths] == [p.key for p in ps.paths]


def test_pathset_file_round_trip(tmp_path):
    inst = transfer_example()
    for mode in (SERVICE, RIGID):
        ps = generate_paths(inst, mode=mode)
        write_pathset(ps, tmp_path / f"{mode}.csv")
        back = read_pathset(tmp_path / f"{mode}.csv", inst, mode=mode)
        assert [(p.key, p.cost, p.arcs) for p in back.paths] == [(p.key, p.cost, p.arcs) for p in ps.paths]
        assert back.threshold == ps.threshold
        assert (tmp_path / f"{mode}.csv").read_text().splitlines()[0] == "od;signature;headways;cost"


def test_path_cap_names_the_od():
    with pytest.raises(PathExplosionError, match="A>E"):
        generate_paths(transfer_example(), max_paths_per_od=2)


def test_stats_counts():
    stats = generate_paths(single_line_example()).stats()
    assert (stats["ods"], stats["signatures"], stats["paths"]) == (1, 1, 5)


@pytest.mark.parametrize("seed", range(25))
def test_matches_brute_force(seed):
    inst = random_instance(500 + seed, max_stops=5)
    cgn = build_cgn(inst)
    ps = generate_paths(inst, cgn)
    ref, thresholds = brute_force_paths(inst, cgn)
    for od in inst.od:
        mine = {(ps.paths[i].signature_text, ps.paths[i].usages) for i in ps.by_od[od.id] if not ps.paths[i].alternative}
        assert mine == set(ref[od.id])
        assert math.isclose(ps.threshold[od.id], thresholds[od.id], rel_tol=1e-12, abs_tol=1e-12)
