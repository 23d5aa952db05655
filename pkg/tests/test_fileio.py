import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lineplan.fileio import (
    InstanceFileError,
    load_instance,
    read_concept,
    save_instance,
    solution_record,
    write_solution,
)
from lineplan.instance import VehicleType
from lineplan.milp import solve_direct
from lineplan.paths import generate_paths
from lineplan.synthetic import random_instance, single_line_example, transfer_example

FILES = ("stops.csv", "edges.csv", "od.csv", "pool.csv", "config.json")


def snapshot(d):
    return {f: (d / f).read_bytes() for f in FILES}


@pytest.fixture
def ex1_dir(tmp_path):
    d = tmp_path / "ex1"
    save_instance(single_line_example(), d)
    return d


def test_ex1_directory(ex1_dir):
    inst = load_instance(ex1_dir)
    assert len(inst.lines) == 1 and len(inst.od) == 1
    line = inst.lines[0]
    assert line.stop_sequence == ("S1", "S2", "S3", "S4", "S5") and line.roundtrip_time == 60.0
    assert line.candidate_headways == (5.0, 10.0, 15.0, 20.0, 30.0)
    c = inst.costs
    assert (c.vehicle_cost, c.line_fixed_cost, c.vehicle_capacity, c.fare, c.lam) == (2000.0, 0.0, 50.0, 0.0, 1.0)
    assert math.isinf(c.budget) and inst.od[0].demand == 150.0


def test_ex1_file_layout(ex1_dir):
    assert (ex1_dir / "pool.csv").read_text().splitlines() == [
        "line_id;edge_id;position", "L1;e1;1", "L1;e2;2", "L1;e3;3", "L1;e4;4",
    ]
    assert (ex1_dir / "od.csv").read_text() == "origin;destination;passengers\nS1;S5;150\n"
    cfg = json.loads((ex1_dir / "config.json").read_text())
    assert cfg["budget"] is None and cfg["threshold_fixed"] == 1000000


def test_round_trip_is_byte_identical(ex1_dir, tmp_path):
    again = tmp_path / "again"
    save_instance(load_instance(ex1_dir), again)
    assert snapshot(again) == snapshot(ex1_dir)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_random_round_trip(tmp_path_factory, seed):
    base = tmp_path_factory.mktemp("rt")
    inst = random_instance(seed)
    save_instance(inst, base / "a")
    loaded = load_instance(base / "a")
    save_instance(loaded, base / "b")
    assert snapshot(base / "a") == snapshot(base / "b")
    assert loaded.costs == inst.costs and loaded.thresholds == inst.thresholds
    assert [(l.id, l.edge_sequence, l.candidate_headways, l.turnaround) for l in loaded.lines] == [
        (l.id, l.edge_sequence, l.candidate_headways, l.turnaround) for l in inst.lines
    ]
    assert loaded.od == inst.od


def test_vehicle_types_and_budget_round_trip(tmp_path):
    inst = transfer_example().with_costs(budget=1234.5)
    inst = type(inst)(inst.network, inst.lines, inst.od, inst.costs,
                      (VehicleType("bus", 300.0, 80.0), VehicleType("minibus", 120.0, 25.0)), inst.thresholds)
    save_instance(inst, tmp_path / "a")
    loaded = load_instance(tmp_path / "a")
    assert loaded.costs.budget == 1234.5
    assert loaded.vehicle_types == inst.vehicle_types


# --------------------------------------------------------------------------
# errors


def _edit(d, name, text):
    (d / name).write_text(text, encoding="utf-8")


def test_empty_od_file(ex1_dir):
    _edit(ex1_dir, "od.csv", "origin;destination;passengers\n")
    with pytest.raises(InstanceFileError, match="no OD pairs"):
        load_instance(ex1_dir)


def test_unknown_edge_is_named_with_line_context(ex1_dir):
    _edit(ex1_dir, "pool.csv", "line_id;edge_id;position\nL1;e1;1\nL1;e9;2\n")
    with pytest.raises(InstanceFileError, match=r"pool\.csv:3: unknown edge 'e9'"):
        load_instance(ex1_dir)


@pytest.mark.parametrize(
    "name, text, message",
    [
        ("edges.csv", "id;from;to;travel_time_min\ne1;S1;S2;fast\n", r"edges\.csv:2: field 'travel_time_min'"),
        ("edges.csv", "id;from;travel_time_min\ne1;S1;7.5\n", r"edges\.csv:1: missing column"),
        ("od.csv", "origin;destination;passengers\nS1;S9;10\n", r"od\.csv:2: unknown stop 'S9'"),
        ("od.csv", "origin;destination;passengers\nS1;S5;-3\n", r"od\.csv:2:"),
        ("od.csv", "origin;destination;passengers\nS1;S5\n", r"od\.csv:2: wrong number of fields"),
        ("pool.csv", "line_id;edge_id;position\nL1;e1;1\nL1;e3;2\n", r"pool\.csv:2: .*not adjacent"),
        ("pool.csv", "line_id;edge_id;position\nL1;e1;1\nL1;e2;1\n", r"repeats a position"),
        ("pool.csv", "line_id;edge_id;position\n", r"no lines"),
        ("config.json", "{not json", r"config\.json"),
        ("config.json", '{"speed": 3}', r"unknown key"),
        ("config.json", '{"vehicle_cost": -1}', r"vehicle_cost"),
        ("config.json", '{"line_headways": {"L7": [5]}}', r"unknown line"),
    ],
)
def test_malformed_inputs(ex1_dir, name, text, message):
    _edit(ex1_dir, name, text)
    with pytest.raises(InstanceFileError, match=message):
        load_instance(ex1_dir)


@pytest.mark.parametrize("name", FILES)
def test_missing_file(ex1_dir, name):
    (ex1_dir / name).unlink()
    with pytest.raises(InstanceFileError, match="missing file"):
        load_instance(ex1_dir)


def test_not_a_directory(tmp_path):
    with pytest.raises(InstanceFileError, match="not a directory"):
        load_instance(tmp_path / "nothing")


# --------------------------------------------------------------------------
# solutions and concepts


def test_solution_record_ex1():
    inst = single_line_example()
    sol = solve_direct(inst, generate_paths(inst))
    rec = solution_record(sol, inst)
    assert rec["objective"] == 13500.0 and rec["status"] == "optimal"
    assert rec["opened"] == [{"line": "L1", "headway": 20.0, "vehicles": 3.0, "vehicles_by_type": {inst.fleet[0].id: 3.0}}]
    assert rec["flows"] == [{"od": "S1>S5", "signature": rec["flows"][0]["signature"], "headways": [20.0],
                             "share": 1.0, "passengers": 150.0, "cost": 50.0}]


def test_solution_file_feeds_read_concept(tmp_path):
    inst = single_line_example()
    write_solution(solve_direct(inst, generate_paths(inst)), inst, tmp_path / "s.json")
    c = read_concept(tmp_path / "s.json", inst)
    assert c.headways == {"L1": 20.0} and c.vehicles == {"L1": 3.0}


def test_hand_written_concept_defaults_vehicles(tmp_path):
    inst = single_line_example()
    (tmp_path / "c.json").write_text('{"opened": [{"line": "L1", "headway": 15}]}')
    assert read_concept(tmp_path / "c.json", inst).vehicles == {"L1": 4.0}


@pytest.mark.parametrize(
    "text, message",
    [
        ('{"opened": [{"line": "L1"}]}', "needs 'line' and 'headway'"),
        ('{"opened": [{"line": "L9", "headway": 5}]}', "unknown line"),
        ('{"opened": [{"line": "L1", "headway": 7}]}', "operative headway"),
        ("[", "c.json"),
    ],
)
def test_bad_concepts(tmp_path, text, message):
    (tmp_path / "c.json").write_text(text)
    with pytest.raises(InstanceFileError, match=message):
        read_concept(tmp_path / "c.json", single_line_example())


@pytest.mark.parametrize("name", ["ex1", "transfer", "rigid_gap"])
def test_shipped_instances_round_trip(tmp_path, name):
    d = Path(__file__).resolve().parents[1] / "instances" / name
    save_instance(load_instance(d), tmp_path / name)
    assert snapshot(tmp_path / name) == snapshot(d)


def test_shipped_ex1_matches_builder():
    d = Path(__file__).resolve().parents[1] / "instances" / "ex1"
    inst, ref = load_instance(d), single_line_example()
    assert inst.costs == ref.costs and inst.od == ref.od and inst.lines[0].profile == ref.lines[0].profile
