from __future__ import annotations

import pytest

from pdtsim import run
from pdtsim.engine import (
    Decision,
    Schedule,
    SimConfig,
    Simulation,
    inject_crash,
)
from pdtsim.errors import AlreadyCrashed, PlacementError, ScheduleStuck
from pdtsim.model import ProcessRef, txn_depth
from pdtsim.protocols import AlgorithmVariant
from pdtsim.scenarios import scenario_fids, scenario_solo, fids_schedule
from pdtsim.traceio import dumps_canonical

from conftest import Driver, make_scenario


def _serialize(trace):
    return "\n".join(dumps_canonical(s.to_json()) for s in trace.steps)


def test_same_seed_same_trace(base):
    scen = scenario_solo(2)
    a = run(scen.config, base, scen, Schedule("random", seed=42))
    b = run(scen.config, base, scen, Schedule("random", seed=42))
    assert _serialize(a.trace) == _serialize(b.trace)
    c = run(scen.config, base, scen, Schedule("random", seed=43))
    assert _serialize(c.trace) != _serialize(a.trace)


def test_scripted_replay_identical(base):
    scen = scenario_fids()
    sched = fids_schedule(base, scen)
    a = run(scen.config, base, scen, sched)
    b = run(scen.config, base, scen, Schedule.from_json(sched.to_json()))
    assert _serialize(a.trace) == _serialize(b.trace)


def test_single_node_readonly_solo(base):
    # One read-only transaction on one node: commits with no non-trivial prims.
    scen = make_scenario({"X": None}, {"X": [0]}, 1, 0, [("t1", 0, ["X"], [])], procs=1)
    res = run(scen.config, base, scen, Schedule("random", seed=1))
    resp = res.trace.coordinator_response("t1")
    assert resp.outcome == "commit"
    assert not any(s.kind == "prim" and s.nontrivial for s in res.trace.steps)


def test_crash_finality(base):
    scen = scenario_solo(1)
    sched = Schedule("scripted", [Decision("crash", node=1)], complete=True)
    res = run(scen.config, base, scen, sched)
    crash_i = next(s.i for s in res.trace.steps if s.kind == "crash")
    for s in res.trace.steps[crash_i + 1:]:
        assert not (s.proc is not None and s.proc.kind == "node" and s.proc.node == 1)
    assert res.trace.coordinator_response("t1").outcome == "commit"


def test_dropped_messages_get_drop_notes(base):
    scen = scenario_solo(1)
    sched = Schedule("scripted", [Decision("crash", node=0)], complete=True)
    res = run(scen.config, base, scen, sched)
    drops = [s for s in res.trace.steps if s.kind == "note" and s.tag == "drop"]
    assert drops, "sends to the crashed node must be recorded as drops"
    for s in drops:
        assert s.data["node"] == 0


def test_enabled_choices_after_read_broadcast(base):
    # A client that broadcast READ to its 3 replicas leaves exactly 3
    # delivery choices (the blocked client and idle nodes add nothing).
    scen = scenario_solo(1)
    sim = Simulation(scen.config, base, scen)
    drv = Driver(sim)
    drv.run_proc(ProcessRef.client(0))
    choices = sim.enabled_choices()
    assert len([c for c in choices if c.t == "deliver"]) == 3
    # The blocked client and the idle node processes contribute no steps;
    # the f=1 budget adds one crash choice per live node.
    assert len([c for c in choices if c.t == "step"]) == 0
    assert len([c for c in choices if c.t == "crash"]) == 3


def test_enabled_choices_empty_system(base):
    scen = make_scenario({"X": None}, {"X": [0]}, 1, 0, [], clients=1, procs=1)
    sim = Simulation(scen.config, base, scen)
    assert sim.enabled_choices() == []


def test_enabled_choices_include_crashes_within_budget(base):
    scen = scenario_solo(1)  # f = 1
    sim = Simulation(scen.config, base, scen)
    crashes = [c for c in sim.enabled_choices() if c.t == "crash"]
    assert len(crashes) == 3
    sim.apply(crashes[0])
    assert [c for c in sim.enabled_choices() if c.t == "crash"] == []


def test_schedule_stuck_on_non_enabled_decision(base):
    scen = scenario_solo(1)
    bad = Schedule("scripted", [Decision("deliver", msg=99)], complete=False)
    with pytest.raises(ScheduleStuck):
        run(scen.config, base, scen, bad)


def test_crash_budget_enforced(base):
    scen = scenario_fids()  # f = 0
    sched = Schedule("scripted", [Decision("crash", node=0)], complete=False)
    with pytest.raises(ScheduleStuck):
        run(scen.config, base, scen, sched)


def test_inject_crash_unused_node_appends_crash_only(base):
    # The item lives on node 0; node 1 holds nothing, so crashing it changes
    # nothing but the crash step itself (and the budget must allow it).
    scen = make_scenario(
        {"X": None}, {"X": [0]}, 1, 0, [("t1", 0, ["X"], [("X", "always", "v")])],
        n_nodes=2, procs=1, crash_budget=1,
    )
    plain = run(scen.config, base, scen, Schedule("fair"))
    sched = inject_crash(Schedule("scripted", []), 1, 0)
    crashed = run(scen.config, base, scen, sched)
    assert crashed.trace.steps[0].kind == "crash"
    rest = [s.to_json() for s in crashed.trace.steps[1:]]
    for rec in rest:
        rec["i"] -= 1
    assert rest == [s.to_json() for s in plain.trace.steps]


def test_inject_crash_rejects_double_crash():
    sched = Schedule("scripted", [Decision("crash", node=2)])
    with pytest.raises(AlreadyCrashed):
        inject_crash(sched, 2, 1)


def test_inject_crash_every_prefix_still_decides(base):
    # k=3, f=1: crashing any single node at any decision point leaves the
    # solo transaction decided (replay with fair completion).
    scen = scenario_solo(1)
    baseline = run(scen.config, base, scen, Schedule("fair"))
    positions = list(range(0, len(baseline.decisions) + 1, 7)) + [len(baseline.decisions)]
    for node in range(3):
        for pos in positions:
            sched = Schedule(
                "scripted", list(baseline.decisions[:pos]) + [Decision("crash", node=node)],
                tolerant=True, complete=True,
            )
            res = run(scen.config, base, scen, sched)
            assert res.trace.decided("t1"), f"undecided after crash of {node} at {pos}"


def test_synchrony_bound_respected(base):
    scen = scenario_solo(3)
    assert scen.config.gst == 0
    res = run(scen.config, base, scen, Schedule("fair"))
    assert res.max_delivery_lag <= scen.config.delta
    res = run(scen.config, base, scen, Schedule("random", seed=9))
    assert res.max_delivery_lag <= scen.config.delta


def test_config_validation():
    with pytest.raises(PlacementError):
        SimConfig(n_nodes=0)
    with pytest.raises(PlacementError):
        SimConfig(n_nodes=1, delta=0)


def test_placement_maps_only_known_nodes(base):
    with pytest.raises(PlacementError):
        make_scenario({"X": None}, {"X": [5]}, 1, 0, [], n_nodes=2, clients=1)
