"""Scenario library: placements, transaction programs, and the builtin
adversarial schedules that drive the two counterexample executions.

The builtin schedules are not hand-written decision lists; a deterministic
builder drives a simulation through the counterexample phases (run every
transaction to the brink of learning its read value, then order validation
deliveries per node) and the recorded decisions become a replayable script.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from .engine import (
    ASYNC_GST,
    Decision,
    RunResult,
    Schedule,
    SimConfig,
    Simulation,
    inject_crash,
)
from .errors import PlacementError
from .model import DataPlacement, ProcessRef, TransactionProgram

BOTTOM = None  # the uninitialized item value


@dataclass
class Scenario:
    name: str
    placement: DataPlacement
    transactions: list[TransactionProgram]
    config: SimConfig
    # Crashes the engine will allow; defaults to the placement's f. A scenario
    # may raise it to crash nodes that hold none of its replicas.
    crash_budget_override: int | None = None

    def __post_init__(self):
        ids = [t.txn_id for t in self.transactions]
        if len(set(ids)) != len(ids):
            raise PlacementError(f"duplicate transaction ids in scenario {self.name!r}")
        self.placement.validate_against(self.config.n_nodes)
        for t in self.transactions:
            for item in t.data_set():
                if item not in self.placement.initials:
                    raise PlacementError(f"{t.txn_id} touches unknown item {item!r}")
            for target, cond, value in t.write_rule:
                if cond == "allReadsInitial" and value == self.placement.initials[target]:
                    raise PlacementError(
                        f"{t.txn_id} must write a non-initial value to {target!r}"
                    )
            if not (0 <= t.client < self.config.n_clients):
                raise PlacementError(f"{t.txn_id} assigned to unknown client {t.client}")

    @property
    def crash_budget(self) -> int:
        if self.crash_budget_override is not None:
            return self.crash_budget_override
        return self.placement.f

    def local_items(self, node: int) -> list[str]:
        return sorted(i for i, grp in self.placement.groups.items() if node in grp)

    def transaction(self, txn_id: str) -> TransactionProgram:
        for t in self.transactions:
            if t.txn_id == txn_id:
                return t
        raise KeyError(txn_id)

    def to_json(self) -> dict:
        d = self.placement.to_json()
        d["name"] = self.name
        d["transactions"] = [t.to_json() for t in self.transactions]
        d["sim"] = self.config.to_json()
        return d

    @staticmethod
    def from_json(d: dict) -> "Scenario":
        placement = DataPlacement.from_json(d)
        txns = [TransactionProgram.from_json(t) for t in d["transactions"]]
        if "sim" in d:
            config = SimConfig.from_json(d["sim"])
        else:
            n_nodes = max(n for grp in placement.groups.values() for n in grp) + 1
            n_clients = max((t.client for t in txns), default=0) + 1
            config = SimConfig(
                n_nodes=n_nodes,
                procs_per_node=max(1, len(txns)),
                n_clients=n_clients,
            )
        return Scenario(d.get("name", "scenario"), placement, txns, config)


# ---------------------------------------------------------------------------
# Builtin scenarios
# ---------------------------------------------------------------------------


def scenario_fids() -> Scenario:
    """Two items sharded on two nodes; each transaction reads one item and,
    if it saw the initial value, writes the other."""
    placement = DataPlacement(
        initials={"X1": BOTTOM, "X2": BOTTOM},
        groups={"X1": (0,), "X2": (1,)},
        k=1,
        f=0,
    )
    txns = [
        TransactionProgram("t1", 0, ["X1"], [("X2", "allReadsInitial", "v2")]),
        TransactionProgram("t2", 1, ["X2"], [("X1", "allReadsInitial", "v1")]),
    ]
    config = SimConfig(n_nodes=2, procs_per_node=2, n_clients=2, delta=64, gst=ASYNC_GST)
    return Scenario("fids", placement, txns, config)


def scenario_fids_replicated() -> Scenario:
    """The same two transactions with both items replicated on both nodes.
    This is the placement the no-seamless variant requires."""
    placement = DataPlacement(
        initials={"X1": BOTTOM, "X2": BOTTOM},
        groups={"X1": (0, 1), "X2": (0, 1)},
        k=2,
        f=0,
    )
    txns = [
        TransactionProgram("t1", 0, ["X1"], [("X2", "allReadsInitial", "v2")]),
        TransactionProgram("t2", 1, ["X2"], [("X1", "allReadsInitial", "v1")]),
    ]
    config = SimConfig(n_nodes=2, procs_per_node=2, n_clients=2, delta=64, gst=ASYNC_GST)
    return Scenario("fids-replicated", placement, txns, config)


RFIDS_ITEMS = ("X1", "X2", "X3")


def _rfids_placement() -> DataPlacement:
    return DataPlacement(
        initials={i: BOTTOM for i in RFIDS_ITEMS},
        groups={i: (0, 1, 2) for i in RFIDS_ITEMS},
        k=3,
        f=1,
    )


def _rfids_program(i: int) -> TransactionProgram:
    # T_i reads X_{(i mod 3)+1}; writes X_i if the read returned the initial value.
    read = f"X{(i % 3) + 1}"
    return TransactionProgram(f"t{i}", i - 1, [read], [(f"X{i}", "allReadsInitial", f"v{i}")])


def scenario_rfids() -> Scenario:
    """Three items replicated on three nodes; three transactions whose
    read/write sets chain into a cycle."""
    placement = _rfids_placement()
    txns = [_rfids_program(i) for i in (1, 2, 3)]
    config = SimConfig(n_nodes=3, procs_per_node=3, n_clients=3, delta=64, gst=ASYNC_GST)
    return Scenario("rfids", placement, txns, config)


def scenario_rfids_solo(i: int) -> Scenario:
    """Just T_i from the replicated cycle, for the crash-injected solo runs."""
    placement = _rfids_placement()
    prog = _rfids_program(i)
    prog = TransactionProgram(prog.txn_id, 0, prog.read_set, prog.write_rule)
    config = SimConfig(n_nodes=3, procs_per_node=1, n_clients=1, delta=64, gst=0)
    return Scenario(f"rfids-solo-{i}", placement, [prog], config)


def scenario_solo(reads: int) -> Scenario:
    """One client transaction with `reads` read items and one written item,
    replicated k=3 f=1, synchronous. Solo depth of the base algorithm on this
    scenario is 2*reads + 2 (one round trip per read, one to validate)."""
    items = {f"X{j}": BOTTOM for j in range(1, reads + 1)}
    items["Y"] = BOTTOM
    placement = DataPlacement(
        initials=items,
        groups={i: (0, 1, 2) for i in items},
        k=3,
        f=1,
    )
    prog = TransactionProgram(
        "t1", 0, [f"X{j}" for j in range(1, reads + 1)], [("Y", "allReadsInitial", "w")]
    )
    config = SimConfig(n_nodes=3, procs_per_node=1, n_clients=1, delta=64, gst=0)
    return Scenario(f"solo-r{reads}", placement, [prog], config)


def scenario_disjoint_writers() -> Scenario:
    """Two write-only transactions on disjoint items, replicated everywhere.
    Disjoint data sets make any contention a DAP/DDAP violation."""
    placement = DataPlacement(
        initials={"X1": BOTTOM, "X2": BOTTOM},
        groups={"X1": (0, 1, 2), "X2": (0, 1, 2)},
        k=3,
        f=1,
    )
    txns = [
        TransactionProgram("w1", 0, [], [("X1", "always", "a")]),
        TransactionProgram("w2", 1, [], [("X2", "always", "b")]),
    ]
    config = SimConfig(n_nodes=3, procs_per_node=2, n_clients=2, delta=64, gst=0)
    return Scenario("disjoint-writers", placement, txns, config)


def scenario_readonly_pair() -> Scenario:
    """A read-only transaction concurrent with a writer on another item."""
    placement = DataPlacement(
        initials={"X1": BOTTOM, "X2": BOTTOM},
        groups={"X1": (0, 1, 2), "X2": (0, 1, 2)},
        k=3,
        f=1,
    )
    txns = [
        TransactionProgram("r1", 0, ["X1"], []),
        TransactionProgram("w2", 1, ["X2"], [("X1", "never", None), ("X2", "always", "b")]),
    ]
    config = SimConfig(n_nodes=3, procs_per_node=2, n_clients=2, delta=64, gst=0)
    return Scenario("readonly-pair", placement, txns, config)


BUILTIN_SCENARIOS = {
    "fids": scenario_fids,
    "rfids": scenario_rfids,
    "fids-replicated": scenario_fids_replicated,
    "disjoint-writers": scenario_disjoint_writers,
    "readonly-pair": scenario_readonly_pair,
    "solo-r0": lambda: scenario_solo(0),
    "solo-r1": lambda: scenario_solo(1),
    "solo-r2": lambda: scenario_solo(2),
    "solo-r3": lambda: scenario_solo(3),
}


def get_scenario(name: str) -> Scenario:
    key = name.removeprefix("builtin:")
    if key not in BUILTIN_SCENARIOS:
        raise PlacementError(f"unknown builtin scenario {name!r}")
    return BUILTIN_SCENARIOS[key]()


# ---------------------------------------------------------------------------
# Counterexample schedule builder
# ---------------------------------------------------------------------------


class _Driver:
    """Applies decisions to a simulation while recording them."""

    def __init__(self, sim: Simulation, pin: dict[str, int], blocked: set[tuple[str, int]]):
        self.sim = sim
        self.pin = pin
        self.blocked = blocked

    def is_blocked(self, msg) -> bool:
        node = msg.dst[1] if msg.dst[0] == "node" else msg.src.node
        return (msg.txn, node) in self.blocked

    def step(self, ref: ProcessRef) -> None:
        self.sim.apply(Decision("step", proc=ref))

    def deliver(self, msg) -> None:
        pin = self.pin.get(msg.txn) if msg.dst[0] == "node" else None
        self.sim.apply(Decision("deliver", msg=msg.msg_id, pin=pin))

    def steppable(self, ref: ProcessRef) -> bool:
        return self.sim._steppable(self.sim.procs[ref])

    def run_client(self, client: int) -> None:
        ref = ProcessRef.client(client)
        while self.steppable(ref):
            self.step(ref)

    def run_nodes(self) -> None:
        while True:
            work = [
                r for r in sorted(self.sim.procs, key=ProcessRef.sort_key)
                if r.kind == "node" and self.steppable(r)
            ]
            if not work:
                return
            for r in work:
                self.step(r)

    def inflight_sorted(self):
        return [self.sim.inflight[m] for m in sorted(self.sim.inflight)]


def build_counterexample_schedule(
    config: SimConfig,
    variant,
    scenario: Scenario,
    txn_order: list[str],
    validate_order: dict[int, list[str]],
    blocked: Iterable[tuple[str, int]] = (),
) -> tuple[Schedule, RunResult]:
    """Drive the two-phase adversarial construction and record it as a script.

    Phase 1 runs every transaction, withholding the quorum-completing read
    reply, so nobody learns its read value. Phase 2 releases those replies in
    txn order. The drain phase then delivers node-bound messages per the
    given per-node transaction priority, running each handler to completion,
    with (txn, node) pairs in `blocked` never delivered at all.
    """
    sim = Simulation(config, variant, scenario, granularity="exact")
    drv = _Driver(sim, {t: i for i, t in enumerate(txn_order)}, set(blocked))
    quorum = scenario.placement.k - scenario.placement.f
    client_of = {t.txn_id: t.client for t in scenario.transactions}
    for t in scenario.transactions:
        if len(t.read_set) != 1:
            raise PlacementError("counterexample builder expects single-read transactions")

    # Phase 1: invoke everyone, serve reads, withhold the deciding replies.
    for t in txn_order:
        drv.run_client(client_of[t])
    replies_released = {t: 0 for t in txn_order}
    progress = True
    while progress:
        progress = False
        drv.run_nodes()
        for msg in drv.inflight_sorted():
            if drv.is_blocked(msg):
                continue
            kind = msg.payload["kind"]
            if msg.dst[0] == "node" and kind == "read":
                drv.deliver(msg)
                drv.run_nodes()
                progress = True
                break
            if (
                msg.dst[0] == "client"
                and kind == "readReply"
                and replies_released[msg.txn] < quorum - 1
            ):
                drv.deliver(msg)
                replies_released[msg.txn] += 1
                progress = True
                break

    # Phase 2: let each transaction learn its value and send its validations.
    for t in txn_order:
        for msg in drv.inflight_sorted():
            if msg.txn == t and msg.dst[0] == "client" and not drv.is_blocked(msg):
                if msg.payload["kind"] == "readReply":
                    drv.deliver(msg)
                    break
        drv.run_client(client_of[t])

    # Drain: nodes consume messages in the per-node priority order, each
    # handler running to completion; clients receive in send order.
    while True:
        drv.run_nodes()
        stepped = False
        for t in txn_order:
            ref = ProcessRef.client(client_of[t])
            while drv.steppable(ref):
                drv.step(ref)
                stepped = True
        if stepped:
            continue
        candidates = [m for m in drv.inflight_sorted() if not drv.is_blocked(m)]
        node_msgs = [m for m in candidates if m.dst[0] == "node"]
        if node_msgs:
            best = min(
                node_msgs,
                key=lambda m: (
                    m.dst[1],
                    validate_order.get(m.dst[1], txn_order).index(m.txn)
                    if m.txn in validate_order.get(m.dst[1], txn_order)
                    else len(txn_order),
                    m.msg_id,
                ),
            )
            drv.deliver(best)
            continue
        client_msgs = [m for m in candidates if m.dst[0] == "client"]
        if client_msgs:
            best = min(
                client_msgs,
                key=lambda m: (drv.pin.get(m.txn, len(txn_order)), m.msg_id),
            )
            drv.deliver(best)
            continue
        break

    sim.finish()
    schedule = Schedule("scripted", list(sim.decisions_taken), granularity="exact")
    return schedule, sim.result(schedule.to_json())


def fids_schedule(variant, scenario: Scenario | None = None) -> Schedule:
    scenario = scenario or scenario_fids()
    schedule, _ = build_counterexample_schedule(
        scenario.config, variant, scenario,
        txn_order=["t1", "t2"],
        validate_order={0: ["t1", "t2"], 1: ["t2", "t1"]},
    )
    return schedule


def rfids_schedule(variant, scenario: Scenario | None = None) -> Schedule:
    # Node i never talks to t_{i+1}'s handlers; write order per node follows
    # the replicated-cycle construction.
    scenario = scenario or scenario_rfids()
    schedule, _ = build_counterexample_schedule(
        scenario.config, variant, scenario,
        txn_order=["t1", "t2", "t3"],
        validate_order={0: ["t2", "t3"], 1: ["t3", "t1"], 2: ["t1", "t2"]},
        blocked={("t1", 0), ("t2", 1), ("t3", 2)},
    )
    return schedule


def crash_injected_solo_schedule(node: int) -> Schedule:
    """A node crashes before anything runs; the fair policy does the rest."""
    return inject_crash(Schedule("scripted", []), node, 0)


def builtin_schedule(name: str, variant, scenario: Scenario | None = None) -> Schedule:
    key = name.removeprefix("builtin:")
    if key == "fids":
        return fids_schedule(variant, scenario)
    if key == "rfids":
        return rfids_schedule(variant, scenario)
    raise PlacementError(f"unknown builtin schedule {name!r}")
