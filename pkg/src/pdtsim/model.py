"""Trace vocabulary and analysis: steps, transactions, causality, depth, histories.

Everything in here is a pure function over immutable, already-recorded traces;
nothing mutates engine state. Step records mirror the JSON-lines wire format
one to one (camelCase keys inside ``fields``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import MalformedResponse, OrphanStep, PlacementError, Undecided

# Step kinds as they appear on the wire.
INVOKE = "invoke"
RESPONSE = "response"
PRIM = "prim"
SEND = "send"
RECV = "recv"
CRASH = "crash"
NOTE = "note"

VALUE_LEARNED = "valueLearned"


@dataclass(frozen=True)
class ProcessRef:
    """Identity of a client or node process. Clients have node == None."""

    kind: str  # "client" | "node"
    node: int | None
    idx: int

    def sort_key(self) -> tuple:
        return (0 if self.kind == "client" else 1, self.node if self.node is not None else -1, self.idx)

    def to_json(self) -> dict:
        return {"kind": self.kind, "node": self.node, "idx": self.idx}

    @staticmethod
    def from_json(d: dict) -> "ProcessRef":
        return ProcessRef(d["kind"], d["node"], d["idx"])

    @staticmethod
    def client(idx: int) -> "ProcessRef":
        return ProcessRef("client", None, idx)

    @staticmethod
    def node_proc(node: int, idx: int) -> "ProcessRef":
        return ProcessRef("node", node, idx)


@dataclass
class Step:
    """One trace record. ``fields`` holds the kind-specific wire fields."""

    i: int
    kind: str
    proc: ProcessRef | None
    txn: str | None
    fields: dict = field(default_factory=dict)

    # Common kind-specific accessors; absent fields read as None.
    @property
    def obj(self):
        return self.fields.get("obj")

    @property
    def op(self):
        return self.fields.get("op")

    @property
    def nontrivial(self) -> bool:
        return bool(self.fields.get("nontrivial"))

    @property
    def msg_id(self):
        return self.fields.get("msgId")

    @property
    def payload(self):
        return self.fields.get("payload")

    @property
    def outcome(self):
        return self.fields.get("outcome")

    @property
    def read_set(self):
        return self.fields.get("readSet")

    @property
    def write_set(self):
        return self.fields.get("writeSet")

    @property
    def tag(self):
        return self.fields.get("tag")

    @property
    def data(self):
        return self.fields.get("data")

    def to_json(self) -> dict:
        rec: dict[str, Any] = {
            "i": self.i,
            "kind": self.kind,
            "proc": self.proc.to_json() if self.proc else None,
            "txn": self.txn,
        }
        rec.update(self.fields)
        return rec

    @staticmethod
    def from_json(rec: dict) -> "Step":
        fields = {k: v for k, v in rec.items() if k not in ("i", "kind", "proc", "txn")}
        proc = ProcessRef.from_json(rec["proc"]) if rec.get("proc") else None
        return Step(rec["i"], rec["kind"], proc, rec.get("txn"), fields)


@dataclass
class TransactionProgram:
    """Declarative transaction: ordered read set plus a conditional write rule.

    Each write rule entry is (target item, condition, value); condition is one
    of "always", "allReadsInitial", "never". "allReadsInitial" fires only when
    every recorded read returned its item's initial value.
    """

    txn_id: str
    client: int
    read_set: list[str]
    write_rule: list[tuple[str, str, Any]]

    CONDITIONS = ("always", "allReadsInitial", "never")

    def data_set(self) -> set[str]:
        # Static superset: reads plus every potential write target.
        return set(self.read_set) | {t for t, _, _ in self.write_rule}

    def writes_for(self, recorded: dict[str, Any], initials: dict[str, Any]) -> list[tuple[str, Any]]:
        """Evaluate the write rule against recorded read values."""
        all_initial = all(recorded[r] == initials[r] for r in self.read_set)
        out = []
        for target, cond, value in self.write_rule:
            if cond == "always" or (cond == "allReadsInitial" and all_initial):
                out.append((target, value))
        return out

    def to_json(self) -> dict:
        return {
            "txnId": self.txn_id,
            "client": self.client,
            "readSet": list(self.read_set),
            "writeRule": [
                {"target": t, "condition": c, "value": v} for t, c, v in self.write_rule
            ],
        }

    @staticmethod
    def from_json(d: dict) -> "TransactionProgram":
        return TransactionProgram(
            d["txnId"],
            d["client"],
            list(d["readSet"]),
            [(w["target"], w["condition"], w["value"]) for w in d["writeRule"]],
        )


@dataclass
class DataPlacement:
    """Items with initial values, their replica groups, and the k/f parameters."""

    initials: dict[str, Any]
    groups: dict[str, tuple[int, ...]]
    k: int
    f: int

    def __post_init__(self):
        for item, nodes in self.groups.items():
            if item not in self.initials:
                raise PlacementError(f"placement for unknown item {item!r}")
            if len(nodes) != self.k:
                raise PlacementError(
                    f"item {item!r} has {len(nodes)} replicas, expected k={self.k}"
                )
        if self.f < 0 or self.k < 1:
            raise PlacementError(f"bad replication parameters k={self.k} f={self.f}")
        if self.f >= 1 and 2 * (self.k - self.f) <= self.k:
            # Quorum intersection: any two (k-f) quorums of a group must share a node.
            raise PlacementError(f"f={self.f} is not < k/2 for k={self.k}")

    @property
    def items(self) -> list[str]:
        return sorted(self.initials)

    def nodes(self) -> list[int]:
        out: set[int] = set()
        for grp in self.groups.values():
            out.update(grp)
        return sorted(out)

    def validate_against(self, n_nodes: int) -> None:
        for item, grp in self.groups.items():
            for node in grp:
                if not (0 <= node < n_nodes):
                    raise PlacementError(f"item {item!r} placed on unknown node {node}")

    def to_json(self) -> dict:
        return {
            "items": [{"id": i, "initial": self.initials[i]} for i in self.items],
            "placement": {i: list(self.groups[i]) for i in self.items},
            "k": self.k,
            "f": self.f,
        }

    @staticmethod
    def from_json(d: dict) -> "DataPlacement":
        initials = {e["id"]: e["initial"] for e in d["items"]}
        groups = {i: tuple(nodes) for i, nodes in d["placement"].items()}
        return DataPlacement(initials, groups, d["k"], d["f"])


@dataclass
class ExecutionTrace:
    """Recorded execution plus references to what produced it (when known)."""

    steps: list[Step]
    scenario: Any = None  # scenarios.Scenario; loose-typed to avoid an import cycle
    algorithm: Any = None  # protocols.AlgorithmVariant
    schedule: Any = None  # json-able schedule spec
    config: Any = None  # engine.SimConfig

    def __len__(self) -> int:
        return len(self.steps)

    def txns(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.steps:
            if s.txn is not None:
                seen.setdefault(s.txn)
        return list(seen)

    def coordinator_response(self, txn: str) -> Step | None:
        for s in self.steps:
            if (
                s.kind == RESPONSE
                and s.txn == txn
                and s.proc is not None
                and s.proc.kind == "client"
                and s.outcome is not None
            ):
                return s
        return None

    def decided(self, txn: str) -> bool:
        return self.coordinator_response(txn) is not None


# ---------------------------------------------------------------------------
# Handler reconstruction
#
# Per process: an invoke opens a handler; a recv opens one if none is open
# (message or drain handler), otherwise it belongs to the open handler (a
# coordinator waiting mid-handler); a response closes the open handler. The
# engine guarantees handlers are well nested per process, so the scan is
# unambiguous.
# ---------------------------------------------------------------------------


def handler_of_steps(trace: ExecutionTrace) -> list[int | None]:
    """Map each step index to a handler id (dense ints), None for crash/engine notes."""
    out: list[int | None] = [None] * len(trace.steps)
    open_handler: dict[ProcessRef, int] = {}
    next_id = 0
    for s in trace.steps:
        if s.proc is None:
            continue
        if s.kind == INVOKE:
            open_handler[s.proc] = next_id
            next_id += 1
            out[s.i] = open_handler[s.proc]
        elif s.kind == RECV:
            if s.proc not in open_handler:
                open_handler[s.proc] = next_id
                next_id += 1
            out[s.i] = open_handler[s.proc]
        elif s.kind == RESPONSE:
            out[s.i] = open_handler.pop(s.proc)
        else:
            if s.proc in open_handler:
                out[s.i] = open_handler[s.proc]
    return out


def matching_send(trace: ExecutionTrace) -> dict[int, int]:
    """Map recv step index -> send step index, by msgId."""
    sends: dict[Any, int] = {}
    out: dict[int, int] = {}
    for s in trace.steps:
        if s.kind == SEND:
            sends[s.msg_id] = s.i
        elif s.kind == RECV:
            if s.msg_id not in sends:
                raise OrphanStep(f"recv of msgId {s.msg_id} has no matching send")
            out[s.i] = sends[s.msg_id]
    return out


def happened_before(trace: ExecutionTrace) -> set[tuple[int, int]]:
    """The smallest transitive relation from handler program order and send->recv."""
    n = len(trace.steps)
    handlers = handler_of_steps(trace)
    edges: list[list[int]] = [[] for _ in range(n)]
    last_in_handler: dict[int, int] = {}
    for s in trace.steps:
        h = handlers[s.i]
        if h is not None:
            if h in last_in_handler:
                edges[last_in_handler[h]].append(s.i)
            last_in_handler[h] = s.i
    for recv_i, send_i in matching_send(trace).items():
        edges[send_i].append(recv_i)

    # Reachability via reverse topological accumulation (trace order is a
    # linearization of the DAG: every edge goes forward in index order).
    reach: list[int] = [0] * n  # bitmask of reachable step indices
    rel: set[tuple[int, int]] = set()
    for i in range(n - 1, -1, -1):
        mask = 0
        for j in edges[i]:
            mask |= (1 << j) | reach[j]
        reach[i] = mask
        m = mask
        while m:
            low = m & -m
            rel.add((i, low.bit_length() - 1))
            m ^= low
    return rel


def step_depths(trace: ExecutionTrace) -> list[int | None]:
    """Depth of every handler step; None for crash steps and engine notes.

    A coordinator invocation has depth 0; a recv is 1 + depth of the matching
    send; every other step takes the max depth of the steps before it in the
    same handler.
    """
    handlers = handler_of_steps(trace)
    send_of = matching_send(trace)
    depths: list[int | None] = [None] * len(trace.steps)
    handler_max: dict[int, int] = {}
    for s in trace.steps:
        h = handlers[s.i]
        if h is None:
            continue
        prior = handler_max.get(h, 0)
        if s.kind == INVOKE:
            d = 0
        elif s.kind == RECV:
            sd = depths[send_of[s.i]]
            d = max(prior, (sd or 0) + 1)
        else:
            d = prior
        depths[s.i] = d
        handler_max[h] = max(handler_max.get(h, 0), d)
    return depths


def step_depth(trace: ExecutionTrace, step_index: int) -> int:
    d = step_depths(trace)[step_index]
    if d is None:
        raise OrphanStep(f"step {step_index} is not a handler step")
    return d


def txn_depth(trace: ExecutionTrace, txn: str) -> int:
    """Depth of the coordinator handler's response step."""
    resp = trace.coordinator_response(txn)
    if resp is None:
        raise Undecided(f"transaction {txn!r} is not decided in this trace")
    return step_depths(trace)[resp.i]  # type: ignore[return-value]


def partial_depth(trace: ExecutionTrace, prefix_len: int, txn: str) -> int:
    """Max depth of the txn's steps in the prefix that happened-before its response."""
    resp = trace.coordinator_response(txn)
    if resp is None:
        raise Undecided(f"transaction {txn!r} is not decided in this trace")
    depths = step_depths(trace)
    hb = happened_before(trace)
    best = 0
    for s in trace.steps[:prefix_len]:
        if s.txn != txn or depths[s.i] is None:
            continue
        if (s.i, resp.i) in hb:
            best = max(best, depths[s.i])  # type: ignore[arg-type]
    return best


def value_learned_events(trace: ExecutionTrace, txn: str) -> dict[str, int]:
    """Step index of the last valueLearned note per read item of the transaction."""
    if not trace.decided(txn):
        raise Undecided(f"transaction {txn!r} is not decided in this trace")
    out: dict[str, int] = {}
    for s in trace.steps:
        if s.kind == NOTE and s.txn == txn and s.tag == VALUE_LEARNED:
            out[s.data["item"]] = s.i
    return out


# ---------------------------------------------------------------------------
# Transaction intervals and concurrency
# ---------------------------------------------------------------------------


def intervals(trace: ExecutionTrace) -> dict[str, tuple[int, int]]:
    """Closed [start, end] step-index interval of each transaction.

    The interval starts at the coordinator invocation and ends once every
    handler of the transaction has responded and every send has either been
    received or had its target node crash. Unresolved sends leave the
    interval open through the end of the trace.
    """
    n = len(trace.steps)
    crash_at: dict[int, int] = {}
    dropped_to: dict[Any, int] = {}  # msgId -> crashed target node
    for s in trace.steps:
        if s.kind == CRASH:
            crash_at[s.fields["node"]] = s.i
        elif s.kind == NOTE and s.tag == "drop":
            dropped_to[s.data["msgId"]] = s.data["node"]

    handlers = handler_of_steps(trace)
    handler_txn: dict[int, str | None] = {}
    handler_resp: dict[int, int] = {}
    for s in trace.steps:
        h = handlers[s.i]
        if h is None:
            continue
        handler_txn.setdefault(h, s.txn)
        if s.kind == RESPONSE:
            handler_resp[h] = s.i

    recv_of: dict[Any, int] = {}
    for s in trace.steps:
        if s.kind == RECV:
            recv_of[s.msg_id] = s.i

    out: dict[str, tuple[int, int]] = {}
    for txn in trace.txns():
        start = None
        end = 0
        closed = True
        for h, t in handler_txn.items():
            if t != txn:
                continue
            if h in handler_resp:
                end = max(end, handler_resp[h])
            else:
                closed = False
        for s in trace.steps:
            if s.kind == INVOKE and s.txn == txn and start is None:
                start = s.i
            if s.kind == SEND and s.txn == txn:
                if s.msg_id in recv_of:
                    end = max(end, recv_of[s.msg_id])
                elif s.msg_id in dropped_to:
                    # The send stops blocking the interval at the target's crash.
                    end = max(end, max(crash_at[dropped_to[s.msg_id]], s.i))
                else:
                    closed = False
        if start is None:
            continue
        out[txn] = (start, end if closed else n - 1)
    return out


def concurrent(trace: ExecutionTrace, t1: str, t2: str) -> bool:
    iv = intervals(trace)
    if t1 not in iv or t2 not in iv:
        return False
    (s1, e1), (s2, e2) = iv[t1], iv[t2]
    return s1 <= e2 and s2 <= e1


# ---------------------------------------------------------------------------
# Derived committed histories
# ---------------------------------------------------------------------------


@dataclass
class CommittedHistory:
    """Per committed transaction, its reported operations in response order."""

    ops: dict[str, list[tuple[str, str, Any]]]  # txn -> [(kind, item, value)]
    initials: dict[str, Any] = field(default_factory=dict)

    def txns(self) -> list[str]:
        return list(self.ops)

    def canonical(self) -> str:
        parts = []
        for t in sorted(self.ops):
            ops = ";".join(f"{k}({i})={v!r}" for k, i, v in self.ops[t])
            parts.append(f"{t}:[{ops}]")
        return "|".join(parts)

    def to_json(self) -> dict:
        return {
            "initials": dict(sorted(self.initials.items())),
            "transactions": {
                t: [{"kind": k, "item": i, "value": v} for k, i, v in ops]
                for t, ops in self.ops.items()
            },
        }


def derive_history(trace: ExecutionTrace) -> CommittedHistory:
    """Committed transactions' operations, exactly as response steps report them."""
    ops: dict[str, list[tuple[str, str, Any]]] = {}
    for s in trace.steps:
        if s.kind != RESPONSE or s.outcome is None:
            continue
        if s.read_set is None or s.write_set is None:
            raise MalformedResponse(f"response step {s.i} is missing read/write sets")
        if s.outcome != "commit":
            continue
        entry = [("read", item, value) for item, value in s.read_set]
        entry += [("write", item, value) for item, value in s.write_set]
        ops[s.txn] = entry
    initials = {}
    if trace.scenario is not None:
        initials = dict(trace.scenario.placement.initials)
    return CommittedHistory(ops, initials)
