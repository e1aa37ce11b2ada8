"""Mechanical verifiers for the formal properties, over recorded traces.

Each checker returns a Verdict whose witness, on failure, can be re-validated
against the raw trace (a dependency cycle, a contending step pair, a depth
mismatch, or a replayable crash-injection schedule).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable

from . import engine
from .engine import Schedule, SimConfig
from .errors import ScheduleIncompatible, TooLarge
from .memory import GLOBAL_LOCK, contending_pairs, replay_nontrivial
from .model import (
    CRASH,
    INVOKE,
    NOTE,
    PRIM,
    RECV,
    RESPONSE,
    SEND,
    VALUE_LEARNED,
    CommittedHistory,
    ExecutionTrace,
    TransactionProgram,
    concurrent,
    derive_history,
    happened_before,
    intervals,
    step_depths,
    txn_depth,
)

SERIALIZABILITY_BRUTE_CAP = 8  # 8! = 40320 permutations


@dataclass
class Verdict:
    prop: str
    passed: bool
    witness: Any = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "property": self.prop,
            "pass": self.passed,
            "witness": self.witness,
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# Serializability
# ---------------------------------------------------------------------------


def _legal_order(history: CommittedHistory, order: Iterable[str]) -> bool:
    state = dict(history.initials)
    for txn in order:
        for kind, item, value in history.ops[txn]:
            if kind == "read":
                if state.get(item) != value:
                    return False
            else:
                state[item] = value
    return True


def _writers(history: CommittedHistory) -> dict[str, dict[str, Any]]:
    by_item: dict[str, dict[str, Any]] = {}
    for txn, ops in history.ops.items():
        for kind, item, value in ops:
            if kind == "write":
                by_item.setdefault(item, {})[txn] = value
    return by_item


def _dependency_edges(history: CommittedHistory) -> list[dict]:
    """Mandatory precedence edges: reads-from and reads-of-initial."""
    writers = _writers(history)
    edges = []
    for txn, ops in history.ops.items():
        for kind, item, value in ops:
            if kind != "read":
                continue
            if value == history.initials.get(item):
                # txn saw the pristine item, so every writer comes after it.
                for other in writers.get(item, {}):
                    if other != txn:
                        edges.append(
                            {"from": txn, "to": other, "item": item, "reason": "read-initial"}
                        )
            else:
                for other, wval in writers.get(item, {}).items():
                    if other != txn and wval == value:
                        edges.append(
                            {"from": other, "to": txn, "item": item, "reason": "reads-from"}
                        )
    return edges


def _find_cycle(txns: list[str], edges: list[dict]) -> list[str] | None:
    adj: dict[str, list[str]] = {t: [] for t in txns}
    for e in edges:
        adj[e["from"]].append(e["to"])
    color: dict[str, int] = {t: 0 for t in txns}
    stack: list[str] = []

    def dfs(t: str) -> list[str] | None:
        color[t] = 1
        stack.append(t)
        for nxt in adj[t]:
            if color[nxt] == 1:
                return stack[stack.index(nxt):]
            if color[nxt] == 0:
                cyc = dfs(nxt)
                if cyc is not None:
                    return cyc
        stack.pop()
        color[t] = 2
        return None

    for t in txns:
        if color[t] == 0:
            cyc = dfs(t)
            if cyc is not None:
                lo = cyc.index(min(cyc))
                return cyc[lo:] + cyc[:lo]
    return None


def check_serializability(history: CommittedHistory) -> Verdict:
    """Exact check: does any permutation of the committed transactions read
    legally? Brute force over permutations, capped at 8 transactions."""
    txns = history.txns()
    if len(txns) > SERIALIZABILITY_BRUTE_CAP:
        raise TooLarge(
            f"{len(txns)} committed transactions exceed the brute-force cap "
            f"of {SERIALIZABILITY_BRUTE_CAP}; use serializable_polygraph"
        )
    for order in itertools.permutations(txns):
        if _legal_order(history, order):
            return Verdict("serializability", True, witness={"serialOrder": list(order)})
    edges = _dependency_edges(history)
    cycle = _find_cycle(txns, edges)
    witness = {"cycle": cycle, "edges": edges} if cycle else {"cycle": None, "edges": edges}
    return Verdict("serializability", False, witness=witness)


def serializable_polygraph(history: CommittedHistory) -> bool:
    """Graph-based fast path: mandatory reads-from/read-initial edges plus a
    backtracking resolution of each anti-dependency placement choice.

    Exact for histories whose writes carry distinct values per item and whose
    transactions read before writing (what the protocols and the oracle
    generator produce); raises if a value is written twice to one item.
    """
    txns = history.txns()
    writers = _writers(history)
    for item, by_txn in writers.items():
        vals = list(by_txn.values())
        if len(vals) != len(set(map(repr, vals))):
            raise ValueError(f"ambiguous reads-from: duplicate write values on {item!r}")

    n = len(txns)
    index = {t: i for i, t in enumerate(txns)}
    edges: set[tuple[int, int]] = set()
    choices: list[tuple[tuple[int, int], tuple[int, int]]] = []
    for txn, ops in history.ops.items():
        for kind, item, value in ops:
            if kind != "read":
                continue
            if value == history.initials.get(item):
                for other in writers.get(item, {}):
                    if other != txn:
                        edges.add((index[txn], index[other]))
                continue
            source = None
            for other, wval in writers.get(item, {}).items():
                if wval == value and other != txn:
                    source = other
            if source is None:
                return False  # the read value was never written
            edges.add((index[source], index[txn]))
            for other in writers.get(item, {}):
                if other in (source, txn):
                    continue
                # `other` must not land between source and txn.
                choices.append(((index[other], index[source]), (index[txn], index[other])))

    def acyclic(es: set[tuple[int, int]]) -> bool:
        adj = [[] for _ in range(n)]
        for a, b in es:
            adj[a].append(b)
        color = [0] * n

        def dfs(u: int) -> bool:
            color[u] = 1
            for v in adj[u]:
                if color[v] == 1 or (color[v] == 0 and not dfs(v)):
                    return False
            color[u] = 2
            return True

        return all(color[u] != 0 or dfs(u) for u in range(n))

    def solve(i: int, es: set[tuple[int, int]]) -> bool:
        if not acyclic(es):
            return False
        if i == len(choices):
            return True
        a, b = choices[i]
        return solve(i + 1, es | {a}) or solve(i + 1, es | {b})

    return solve(0, edges)


# ---------------------------------------------------------------------------
# Progress and invisible reads
# ---------------------------------------------------------------------------


def check_weak_progress(traces: list[ExecutionTrace]) -> Verdict:
    """All transactions decided; solo (non-concurrent) transactions committed."""
    for idx, trace in enumerate(traces):
        programs = trace.scenario.transactions if trace.scenario else []
        ids = [p.txn_id for p in programs] or trace.txns()
        for t in ids:
            resp = trace.coordinator_response(t)
            if resp is None:
                return Verdict(
                    "weak-progress", False,
                    witness={"trace": idx, "txn": t, "reason": "undecided"},
                )
            solo = all(o == t or not concurrent(trace, t, o) for o in ids)
            if solo and resp.outcome != "commit":
                return Verdict(
                    "weak-progress", False,
                    witness={"trace": idx, "txn": t, "reason": "solo transaction aborted"},
                )
    return Verdict("weak-progress", True, details={"traces": len(traces)})


def check_weak_ir(trace: ExecutionTrace) -> Verdict:
    """Transactions whose reported write set is empty execute no non-trivial prims."""
    empty_ws = set()
    for s in trace.steps:
        if s.kind == RESPONSE and s.outcome is not None and not s.write_set:
            empty_ws.add(s.txn)
    for s in trace.steps:
        if s.kind == PRIM and s.nontrivial and s.txn in empty_ws:
            return Verdict(
                "weak-ir", False,
                witness={"txn": s.txn, "step": s.i, "obj": s.obj, "op": s.op},
            )
    return Verdict("weak-ir", True, details={"readOnlyTxns": sorted(empty_ws)})


def _nontrivial_footprint(trace: ExecutionTrace, txn: str) -> list[tuple]:
    out = []
    for s in trace.steps:
        if s.kind == PRIM and s.nontrivial and s.txn == txn:
            out.append((s.proc.node, s.obj, s.op, repr(s.fields.get("args")), repr(s.fields.get("ret"))))
    return sorted(out)


def _structural_projection(trace: ExecutionTrace, txn: str) -> list[tuple]:
    """A transaction's step sequence with message ids and indices erased."""
    out = []
    for s in trace.steps:
        if s.txn != txn:
            continue
        proc = s.proc.to_json() if s.proc else None
        if s.kind == PRIM:
            content = (s.obj, s.op, repr(s.fields.get("args")), repr(s.fields.get("ret")))
        elif s.kind in (SEND, RECV):
            content = (repr(s.payload),)
        elif s.kind == RESPONSE:
            content = (s.outcome, repr(s.read_set), repr(s.write_set))
        elif s.kind == NOTE:
            content = (s.tag, repr(s.data))
        else:
            content = ()
        out.append((s.kind, repr(proc), content))
    return out


def check_strong_ir(trace: ExecutionTrace) -> Verdict:
    """Twin substitution: re-run with each writing transaction replaced by a
    write-only twin (same values, empty read set) and compare non-trivial
    footprints; other transactions' step sequences must not change."""
    weak = check_weak_ir(trace)
    if not weak.passed:
        return Verdict("strong-ir", False, witness=weak.witness,
                       details={"reason": "weak invisible reads violated"})
    if trace.scenario is None or trace.config is None or trace.algorithm is None:
        raise ScheduleIncompatible("strong-ir needs the trace's scenario/config/schedule refs")

    checked = []
    for prog in trace.scenario.transactions:
        txn = prog.txn_id
        resp = trace.coordinator_response(txn)
        if resp is None or not resp.write_set:
            continue  # covered by the weak-IR clause
        if not prog.read_set:
            checked.append({"txn": txn, "twin": "identity"})
            continue
        schedule = _twin_schedule(trace.schedule)
        twin_prog = TransactionProgram(
            txn, prog.client, [], [(item, "always", value) for item, value in resp.write_set]
        )
        twin_scenario = replace(
            trace.scenario,
            transactions=[twin_prog if p.txn_id == txn else p for p in trace.scenario.transactions],
        )
        twin_res = engine.run(trace.config, trace.algorithm, twin_scenario, schedule)
        orig_fp = _nontrivial_footprint(trace, txn)
        twin_fp = _nontrivial_footprint(twin_res.trace, txn)
        if orig_fp != twin_fp:
            missing = [x for x in orig_fp if x not in twin_fp]
            extra = [x for x in twin_fp if x not in orig_fp]
            return Verdict(
                "strong-ir", False,
                witness={"txn": txn, "onlyInOriginal": missing, "onlyInTwin": extra},
            )
        for other in trace.scenario.transactions:
            if other.txn_id == txn:
                continue
            if _structural_projection(trace, other.txn_id) != _structural_projection(
                twin_res.trace, other.txn_id
            ):
                return Verdict(
                    "strong-ir", False,
                    witness={"txn": txn, "perturbed": other.txn_id},
                )
        checked.append({"txn": txn, "twin": "replayed"})
    return Verdict("strong-ir", True, details={"checked": checked})


def _twin_schedule(schedule_json: Any) -> Schedule:
    if schedule_json is None:
        return Schedule("fair")
    sched = Schedule.from_json(schedule_json)
    if sched.kind == "scripted":
        # The twin skips its read phase, so recorded decision lists do not
        # transfer (message ids diverge); the definition's substitution is
        # only checked for policy-driven schedules.
        raise ScheduleIncompatible(
            "cannot re-run a scripted schedule against a read-stripped twin"
        )
    return sched


# ---------------------------------------------------------------------------
# Disjoint-access parallelism
# ---------------------------------------------------------------------------


def _data_sets(trace: ExecutionTrace) -> dict[str, set[str]]:
    return {p.txn_id: p.data_set() for p in trace.scenario.transactions}


def check_dap(trace: ExecutionTrace) -> Verdict:
    """Transactions with disjoint data sets must never contend."""
    data = _data_sets(trace)
    for i, j in sorted(contending_pairs(trace)):
        if i > j:
            continue
        s1, s2 = trace.steps[i], trace.steps[j]
        if not (data[s1.txn] & data[s2.txn]):
            return Verdict(
                "dap", False,
                witness={"steps": [i, j], "obj": s1.obj, "node": s1.proc.node,
                         "txns": sorted([s1.txn, s2.txn])},
            )
    return Verdict("dap", True)


def check_ddap(trace: ExecutionTrace) -> Verdict:
    """Contention on a node requires the data sets to intersect on that node's shard."""
    data = _data_sets(trace)
    for i, j in sorted(contending_pairs(trace)):
        if i > j:
            continue
        s1, s2 = trace.steps[i], trace.steps[j]
        node = s1.proc.node
        shard = set(trace.scenario.local_items(node))
        if not (data[s1.txn] & data[s2.txn] & shard):
            return Verdict(
                "ddap", False,
                witness={"steps": [i, j], "obj": s1.obj, "node": node,
                         "txns": sorted([s1.txn, s2.txn])},
            )
    return Verdict("ddap", True)


# ---------------------------------------------------------------------------
# Fast decision and read delay
# ---------------------------------------------------------------------------


def _prefix_partial_depths(trace: ExecutionTrace, txn: str) -> list[int]:
    """partialDepth of every prefix length 0..n, in one pass."""
    resp = trace.coordinator_response(txn)
    depths = step_depths(trace)
    hb = happened_before(trace)
    pd = [0] * (len(trace.steps) + 1)
    cur = 0
    for length in range(1, len(trace.steps) + 1):
        s = trace.steps[length - 1]
        if s.txn == txn and depths[s.i] is not None and (s.i, resp.i) in hb:
            cur = max(cur, depths[s.i])
        pd[length] = cur
    return pd


def _learning_notes(trace: ExecutionTrace, txn: str) -> list[tuple[int, int]]:
    """(step index, step depth) of every valueLearned note, in trace order."""
    depths = step_depths(trace)
    return [
        (s.i, depths[s.i])
        for s in trace.steps
        if s.kind == NOTE and s.txn == txn and s.tag == VALUE_LEARNED
    ]


def check_fast_decision(trace: ExecutionTrace) -> Verdict:
    """On a synchronous failure-free solo trace: knowledge of read values must
    grow every two message delays, and the decision lands within two delays of
    the last value learned."""
    crash_free = not any(s.kind == CRASH for s in trace.steps)
    if not crash_free:
        return Verdict("fast-decision", False,
                       witness={"reason": "trace is not failure-free"})
    results = []
    for txn in trace.txns():
        resp = trace.coordinator_response(txn)
        if resp is None:
            continue
        others = [t for t in trace.txns() if t != txn]
        if any(concurrent(trace, txn, o) for o in others):
            return Verdict("fast-decision", False,
                           witness={"reason": f"{txn} did not run solo"})
        depth = txn_depth(trace, txn)
        notes = _learning_notes(trace, txn)
        learned_depths = [d for _, d in notes]
        pd = _prefix_partial_depths(trace, txn)
        for length in range(len(trace.steps) + 1):
            p = pd[length]
            if p >= depth - 2:
                continue
            count = sum(1 for i, _ in notes if i < length)
            if count >= len(notes) or learned_depths[count] > p + 2:
                return Verdict(
                    "fast-decision", False,
                    witness={
                        "txn": txn, "prefixLen": length, "partialDepth": p,
                        "txnDepth": depth, "learnedDepths": learned_depths,
                        "violated": "no new value within two delays",
                        "decisionSlack": depth - ((learned_depths[-1] if learned_depths else 0) + 2),
                    },
                )
        if learned_depths and depth > learned_depths[-1] + 2:
            return Verdict(
                "fast-decision", False,
                witness={
                    "txn": txn, "txnDepth": depth, "learnedDepths": learned_depths,
                    "violated": "decision more than two delays after full knowledge",
                    "decisionSlack": depth - (learned_depths[-1] + 2),
                },
            )
        results.append({"txn": txn, "depth": depth, "learnedDepths": learned_depths})
    return Verdict("fast-decision", True, details={"transactions": results})


def check_read_delay(trace: ExecutionTrace) -> Verdict:
    """With f >= 1, no read value can be learned before partial depth 2."""
    for txn in trace.txns():
        if trace.coordinator_response(txn) is None:
            continue
        pd = _prefix_partial_depths(trace, txn)
        for i, _ in _learning_notes(trace, txn):
            if pd[i + 1] < 2:
                return Verdict(
                    "read-delay", False,
                    witness={"txn": txn, "step": i, "partialDepth": pd[i + 1]},
                )
    return Verdict("read-delay", True)


# ---------------------------------------------------------------------------
# Seamless fault tolerance
# ---------------------------------------------------------------------------


def _coordinator_signature(trace: ExecutionTrace) -> list[tuple]:
    sig = []
    for s in trace.steps:
        if s.proc is None or s.proc.kind != "client":
            continue
        if s.kind == INVOKE:
            sig.append(("invoke", s.txn))
        elif s.kind == RESPONSE and s.outcome is not None:
            sig.append(("response", s.txn, s.outcome, repr(s.read_set), repr(s.write_set)))
    return sig


def _decided_depths(trace: ExecutionTrace) -> dict[str, int]:
    return {
        t: txn_depth(trace, t)
        for t in trace.txns()
        if trace.coordinator_response(t) is not None
    }


def check_seamless_ft(
    config: SimConfig,
    variant,
    scenario,
    schedule: Schedule,
    s: int,
    completions: int = 64,
) -> Verdict:
    """Inject one extra crash at every prefix position of the base run and
    search for a completion with identical coordinator invocation/response
    sequence and unchanged per-transaction depths. The search is a sound pass
    and a caveated fail: fair delivery first, then seeded completions."""
    if s == 0:
        return Verdict("seamless-ft", True, details={"s": 0, "reason": "vacuous"})
    if scenario.placement.f < s:
        return Verdict("seamless-ft", False,
                       witness={"reason": f"f={scenario.placement.f} < s={s}"})
    base = engine.run(config, variant, scenario, schedule)
    base_crashes = [s_ for s_ in base.trace.steps if s_.kind == CRASH]
    if len(base_crashes) > s - 1:
        return Verdict("seamless-ft", False,
                       witness={"reason": f"base run has {len(base_crashes)} crashes, needs <= {s - 1}"})
    base_sig = _coordinator_signature(base.trace)
    base_depths = _decided_depths(base.trace)
    crashed_nodes = {s_.fields["node"] for s_ in base_crashes}

    first_pos = 0
    for i, d in enumerate(base.decisions):
        if d.t == "crash":
            first_pos = i + 1

    injections = 0
    for pos in range(first_pos, len(base.decisions) + 1):
        for node in range(config.n_nodes):
            if node in crashed_nodes:
                continue
            injections += 1
            found = False
            for attempt in range(completions + 1):
                sched = Schedule(
                    "scripted",
                    list(base.decisions[:pos]) + [engine.Decision("crash", node=node)],
                    granularity=schedule.granularity,
                    complete=True,
                    completion_seed=None if attempt == 0 else attempt,
                )
                res = engine.run(config, variant, scenario, sched)
                if (
                    _coordinator_signature(res.trace) == base_sig
                    and _decided_depths(res.trace) == base_depths
                ):
                    found = True
                    break
            if not found:
                sched = Schedule(
                    "scripted",
                    list(base.decisions[:pos]) + [engine.Decision("crash", node=node)],
                    granularity=schedule.granularity,
                    complete=True,
                )
                res = engine.run(config, variant, scenario, sched)
                return Verdict(
                    "seamless-ft", False,
                    witness={
                        "prefix": pos, "node": node,
                        "schedule": sched.to_json(),
                        "baseDepths": base_depths,
                        "injectedDepths": _decided_depths(res.trace),
                        "signatureChanged": _coordinator_signature(res.trace) != base_sig,
                        "caveat": "no seamless completion found within budget",
                    },
                )
    return Verdict("seamless-ft", True, details={"s": s, "injectionsTried": injections})


# ---------------------------------------------------------------------------
# Trace invariant suite
# ---------------------------------------------------------------------------


def verify_trace_invariants(trace: ExecutionTrace) -> None:
    """Assert the structural invariants every generated trace must satisfy.

    Covers: message integrity, crash finality, happened-before acyclicity,
    depth monotonicity along happened-before, per-item seqNum monotonicity,
    long-lock safety, read atomicity, weak invisible reads, and non-trivial
    replay reproducing final memory (when the scenario is attached).
    """
    # Message integrity: unique matching sends, no double delivery.
    seen_recv: set[Any] = set()
    sends: dict[Any, Step] = {}
    for s in trace.steps:
        if s.kind == SEND:
            assert s.msg_id not in sends, f"duplicate send msgId {s.msg_id}"
            sends[s.msg_id] = s
        elif s.kind == RECV:
            assert s.msg_id in sends, f"recv {s.i} has no prior send"
            assert s.msg_id not in seen_recv, f"message {s.msg_id} delivered twice"
            assert sends[s.msg_id].txn == s.txn, "send/recv transaction mismatch"
            seen_recv.add(s.msg_id)

    # Crash finality.
    crashed_at: dict[int, int] = {}
    for s in trace.steps:
        if s.kind == CRASH:
            crashed_at[s.fields["node"]] = s.i
        elif s.proc is not None and s.proc.kind == "node" and s.proc.node in crashed_at:
            raise AssertionError(
                f"step {s.i} on node {s.proc.node} after its crash at {crashed_at[s.proc.node]}"
            )

    # Happened-before is a strict partial order aligned with trace order.
    hb = happened_before(trace)
    for (a, b) in hb:
        assert a < b, f"happened-before edge ({a},{b}) goes backwards"

    # Depth monotone along happened-before within a transaction.
    depths = step_depths(trace)
    for (a, b) in hb:
        sa, sb = trace.steps[a], trace.steps[b]
        if sa.txn is not None and sa.txn == sb.txn and depths[a] is not None and depths[b] is not None:
            assert depths[a] <= depths[b], f"depth not monotone on {a}->{b}"

    # seqNum monotone per (node, object).
    last_seq: dict[tuple[int, str], int] = {}
    for s in trace.steps:
        if s.kind == PRIM and s.op == "write" and s.obj.endswith(".seqNum"):
            key = (s.proc.node, s.obj)
            val = s.fields["args"][0]
            assert val >= last_seq.get(key, 0), f"seqNum decreased at step {s.i}"
            last_seq[key] = val

    # Long-lock safety: CAS wins only on free locks; writes release own locks.
    holders: dict[tuple[int, str], Any] = {}
    held_by_txn: dict[str, set[tuple[int, str]]] = {}
    for s in trace.steps:
        if s.kind != PRIM:
            continue
        if not (s.obj.endswith(".lockL") or s.obj == GLOBAL_LOCK):
            continue
        key = (s.proc.node, s.obj)
        if s.op == "cas" and s.fields["ret"] is True:
            assert holders.get(key) is None, f"lock CAS won over a held lock at {s.i}"
            holders[key] = s.fields["args"][1]
            held_by_txn.setdefault(s.txn, set()).add(key)
        elif s.op == "write":
            v = s.fields["args"][0]
            if v is None and holders.get(key) is not None:
                held_by_txn.get(s.txn, set()).discard(key)
            holders[key] = v

    # Every closed-interval transaction released its locks by interval end
    # (crash-free traces only; a crash may orphan a lock legitimately).
    if not crashed_at:
        iv = intervals(trace)
        lock_events: dict[tuple[int, str], list[tuple[int, Any]]] = {}
        for s in trace.steps:
            if s.kind == PRIM and (s.obj.endswith(".lockL") or s.obj == GLOBAL_LOCK):
                key = (s.proc.node, s.obj)
                if s.op == "cas" and s.fields["ret"] is True:
                    lock_events.setdefault(key, []).append((s.i, s.fields["args"][1]))
                elif s.op == "write":
                    lock_events.setdefault(key, []).append((s.i, s.fields["args"][0]))
        for txn, (start, end) in iv.items():
            if end >= len(trace.steps) - 1:
                continue  # interval still open at trace end
            for key, events in lock_events.items():
                holder = None
                for i, v in events:
                    if i <= end:
                        holder = v
                assert holder != txn, f"{txn} still holds {key} at interval end {end}"

    # Read atomicity: every ok ReadReply pair matches a state the replica held.
    states: dict[tuple[int, str], set[tuple]] = {}
    cur_seq: dict[tuple[int, str], int] = {}
    cur_val: dict[tuple[int, str], Any] = {}
    if trace.scenario is not None:
        for node in range(trace.config.n_nodes if trace.config else 0):
            for item in trace.scenario.local_items(node):
                cur_seq[(node, item)] = 0
                cur_val[(node, item)] = trace.scenario.placement.initials[item]
                states[(node, item)] = {(0, repr(trace.scenario.placement.initials[item]))}
        for s in trace.steps:
            if s.kind != PRIM or s.op != "write":
                continue
            if s.obj.endswith(".seqNum"):
                key = (s.proc.node, s.obj[: -len(".seqNum")])
                if key in cur_seq:
                    cur_seq[key] = s.fields["args"][0]
            elif s.obj.endswith(".val"):
                key = (s.proc.node, s.obj[: -len(".val")])
                if key in cur_val:
                    cur_val[key] = s.fields["args"][0]
                    states[key].add((cur_seq[key], repr(cur_val[key])))
        for s in trace.steps:
            if s.kind != SEND or s.payload.get("kind") != "readReply":
                continue
            body = s.payload["body"]
            if body["vote"] != "ok":
                continue
            key = (s.proc.node, body["key"])
            assert (body["seq"], repr(body["val"])) in states[key], (
                f"ReadReply at {s.i} returned a state the replica never held"
            )

    # Decision agreement: a commit broadcast happens only if no abort vote
    # reached the coordinator before it (late abort votes may drain after).
    first_commit_send: dict[str, int] = {}
    for s in trace.steps:
        if (
            s.kind == SEND
            and s.proc is not None
            and s.proc.kind == "client"
            and s.payload.get("kind") == "commit"
        ):
            first_commit_send.setdefault(s.txn, s.i)
    for s in trace.steps:
        if s.kind != RECV or s.proc is None or s.proc.kind != "client":
            continue
        body = (s.payload or {}).get("body") or {}
        if body.get("vote") == "abort" and s.txn in first_commit_send:
            assert s.i > first_commit_send[s.txn], (
                f"{s.txn} broadcast commit after receiving an abort vote at {s.i}"
            )

    # Weak invisible reads holds on every generated trace of these protocols.
    weak = check_weak_ir(trace)
    assert weak.passed, f"weak-ir violated: {weak.witness}"

    # Fault-tolerant configurations can never learn a read value before
    # partial depth 2 (the read-delay lower bound, asserted at runtime).
    if (
        trace.scenario is not None
        and trace.scenario.placement.f >= 1
        and trace.scenario.placement.k >= 3
    ):
        rd = check_read_delay(trace)
        assert rd.passed, f"read-delay violated: {rd.witness}"


CHECKERS_BY_NAME: dict[str, Callable] = {
    "serializability": lambda trace: check_serializability(derive_history(trace)),
    "weak-progress": lambda trace: check_weak_progress([trace]),
    "weak-ir": check_weak_ir,
    "strong-ir": check_strong_ir,
    "dap": check_dap,
    "ddap": check_ddap,
    "fast-decision": check_fast_decision,
    "read-delay": check_read_delay,
}
