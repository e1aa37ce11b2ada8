"""The transactional protocols, as resumable client and node state machines.

One base algorithm plus four tweaks, each sacrificing one property:

  base         optimistic reads + single-round validation, quorum k-f
  no-fast      validation split into a lock round then a check round
  weak-ir      writing transactions also long-lock their read items
  no-seamless  validation waits for every node; timeout falls back to no-fast
  no-ddap      one long lock per node instead of per item; writers lock all nodes

Handlers are generators over engine effects; every yield is one handler step.
Per-item state is four base objects (val, seqNum, lockS, lockL); lockS guards
value/seqNum installation, lockL is the concurrency-control lock. Reads use
the lock-free check/recheck sequence so they stay trivial on shared memory.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterator

from .engine import TIMEOUT, EmitNote, PrimOp, SendMsg, SimConfig, WaitRecv
from .errors import PlacementError
from .memory import GLOBAL_LOCK
from .model import TransactionProgram, VALUE_LEARNED

BASE = "base"
NO_FAST = "no-fast"
WEAK_IR = "weak-ir"
NO_SEAMLESS = "no-seamless"
NO_DDAP = "no-ddap"

VARIANTS = (BASE, NO_FAST, WEAK_IR, NO_SEAMLESS, NO_DDAP)

READ_RETRY_BOUND = 8  # attempts before a node answers an abort vote


@dataclass(frozen=True)
class AlgorithmVariant:
    tag: str
    timeout_ticks: int | None = None  # no-seamless fallback trigger; default 4*delta

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise ValueError(f"unknown algorithm variant {self.tag!r}")

    def to_json(self) -> dict:
        return {"tag": self.tag, "timeoutTicks": self.timeout_ticks}

    @staticmethod
    def from_json(d: dict) -> "AlgorithmVariant":
        return AlgorithmVariant(d["tag"], d.get("timeoutTicks"))


def pmsg(kind: str, body: dict) -> dict:
    return {"kind": kind, "body": body}


class ProtocolEnv:
    """Per-run protocol context: variant, placement, contact/quorum helpers."""

    def __init__(self, variant: AlgorithmVariant, scenario, config: SimConfig):
        self.variant = variant
        self.scenario = scenario
        self.config = config
        self.placement = scenario.placement
        self.all_nodes = list(range(config.n_nodes))
        self.timeout_ticks = variant.timeout_ticks or 4 * config.delta
        if variant.tag == NO_SEAMLESS:
            everywhere = tuple(self.all_nodes)
            for item, grp in self.placement.groups.items():
                if tuple(sorted(grp)) != everywhere:
                    raise PlacementError(
                        "no-seamless requires a replicated-unsharded placement; "
                        f"item {item!r} is not on every node"
                    )
            if config.gst == 0 and self.timeout_ticks <= config.delta:
                # The fallback must never fire in a synchronous run without a
                # real crash.
                raise PlacementError(
                    f"no-seamless timeout {self.timeout_ticks} must exceed delta "
                    f"{config.delta} in synchronous configurations"
                )

    @property
    def quorum(self) -> int:
        return self.placement.k - self.placement.f

    def item_nodes(self, items) -> list[int]:
        out: set[int] = set()
        for item in items:
            out.update(self.placement.groups[item])
        return sorted(out)

    def quorum_met(self, items, replied: set[int], total_needed: int | None = None) -> bool:
        for item in items:
            group = self.placement.groups[item]
            if sum(1 for n in group if n in replied) < self.quorum:
                return False
        if total_needed is not None and len(replied) < total_needed:
            return False
        return True

    def coordinator(self, prog: TransactionProgram) -> Iterator:
        return _coordinator(self, prog)

    def node_handler(self, node: int, msg) -> Iterator:
        kind = msg.payload["kind"]
        client = ("client", msg.src.idx)
        body = msg.payload["body"]
        if kind == "read":
            return _handle_read(self, node, client, body)
        if kind == "validate":
            if self.variant.tag == NO_DDAP:
                return _handle_validate_global(self, node, client, body)
            return _handle_validate(self, node, client, body)
        if kind == "lock":
            return _handle_lock(self, node, client, body)
        if kind == "check":
            return _handle_check(self, node, client, body)
        if kind == "commit":
            return _handle_commit(self, node, body)
        if kind == "abort":
            return _handle_abort(self, node, body)
        if kind == "restart":
            return _handle_restart(self, node, body)
        raise ValueError(f"node {node} received unknown message kind {kind!r}")


# ---------------------------------------------------------------------------
# Client coordinator
# ---------------------------------------------------------------------------


def _coordinator(env: ProtocolEnv, prog: TransactionProgram):
    tid = prog.txn_id
    round_counter = [0]

    recorded = yield from _read_phase(env, prog, round_counter)
    reads = [[k, recorded[k][1]] for k in prog.read_set]
    writes = prog.writes_for({k: v for k, (v, _) in recorded.items()}, env.placement.initials)

    tag = env.variant.tag
    if tag == NO_FAST:
        outcome, seqs, contacted = yield from _two_round_validation(env, tid, reads, writes)
    elif tag == NO_SEAMLESS:
        outcome, seqs, contacted = yield from _wait_all_validation(env, tid, reads, writes)
        if outcome == "timeout":
            for n in contacted:
                yield SendMsg(("node", n), pmsg("restart", {
                    "tid": tid, "reads": reads, "writes": [[k, v] for k, v in writes],
                }))
            # Fall back to the two-round algorithm, re-reading from scratch.
            recorded = yield from _read_phase(env, prog, round_counter)
            reads = [[k, recorded[k][1]] for k in prog.read_set]
            writes = prog.writes_for(
                {k: v for k, (v, _) in recorded.items()}, env.placement.initials
            )
            outcome, seqs, contacted = yield from _two_round_validation(env, tid, reads, writes)
    else:
        outcome, seqs, contacted = yield from _fast_validation(env, tid, reads, writes)

    read_set = [[k, recorded[k][0]] for k in prog.read_set]
    write_set = [[k, v] for k, v in writes]
    if outcome == "commit":
        commit_writes = [[k, v, seqs[k] + 1] for k, v in writes]
        for n in contacted:
            yield SendMsg(("node", n), pmsg("commit", {
                "tid": tid, "reads": reads, "writes": commit_writes,
            }))
    else:
        for n in contacted:
            yield SendMsg(("node", n), pmsg("abort", {
                "tid": tid, "reads": reads, "writes": [[k, v] for k, v in writes],
            }))
    return {"outcome": outcome, "readSet": read_set, "writeSet": write_set}


def _read_phase(env: ProtocolEnv, prog: TransactionProgram, round_counter):
    """One key at a time: broadcast to the replica group, collect k-f replies,
    record the max-seqNum pair, announce the learned value."""
    recorded: dict[str, tuple[Any, int]] = {}
    for item in prog.read_set:
        round_counter[0] += 1
        rnd = round_counter[0]
        group = sorted(env.placement.groups[item])
        for n in group:
            yield SendMsg(("node", n), pmsg("read", {"key": item, "round": rnd}))
        replies: dict[int, tuple[Any, int]] = {}
        while len(replies) < env.quorum:
            m = yield WaitRecv()
            pl = m.payload
            if pl["kind"] != "readReply" or pl["body"].get("round") != rnd:
                continue
            if pl["body"]["vote"] != "ok":
                continue
            replies[m.src.node] = (pl["body"]["val"], pl["body"]["seq"])
        best = max(sorted(replies), key=lambda n: replies[n][1])
        val, seq = replies[best]
        recorded[item] = (val, seq)
        yield EmitNote(VALUE_LEARNED, {"item": item, "val": val, "seq": seq})
    return recorded


def _decision_contacts(env: ProtocolEnv, reads, writes) -> list[int]:
    items = [k for k, _ in reads] + [k for k, _ in writes]
    if env.variant.tag == NO_DDAP and writes:
        return list(env.all_nodes)
    return env.item_nodes(items)


def _fast_validation(env: ProtocolEnv, tid, reads, writes):
    """Single round: every contacted node checks read seqNums and long-locks
    write items; all-commit votes from per-group quorums decide commit."""
    contact = _decision_contacts(env, reads, writes)
    if not contact:
        return "commit", {}, []
    items = [k for k, _ in reads] + [k for k, _ in writes]
    for n in contact:
        yield SendMsg(("node", n), pmsg("validate", {
            "tid": tid, "reads": reads, "writes": [[k, v] for k, v in writes],
        }))
    total_needed = None
    if env.variant.tag == NO_DDAP and writes:
        # Writers really lock all nodes; wait until only f can be missing.
        total_needed = env.config.n_nodes - env.placement.f
    replied: set[int] = set()
    seqs = {k: 0 for k, _ in writes}
    while True:
        m = yield WaitRecv()
        pl = m.payload
        if pl["kind"] != "validateReply":
            continue
        if pl["body"]["vote"] != "commit":
            return "abort", None, contact
        replied.add(m.src.node)
        for k, s in pl["body"]["writeSeqs"]:
            seqs[k] = max(seqs[k], s)
        if env.quorum_met(items, replied, total_needed):
            return "commit", seqs, contact


def _wait_all_validation(env: ProtocolEnv, tid, reads, writes):
    """no-seamless: base validation, but every node must reply; a timeout
    hands control back for the restart fallback."""
    contact = _decision_contacts(env, reads, writes)
    if not contact:
        return "commit", {}, []
    for n in contact:
        yield SendMsg(("node", n), pmsg("validate", {
            "tid": tid, "reads": reads, "writes": [[k, v] for k, v in writes],
        }))
    replied: set[int] = set()
    seqs = {k: 0 for k, _ in writes}
    while replied != set(contact):
        m = yield WaitRecv(timeout=env.timeout_ticks)
        if m is TIMEOUT:
            return "timeout", None, contact
        pl = m.payload
        if pl["kind"] != "validateReply":
            continue
        if pl["body"]["vote"] != "commit":
            return "abort", None, contact
        replied.add(m.src.node)
        for k, s in pl["body"]["writeSeqs"]:
            seqs[k] = max(seqs[k], s)
    return "commit", seqs, contact


def _two_round_validation(env: ProtocolEnv, tid, reads, writes):
    """no-fast: lock the write set first, then re-check read seqNums. The
    validation is two round trips by construction: a writer with an empty
    read set still runs a (degenerate) check round against its write nodes."""
    contact = _decision_contacts(env, reads, writes)
    seqs = {k: 0 for k, _ in writes}
    if writes:
        wcontact = env.item_nodes([k for k, _ in writes])
        witems = [k for k, _ in writes]
        for n in wcontact:
            yield SendMsg(("node", n), pmsg("lock", {
                "tid": tid, "writes": [[k, v] for k, v in writes],
            }))
        replied: set[int] = set()
        while not env.quorum_met(witems, replied):
            m = yield WaitRecv()
            pl = m.payload
            if pl["kind"] != "lockReply":
                continue
            if pl["body"]["vote"] != "commit":
                return "abort", None, contact
            replied.add(m.src.node)
            for k, s in pl["body"]["writeSeqs"]:
                seqs[k] = max(seqs[k], s)
    if reads or writes:
        ritems = [k for k, _ in reads]
        rcontact = env.item_nodes(ritems) if reads else env.item_nodes([k for k, _ in writes])
        quorum_items = ritems if reads else [k for k, _ in writes]
        for n in rcontact:
            yield SendMsg(("node", n), pmsg("check", {"tid": tid, "reads": reads}))
        replied = set()
        while not env.quorum_met(quorum_items, replied):
            m = yield WaitRecv()
            pl = m.payload
            if pl["kind"] != "checkReply":
                continue
            if pl["body"]["vote"] != "commit":
                return "abort", None, contact
            replied.add(m.src.node)
    return "commit", seqs, contact


# ---------------------------------------------------------------------------
# Node message handlers
# ---------------------------------------------------------------------------


def _handle_read(env: ProtocolEnv, node: int, client, body):
    """Lock-free atomic read of (val, seqNum); only trivial primitives."""
    key = body["key"]
    for _ in range(READ_RETRY_BOUND):
        s1 = yield PrimOp(f"{key}.lockS", "read")
        if s1 is not None:
            continue  # wait-and-recheck; counts as a failed attempt
        seq = yield PrimOp(f"{key}.seqNum", "read")
        s2 = yield PrimOp(f"{key}.lockS", "read")
        if s2 is not None:
            continue
        val = yield PrimOp(f"{key}.val", "read")
        seq2 = yield PrimOp(f"{key}.seqNum", "read")
        if seq2 != seq:
            continue
        yield SendMsg(client, pmsg("readReply", {
            "key": key, "round": body.get("round"), "val": val, "seq": seq, "vote": "ok",
        }))
        return
    yield SendMsg(client, pmsg("readReply", {
        "key": key, "round": body.get("round"), "val": None, "seq": None, "vote": "abort",
    }))


def _local_items(env: ProtocolEnv, node: int, keys) -> list[str]:
    return sorted(k for k in set(keys) if node in env.placement.groups[k])


def _release_cased(cased):
    for key in cased:
        yield PrimOp(key, "write", [None])


def _handle_validate(env: ProtocolEnv, node: int, client, body):
    """base / weak-ir validation: read items must be lock-free with matching
    seqNums; write items get lockL CASed. weak-ir writers also lock reads."""
    tid = body["tid"]
    reads = dict((k, s) for k, s in body["reads"])
    writes = dict((k, v) for k, v in body["writes"])
    lock_reads = env.variant.tag == WEAK_IR and bool(writes)
    success = True
    write_seqs = []
    cased: list[str] = []
    for key in _local_items(env, node, list(reads) + list(writes)):
        held = yield PrimOp(f"{key}.lockL", "read")
        if held is not None:
            success = False
            break
        if key in reads:
            seq = yield PrimOp(f"{key}.seqNum", "read")
            if seq != reads[key]:
                success = False
                break
            if lock_reads and key not in writes:
                ok = yield PrimOp(f"{key}.lockL", "cas", [None, tid])
                if not ok:
                    success = False
                    break
                cased.append(f"{key}.lockL")
        if key in writes:
            ok = yield PrimOp(f"{key}.lockL", "cas", [None, tid])
            if not ok:
                success = False
                break
            cased.append(f"{key}.lockL")
            seq = yield PrimOp(f"{key}.seqNum", "read")
            write_seqs.append([key, seq])
    if success:
        yield SendMsg(client, pmsg("validateReply", {"vote": "commit", "writeSeqs": write_seqs}))
    else:
        yield from _release_cased(cased)
        yield SendMsg(client, pmsg("validateReply", {"vote": "abort", "writeSeqs": []}))


def _handle_validate_global(env: ProtocolEnv, node: int, client, body):
    """no-ddap validation: one long lock per node. Writers CAS it on every
    node; read-only transactions only check it plus their seqNums."""
    tid = body["tid"]
    reads = dict((k, s) for k, s in body["reads"])
    writes = dict((k, v) for k, v in body["writes"])
    success = True
    locked = False
    write_seqs = []
    held = yield PrimOp(GLOBAL_LOCK, "read")
    if held is not None:
        success = False
    if success and writes:
        ok = yield PrimOp(GLOBAL_LOCK, "cas", [None, tid])
        if not ok:
            success = False
        else:
            locked = True
    if success:
        for key in _local_items(env, node, list(reads)):
            seq = yield PrimOp(f"{key}.seqNum", "read")
            if seq != reads[key]:
                success = False
                break
        if success:
            for key in _local_items(env, node, list(writes)):
                seq = yield PrimOp(f"{key}.seqNum", "read")
                write_seqs.append([key, seq])
    if success:
        yield SendMsg(client, pmsg("validateReply", {"vote": "commit", "writeSeqs": write_seqs}))
    else:
        if locked:
            yield PrimOp(GLOBAL_LOCK, "write", [None])
        yield SendMsg(client, pmsg("validateReply", {"vote": "abort", "writeSeqs": []}))


def _handle_lock(env: ProtocolEnv, node: int, client, body):
    """no-fast round 1: long-lock the local write items."""
    tid = body["tid"]
    writes = dict((k, v) for k, v in body["writes"])
    success = True
    write_seqs = []
    cased: list[str] = []
    for key in _local_items(env, node, list(writes)):
        held = yield PrimOp(f"{key}.lockL", "read")
        if held is not None:
            success = False
            break
        ok = yield PrimOp(f"{key}.lockL", "cas", [None, tid])
        if not ok:
            success = False
            break
        cased.append(f"{key}.lockL")
        seq = yield PrimOp(f"{key}.seqNum", "read")
        write_seqs.append([key, seq])
    if success:
        yield SendMsg(client, pmsg("lockReply", {"vote": "commit", "writeSeqs": write_seqs}))
    else:
        yield from _release_cased(cased)
        yield SendMsg(client, pmsg("lockReply", {"vote": "abort", "writeSeqs": []}))


def _handle_check(env: ProtocolEnv, node: int, client, body):
    """no-fast round 2: verify read seqNums with no lock movement."""
    tid = body["tid"]
    reads = dict((k, s) for k, s in body["reads"])
    success = True
    for key in _local_items(env, node, list(reads)):
        held = yield PrimOp(f"{key}.lockL", "read")
        if held not in (None, tid):
            success = False
            break
        seq = yield PrimOp(f"{key}.seqNum", "read")
        if seq != reads[key]:
            success = False
            break
    yield SendMsg(client, pmsg("checkReply", {"vote": "commit" if success else "abort"}))


def _install_writes(env: ProtocolEnv, node: int, tid, writes):
    """Apply committed writes under lockS; stale seqNums are skipped."""
    for key, val, seq in writes:
        if node not in env.placement.groups[key]:
            continue
        while True:
            ok = yield PrimOp(f"{key}.lockS", "cas", [None, tid])
            if ok:
                break
        cur = yield PrimOp(f"{key}.seqNum", "read")
        if cur < seq:
            yield PrimOp(f"{key}.seqNum", "write", [seq])
            yield PrimOp(f"{key}.val", "write", [val])
        yield PrimOp(f"{key}.lockS", "write", [None])


def _release_long_lock(tid, obj):
    held = yield PrimOp(obj, "read")
    if held == tid:
        yield PrimOp(obj, "write", [None])


def _handle_commit(env: ProtocolEnv, node: int, body):
    tid = body["tid"]
    writes = sorted(body["writes"])
    if env.variant.tag == NO_DDAP:
        yield from _install_writes(env, node, tid, writes)
        if body["writes"]:
            yield from _release_long_lock(tid, GLOBAL_LOCK)
        return
    for key, val, seq in writes:
        if node not in env.placement.groups[key]:
            continue
        yield from _install_writes(env, node, tid, [[key, val, seq]])
        yield from _release_long_lock(tid, f"{key}.lockL")
    if env.variant.tag == WEAK_IR and body["writes"]:
        for key in _local_items(env, node, [k for k, _ in body["reads"]]):
            yield from _release_long_lock(tid, f"{key}.lockL")


def _handle_abort(env: ProtocolEnv, node: int, body):
    tid = body["tid"]
    if env.variant.tag == NO_DDAP:
        if body["writes"]:
            yield from _release_long_lock(tid, GLOBAL_LOCK)
        return
    for key in _local_items(env, node, [k for k, _ in body["writes"]]):
        yield from _release_long_lock(tid, f"{key}.lockL")
    if env.variant.tag == WEAK_IR and body["writes"]:
        for key in _local_items(env, node, [k for k, _ in body["reads"]]):
            yield from _release_long_lock(tid, f"{key}.lockL")


def _handle_restart(env: ProtocolEnv, node: int, body):
    """no-seamless fallback signal: drop every long lock held for this txn."""
    tid = body["tid"]
    if env.variant.tag == NO_DDAP:
        if body["writes"]:
            yield from _release_long_lock(tid, GLOBAL_LOCK)
        return
    keys = [k for k, _ in body["reads"]] + [k for k, _ in body["writes"]]
    for key in _local_items(env, node, keys):
        yield from _release_long_lock(tid, f"{key}.lockL")
