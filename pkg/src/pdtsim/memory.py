"""Instrumented per-node shared memory.

Every data item replica is four base objects ("X1.val", "X1.seqNum",
"X1.lockS", "X1.lockL") plus one "node.globalLock" per node. All accesses go
through read/write/cas, each of which logs exactly one primitive step; reads
are trivial, writes and both CAS outcomes are non-trivial (a CAS may modify
the object regardless of success; the alternative reading, where a failed CAS
is trivial, is noted but not adopted).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from .errors import CrossNodeAccess
from .model import CRASH, PRIM, ExecutionTrace, Step, concurrent

GLOBAL_LOCK = "node.globalLock"

READ = "read"
WRITE = "write"
CAS = "cas"


def item_objects(item: str) -> list[str]:
    return [f"{item}.val", f"{item}.seqNum", f"{item}.lockS", f"{item}.lockL"]


@dataclass(frozen=True)
class BaseObjectId:
    node: int
    name: str


class NodeMemory:
    """Base objects of one node, with a logging hook for primitive steps."""

    def __init__(self, node_id: int, items: list[str], initials: dict[str, Any]):
        self.node_id = node_id
        self.cells: dict[str, Any] = {GLOBAL_LOCK: None}
        for item in items:
            self.cells[f"{item}.val"] = initials[item]
            self.cells[f"{item}.seqNum"] = 0
            self.cells[f"{item}.lockS"] = None
            self.cells[f"{item}.lockL"] = None

    def _check(self, proc_node: int, name: str) -> None:
        if proc_node != self.node_id:
            raise CrossNodeAccess(
                f"process on node {proc_node} touched node {self.node_id} memory"
            )
        if name not in self.cells:
            raise CrossNodeAccess(f"no base object {name!r} on node {self.node_id}")

    def read(self, proc_node: int, name: str) -> tuple[Any, bool]:
        self._check(proc_node, name)
        return self.cells[name], False

    def write(self, proc_node: int, name: str, value: Any) -> tuple[Any, bool]:
        self._check(proc_node, name)
        self.cells[name] = value
        return None, True

    def cas(self, proc_node: int, name: str, expected: Any, new: Any) -> tuple[Any, bool]:
        self._check(proc_node, name)
        ok = self.cells[name] == expected
        if ok:
            self.cells[name] = new
        return ok, True

    def apply(self, proc_node: int, op: str, name: str, args: list) -> tuple[Any, bool]:
        """Run one primitive; returns (return value, nontrivial flag)."""
        if op == READ:
            return self.read(proc_node, name)
        if op == WRITE:
            return self.write(proc_node, name, args[0])
        if op == CAS:
            return self.cas(proc_node, name, args[0], args[1])
        raise ValueError(f"unknown primitive {op!r}")

    def snapshot(self) -> dict[str, Any]:
        return dict(self.cells)


def replay_nontrivial(trace: ExecutionTrace, node_id: int, items: list[str],
                      initials: dict[str, Any]) -> dict[str, Any]:
    """Re-apply only the non-trivial prims of one node against fresh objects.

    Read steps are side-effect-free, so this must reproduce the node's final
    memory state.
    """
    mem = NodeMemory(node_id, items, initials)
    for s in trace.steps:
        if s.kind != PRIM or not s.nontrivial:
            continue
        if s.proc is None or s.proc.node != node_id:
            continue
        mem.apply(node_id, s.op, s.obj, s.fields.get("args") or [])
    return mem.snapshot()


def contending_pairs(trace: ExecutionTrace) -> set[tuple[int, int]]:
    """All pairs of primitive steps that contend, in both orientations.

    Two prims contend when they come from distinct concurrent transactions,
    touch the same base object on the same node, and at least one of them is
    non-trivial.
    """
    by_obj: dict[tuple[int, str], list[Step]] = {}
    for s in trace.steps:
        if s.kind == PRIM and s.proc is not None and s.txn is not None:
            by_obj.setdefault((s.proc.node, s.obj), []).append(s)

    conc_cache: dict[tuple[str, str], bool] = {}

    def conc(t1: str, t2: str) -> bool:
        key = (t1, t2) if t1 < t2 else (t2, t1)
        if key not in conc_cache:
            conc_cache[key] = concurrent(trace, t1, t2)
        return conc_cache[key]

    out: set[tuple[int, int]] = set()
    for steps in by_obj.values():
        for a in range(len(steps)):
            for b in range(a + 1, len(steps)):
                s1, s2 = steps[a], steps[b]
                if s1.txn == s2.txn:
                    continue
                if not (s1.nontrivial or s2.nontrivial):
                    continue
                if not conc(s1.txn, s2.txn):
                    continue
                out.add((s1.i, s2.i))
                out.add((s2.i, s1.i))
    return out
