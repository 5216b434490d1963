"""Hand-scheduled replays of small PPCC schedules.

A :class:`ScheduleRunner` drives a protocol directly, one step at a time,
without the simulator's timing. Woken transactions are re-evaluated right
after the step that woke them, in wake order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .checker import HistoryRecorder, build_sg, is_acyclic
from .core import PROCEED, AbortTxn, Block, Operation, OpKind, Protocol, TxnId, TxnPhase, TxnRecord
from .ppcc import PPCC


def item(name: str) -> int:
    """Items are written as letters in the worked examples: a=0, b=1, ..."""
    return ord(name) - ord("a")


def item_name(x: int) -> str:
    return chr(ord("a") + x)


def parse_script(text: str) -> tuple[Operation, ...]:
    """``"R(b) W(a)"`` -> operations."""
    ops = []
    for tok in text.split():
        kind, name = tok[0], tok[2:-1]
        ops.append(Operation(OpKind(kind), item(name)))
    return tuple(ops)


@dataclass
class ScheduleRunner:
    scripts: dict[int, str]
    protocol_factory: Callable[..., Protocol] = PPCC
    out: Optional[Callable[[str], None]] = None
    log: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.history = HistoryRecorder()
        self.proto = self.protocol_factory(self.history)
        self.recs: dict[int, TxnRecord] = {}
        self.commit_order: list[int] = []
        self.now = 0.0
        for i, text in self.scripts.items():
            rec = TxnRecord(TxnId(i), parse_script(text))
            self.recs[i] = rec
            self.proto.begin(rec, self.now)

    def _say(self, line: str) -> None:
        if self.out is not None:
            self.out(line)

    def _label(self, rec: TxnRecord) -> str:
        if rec.done:
            return f"wc{rec.id.id}"
        op = rec.next_op()
        return f"{op.kind.value}{rec.id.id}({item_name(op.item)})"

    def _apply(self, rec: TxnRecord, resumed: bool = False):
        label = self._label(rec)
        before = set(getattr(self.proto, "edge_log", ()))
        if rec.done:
            decision = self.proto.finish(rec, self.now)
        else:
            decision = self.proto.access(rec, self.now)
        if decision is PROCEED:
            if rec.phase is TxnPhase.COMMITTED:
                self.commit_order.append(rec.id.id)
            else:
                rec.pc += 1
        elif isinstance(decision, AbortTxn):
            self.proto.abort(rec, self.now)
        new_edges = [e for e in getattr(self.proto, "edge_log", ()) if e not in before]
        self.log.append((label, decision, new_edges))
        note = "  (resumed)" if resumed else ""
        edges = "  new edges: " + ", ".join(f"{u}->{v}" for u, v in new_edges) if new_edges else ""
        done = "  committed" if rec.phase is TxnPhase.COMMITTED else ""
        self._say(f"{label:8s} {decision}{edges}{done}{note}")
        self.now += 1.0
        return decision

    def step(self, txn: int, expect: Optional[str] = None):
        """Run the next step of ``txn`` (its next operation, or wait-to-commit once the script is done)."""
        rec = self.recs[txn]
        if expect is not None and self._label(rec) != expect:
            raise ValueError(f"schedule expects {expect}, T{txn} is at {self._label(rec)}")
        decision = self._apply(rec)
        self._resume_woken()
        return decision

    def _resume_woken(self) -> None:
        while True:
            woken = self.proto.drain_woken()
            if not woken:
                return
            for t in woken:
                rec = self.recs[t.id]
                if rec.live and rec.blocked is not None:
                    self._apply(rec, resumed=True)

    def run(self, schedule: str) -> None:
        """Space-separated steps such as ``"R1(b) W1(a) wc1"``."""
        for tok in schedule.split():
            txn = int(tok[2]) if tok.startswith("wc") else int(tok[1])
            self.step(txn, expect=tok)

    # -- inspection -----------------------------------------------------------

    def decision_of(self, label: str, occurrence: int = 0):
        hits = [d for lab, d, _ in self.log if lab == label]
        return hits[occurrence] if len(hits) > occurrence else None

    def serialization_graph(self):
        return build_sg(self.history.events)


class Expect:
    """Collects divergences between a replay and the narrated outcome."""

    def __init__(self, out: Optional[Callable[[str], None]] = None) -> None:
        self.failures: list[str] = []
        self.out = out

    def __call__(self, ok: bool, what: str) -> None:
        if self.out is not None:
            self.out(f"  [{'ok' if ok else 'FAIL'}] {what}")
        if not ok:
            self.failures.append(what)


T = TxnId


def _finish_all(run: ScheduleRunner, order) -> None:
    for i in order:
        rec = run.recs[i]
        while rec.live and rec.blocked is None:
            run.step(i)


def example1(out=None) -> list[str]:
    """Read-after-write: R1(b) W1(a) R2(a). T2 reads the old a and precedes T1."""
    run = ScheduleRunner({1: "R(b) W(a)", 2: "R(a) W(e)"}, out=out)
    check = Expect(out)
    run.run("R1(b) W1(a) R2(a)")
    check(run.decision_of("R2(a)") is PROCEED, "R2(a) proceeds without blocking")
    check(run.proto.graph.has_edge(T(2), T(1)), "precedence T2 -> T1 recorded")
    check(run.recs[2].observed.get(item("a"), "missing") is None, "T2 read the value of a from before W1(a)")
    run.run("W2(e) wc1 wc2")
    check(run.commit_order == [2, 1], f"T2 commits before T1 (order {run.commit_order})")
    check(is_acyclic(run.serialization_graph()), "history is serializable")
    return check.failures


def example2(out=None) -> list[str]:
    """Write-after-read: R1(b) R2(a) W1(a). The write proceeds and T2 precedes T1."""
    run = ScheduleRunner({1: "R(b) W(a)", 2: "R(a) W(e)"}, out=out)
    check = Expect(out)
    run.run("R1(b) R2(a) W1(a)")
    check(run.decision_of("W1(a)") is PROCEED, "W1(a) proceeds without blocking")
    check(run.proto.graph.has_edge(T(2), T(1)), "precedence T2 -> T1 recorded")
    run.run("W2(e) wc1 wc2")
    check(run.commit_order == [2, 1], f"T2 commits before T1 (order {run.commit_order})")
    check(is_acyclic(run.serialization_graph()), "history is serializable")
    return check.failures


def example3(out=None) -> list[str]:
    """A violating transaction: R3(e) would make preceding T2 preceded, so T3 blocks."""
    run = ScheduleRunner({1: "R(b) W(a)", 2: "R(a) W(e)", 3: "R(e)"}, out=out)
    check = Expect(out)
    run.run("R1(b) W1(a) R2(a)")
    check(run.proto.graph.has_edge(T(2), T(1)), "precedence T2 -> T1 established by R2(a)")
    check(run.proto.graph.cls(T(2)).value == "Preceding", "T2 is a preceding transaction")
    run.run("W2(e) R3(e)")
    d = run.decision_of("R3(e)")
    check(isinstance(d, Block) and d.reason.value == "RuleViolation", f"R3(e) is suspended as a rule violation ({d})")
    check(not run.proto.graph.has_edge(T(3), T(2)), "no edge T3 -> T2 was admitted")
    run.run("wc2")
    check(run.decision_of("R3(e)", 1) is PROCEED, "T3 resumes once T2 commits")
    check(run.recs[3].observed.get(item("e")) == T(2), "T3 reads the value of e written by T2")
    _finish_all(run, [1, 3])
    check(sorted(run.commit_order) == [1, 2, 3], f"all three commit (order {run.commit_order})")
    sg = run.serialization_graph()
    taken = {((u.id, u.incarnation), (v.id, v.incarnation)) for u, v in run.proto.edge_log}
    check(taken <= sg.edges, "every precedence edge taken appears in the serialization graph")
    check(is_acyclic(sg), "history is serializable")
    return check.failures


def example4(out=None) -> list[str]:
    """R1(b) hits b locked by wait-to-commit T2, which T1 precedes: T1 aborts, T2 commits."""
    run = ScheduleRunner({1: "R(a) R(b)", 2: "R(b) W(a) W(b)"}, out=out)
    check = Expect(out)
    run.run("R1(a) R2(b) W2(a)")
    check(run.proto.graph.has_edge(T(1), T(2)), "W2(a) establishes T1 -> T2")
    run.run("W2(b) wc2")
    d = run.decision_of("wc2")
    locked = {x for x, h in run.proto.locks.holder.items() if h == T(2)}
    check(locked == {item("a"), item("b")}, "T2 locks a and b on entering wait-to-commit")
    check(isinstance(d, Block) and d.reason.value == "CommitWait" and T(1) in d.blockers, f"T2 waits for T1 ({d})")
    run.run("R1(b)")
    d = run.decision_of("R1(b)")
    check(isinstance(d, AbortTxn) and d.reason.value == "LockHolderPrecededByMe", f"R1(b) aborts T1 ({d})")
    check(run.recs[1].phase is TxnPhase.ABORTED, "T1 is aborted")
    check(run.commit_order == [2], f"T2 then commits (order {run.commit_order})")
    sg = run.serialization_graph()
    check(sg.nodes == {(2, 0)} and not sg.edges, "serialization graph is the single node T2")
    return check.failures


SCENARIOS = {"example1": example1, "example2": example2, "example3": example3, "example4": example4}
