"""Prudent-precedence concurrency control.

Read phase: conflicting reads and writes proceed when the prudent precedence
rule admits the resulting edge(s), otherwise the transaction blocks until a
counterparty leaves or its quantum runs out. Wait-to-commit: exclusive locks
on the write set, then wait for every predecessor to finish. Commit: flush,
unlock, and wake everyone who was waiting on us.
"""

from __future__ import annotations

from collections import defaultdict, deque
from typing import Optional

from .core import (
    PROCEED,
    AbortReason,
    AbortTxn,
    Block,
    BlockReason,
    Decision,
    InvariantViolation,
    ItemId,
    OpKind,
    PrecedenceGraph,
    Protocol,
    TxnId,
    TxnPhase,
    TxnRecord,
    _has_cycle,
)


class CommitLockTable:
    """Exclusive commit locks with a FIFO wait queue per item."""

    def __init__(self) -> None:
        self.holder: dict[ItemId, TxnId] = {}
        self.queue: dict[ItemId, deque] = defaultdict(deque)
        self.held_by: dict[TxnId, set[ItemId]] = defaultdict(set)

    def holder_of(self, x: ItemId) -> Optional[TxnId]:
        return self.holder.get(x)

    def grant(self, x: ItemId, t: TxnId) -> None:
        current = self.holder.get(x)
        if current is not None and current != t:
            raise InvariantViolation(f"item {x} already locked by {current}, cannot grant to {t}")
        self.holder[x] = t
        self.held_by[t].add(x)

    def enqueue(self, x: ItemId, t: TxnId) -> None:
        if t not in self.queue[x]:
            self.queue[x].append(t)

    def dequeue(self, x: ItemId, t: TxnId) -> None:
        q = self.queue.get(x)
        if q is not None and t in q:
            q.remove(t)
            if not q:
                del self.queue[x]

    def release_all(self, t: TxnId) -> list[TxnId]:
        """Unlock everything ``t`` holds; return the drained waiters in FIFO order."""
        waiters = []
        for x in sorted(self.held_by.pop(t, ())):
            del self.holder[x]
            q = self.queue.pop(x, None)
            if q:
                waiters.extend(q)
        return waiters


class PPCC(Protocol):
    name = "PPCC"

    def __init__(self, history=None) -> None:
        super().__init__(history)
        self.graph = PrecedenceGraph()
        self.locks = CommitLockTable()
        self.readers: dict[ItemId, set[TxnId]] = defaultdict(set)
        self.writers: dict[ItemId, set[TxnId]] = defaultdict(set)
        # blocker -> transactions whose pending step waits on it
        self.waiters: dict[TxnId, set[TxnId]] = defaultdict(set)
        self._queued_on: dict[TxnId, ItemId] = {}
        # every edge ever admitted, for order-fidelity checks
        self.edge_log: list[tuple[TxnId, TxnId]] = []

    # -- read phase -----------------------------------------------------------

    def access(self, rec: TxnRecord, now: float) -> Decision:
        if rec.phase is not TxnPhase.READ_PHASE or rec.done:
            raise InvariantViolation(f"{rec.id} cannot access in phase {rec.phase.value}")
        op = rec.next_op()
        if op.kind is OpKind.READ:
            return self.read(rec, op.item, now)
        return self.write(rec, op.item, now)

    def _locked_check(self, rec: TxnRecord, x: ItemId, now: float) -> Optional[Decision]:
        holder = self.locks.holder_of(x)
        if holder is None or holder == rec.id:
            return None
        if self.graph.has_edge(rec.id, holder):
            return AbortTxn(AbortReason.LOCK_HOLDER_PRECEDED_BY_ME)
        self.locks.enqueue(x, rec.id)
        self._queued_on[rec.id] = x
        return self._block(rec, BlockReason.LOCK_WAIT, {holder}, now)

    def _admit(self, rec: TxnRecord, pairs: list[tuple[TxnId, TxnId]], now: float) -> Optional[Decision]:
        """Add all edges, or block on the counterparties that make the rule fail."""
        t = rec.id
        bad = [i if j == t else j for i, j in pairs if not self.graph.allows(i, j)]
        if bad:
            for b in bad:
                self.waiters[b].add(t)
            return self._block(rec, BlockReason.RULE_VIOLATION, bad, now)
        if pairs:
            self.graph.add_all(pairs)
            self.edge_log.extend(pairs)
            for i, j in pairs:
                self.txns[i].pclass = self.graph.cls(i)
                self.txns[j].pclass = self.graph.cls(j)
                if self.txns[j].phase is TxnPhase.WAIT_TO_COMMIT:
                    raise InvariantViolation(f"{j} gained predecessor {i} while waiting to commit")
        return None

    def read(self, rec: TxnRecord, x: ItemId, now: float) -> Decision:
        decision = self._locked_check(rec, x, now)
        if decision is not None:
            return decision
        t = rec.id
        if x not in rec.workspace:
            # strict protocol: we read the committed value and precede every pending writer
            pairs = [(t, w) for w in sorted(self.writers.get(x, ())) if w != t]
            decision = self._admit(rec, pairs, now)
            if decision is not None:
                return decision
        self._do_read(rec, x, now)
        self.readers[x].add(t)
        return self._proceed(rec)

    def write(self, rec: TxnRecord, x: ItemId, now: float) -> Decision:
        decision = self._locked_check(rec, x, now)
        if decision is not None:
            return decision
        t = rec.id
        pairs = [(r, t) for r in sorted(self.readers.get(x, ())) if r != t]
        decision = self._admit(rec, pairs, now)
        if decision is not None:
            return decision
        self._do_write(rec, x, now)
        self.writers[x].add(t)
        return self._proceed(rec)

    # -- wait-to-commit and commit ---------------------------------------------

    def finish(self, rec: TxnRecord, now: float) -> Decision:
        if rec.phase is TxnPhase.READ_PHASE:
            decision = self.enter_wait_to_commit(rec, now)
            if decision is not PROCEED:
                return decision
        if self.try_commit(rec, now):
            return PROCEED
        preds = self.graph.predecessors(rec.id)
        for p in preds:
            self.waiters[p].add(rec.id)
        return self._block(rec, BlockReason.COMMIT_WAIT, preds, now)

    def enter_wait_to_commit(self, rec: TxnRecord, now: float) -> Decision:
        """Lock the write set in ascending item order; PROCEED once all are held."""
        if not rec.done:
            raise InvariantViolation(f"{rec.id} has operations left")
        t = rec.id
        for x in sorted(rec.write_set):
            holder = self.locks.holder_of(x)
            if holder == t:
                continue
            if holder is None:
                self.locks.grant(x, t)
                continue
            if self.graph.has_edge(t, holder):
                return AbortTxn(AbortReason.LOCK_HOLDER_PRECEDED_BY_ME)
            self.locks.enqueue(x, t)
            self._queued_on[t] = x
            return self._block(rec, BlockReason.LOCK_WAIT, {holder}, now)
        self._begin_commit(rec, now)
        return PROCEED

    def try_commit(self, rec: TxnRecord, now: float) -> bool:
        """Commit if nothing precedes ``rec`` any more; False means still waiting."""
        if rec.phase is not TxnPhase.WAIT_TO_COMMIT:
            raise InvariantViolation(f"{rec.id} is not waiting to commit")
        if self.graph.predecessors(rec.id):
            return False
        self._unregister(rec.id)
        self._flush_and_commit(rec, now)
        self._leave(rec)
        return True

    def abort(self, rec: TxnRecord, now: float) -> None:
        if not rec.live:
            return
        self._unregister(rec.id)
        self._discard(rec, now)
        self._leave(rec)

    def _leave(self, rec: TxnRecord) -> None:
        t = rec.id
        woken = self.locks.release_all(t)
        for x in rec.read_set:
            self._drop(self.readers, x, t)
        for x in rec.write_set:
            self._drop(self.writers, x, t)
        self.graph.remove(t)
        woken.extend(sorted(self.waiters.pop(t, ())))
        self._wake(woken)

    @staticmethod
    def _drop(index: dict, x: ItemId, t: TxnId) -> None:
        s = index.get(x)
        if s is not None:
            s.discard(t)
            if not s:
                del index[x]

    def _unregister(self, t: TxnId) -> None:
        """Forget every wait ``t`` has registered (the step will be re-evaluated)."""
        rec = self.txns.get(t)
        blockers = rec.blocked.blockers if rec is not None and rec.blocked is not None else ()
        for b in blockers:
            s = self.waiters.get(b)
            if s is not None:
                s.discard(t)
                if not s:
                    del self.waiters[b]
        x = self._queued_on.pop(t, None)
        if x is not None:
            self.locks.dequeue(x, t)

    def _wake(self, ids) -> None:
        seen = set()
        for w in ids:
            if w in seen or w not in self.txns:
                continue
            seen.add(w)
            self._unregister(w)
            self.woken.append(w)

    # -- checks -----------------------------------------------------------------

    def check_invariants(self) -> None:
        self.graph.check_invariants()
        for x, t in self.locks.holder.items():
            if t not in self.txns:
                raise InvariantViolation(f"lock on {x} held by finished {t}")
        for x, q in self.locks.queue.items():
            for t in q:
                if t not in self.txns:
                    raise InvariantViolation(f"finished {t} still queued on {x}")
        # wait-for graph: a lock waiter never precedes the holder it waits on,
        # and commit waits alone never close a cycle (every blocking cycle
        # passes through a timed block and so is broken by the quantum)
        commit_waits: dict = {}
        for t, rec in self.txns.items():
            if rec.blocked is None:
                continue
            if rec.blocked.reason is BlockReason.LOCK_WAIT:
                for h in rec.blocked.blockers:
                    if self.graph.has_edge(t, h):
                        raise InvariantViolation(f"{t} waits on lock of {h} which it precedes")
            elif rec.blocked.reason is BlockReason.COMMIT_WAIT:
                commit_waits[t] = set(rec.blocked.blockers)
                if rec.phase is not TxnPhase.WAIT_TO_COMMIT:
                    raise InvariantViolation(f"{t} commit-waits outside wait-to-commit")
        if _has_cycle(commit_waits):
            raise InvariantViolation("deadlock among wait-to-commit transactions")
