"""Strict two-phase locking and optimistic concurrency control, for comparison."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .core import (
    PROCEED,
    AbortReason,
    AbortTxn,
    BlockReason,
    Decision,
    InvariantViolation,
    ItemId,
    OpKind,
    Protocol,
    TxnId,
    TxnPhase,
    TxnRecord,
)


class LockMode(enum.Enum):
    SHARED = "S"
    EXCLUSIVE = "X"


@dataclass
class _LockEntry:
    mode: LockMode = LockMode.SHARED
    holders: set = field(default_factory=set)
    queue: deque = field(default_factory=deque)


class RwLockTable:
    """Shared/exclusive locks with FIFO queues.

    A request is granted when it is compatible with the current holders and
    nobody is queued ahead of it. An upgrade by the sole shared holder is
    granted at once; any other upgrade queues like a normal request.
    """

    def __init__(self, check: bool = True) -> None:
        self.entries: dict[ItemId, _LockEntry] = {}
        self.held: dict[TxnId, set[ItemId]] = {}
        self.check = check

    def mode_of(self, t: TxnId, x: ItemId):
        e = self.entries.get(x)
        if e is None or t not in e.holders:
            return None
        return e.mode

    def holders(self, x: ItemId) -> set[TxnId]:
        e = self.entries.get(x)
        return set(e.holders) if e else set()

    def _compatible(self, e: _LockEntry, t: TxnId, mode: LockMode) -> bool:
        if not e.holders:
            return True
        if mode is LockMode.SHARED:
            return e.mode is LockMode.SHARED
        return e.holders == {t}

    def _take(self, e: _LockEntry, x: ItemId, t: TxnId, mode: LockMode) -> None:
        if mode is LockMode.EXCLUSIVE:
            e.mode = LockMode.EXCLUSIVE
        elif not e.holders:
            e.mode = LockMode.SHARED
        e.holders.add(t)
        self.held.setdefault(t, set()).add(x)
        if self.check and e.mode is LockMode.EXCLUSIVE and len(e.holders) > 1:
            raise InvariantViolation(f"item {x}: exclusive lock shared by {sorted(e.holders)}")

    def request(self, t: TxnId, x: ItemId, mode: LockMode) -> bool:
        """Grant now (True) or queue the request (False)."""
        e = self.entries.setdefault(x, _LockEntry())
        current = self.mode_of(t, x)
        if current is LockMode.EXCLUSIVE or current is mode:
            return True
        upgrade = current is LockMode.SHARED
        if self._compatible(e, t, mode) and (upgrade or not e.queue):
            self._take(e, x, t, mode)
            return True
        if all(u != t for u, _ in e.queue):
            e.queue.append((t, mode))
        return False

    def _grant_queued(self, x: ItemId) -> list[TxnId]:
        e = self.entries.get(x)
        if e is None:
            return []
        granted = []
        while e.queue:
            t, mode = e.queue[0]
            if not self._compatible(e, t, mode):
                break
            e.queue.popleft()
            self._take(e, x, t, mode)
            granted.append(t)
            if mode is LockMode.EXCLUSIVE:
                break
        if not e.holders and not e.queue:
            del self.entries[x]
        return granted

    def cancel(self, t: TxnId) -> list[TxnId]:
        """Withdraw any queued request of ``t``; returns requests granted as a result."""
        granted = []
        for x in sorted(self.entries):
            e = self.entries.get(x)
            if e is None:
                continue
            if any(u == t for u, _ in e.queue):
                e.queue = deque((u, m) for u, m in e.queue if u != t)
                granted.extend(self._grant_queued(x))
        return granted

    def release_all(self, t: TxnId) -> list[TxnId]:
        granted = []
        for x in sorted(self.held.pop(t, ())):
            e = self.entries[x]
            e.holders.discard(t)
            granted.extend(self._grant_queued(x))
        return granted


class Strict2PL(Protocol):
    """Read locks shared, write locks exclusive, everything held until the end.

    Deadlocks are not detected; the simulator's block quantum aborts any
    transaction that waits too long.
    """

    name = "S2PL"

    def __init__(self, history=None) -> None:
        super().__init__(history)
        self.locks = RwLockTable()

    def access(self, rec: TxnRecord, now: float) -> Decision:
        op = rec.next_op()
        mode = LockMode.SHARED if op.kind is OpKind.READ else LockMode.EXCLUSIVE
        if not self.locks.request(rec.id, op.item, mode):
            blockers = self.locks.holders(op.item) - {rec.id}
            return self._block(rec, BlockReason.LOCK_WAIT, blockers, now)
        if op.kind is OpKind.READ:
            self._do_read(rec, op.item, now)
        else:
            self._do_write(rec, op.item, now)
        return self._proceed(rec)

    def finish(self, rec: TxnRecord, now: float) -> Decision:
        self._begin_commit(rec, now)
        self.commit(rec, now)
        return PROCEED

    def commit(self, rec: TxnRecord, now: float) -> None:
        self._flush_and_commit(rec, now)
        self._wake(self.locks.release_all(rec.id))

    def abort(self, rec: TxnRecord, now: float) -> None:
        if not rec.live:
            return
        woken = self.locks.cancel(rec.id)
        woken += self.locks.release_all(rec.id)
        self._discard(rec, now)
        self._wake(woken)

    def _wake(self, ids) -> None:
        for t in ids:
            if t in self.txns and t not in self.woken:
                self.woken.append(t)

    def check_invariants(self) -> None:
        for x, e in self.locks.entries.items():
            if e.mode is LockMode.EXCLUSIVE and len(e.holders) > 1:
                raise InvariantViolation(f"item {x}: incompatible holders {sorted(e.holders)}")
            for t in e.holders:
                if t not in self.txns:
                    raise InvariantViolation(f"finished {t} still holds {x}")


class OCC(Protocol):
    """Optimistic control with serial backward validation.

    Reads see the committed database, writes stay in the workspace. At the
    end a transaction is checked against the write sets of everyone who
    committed since it started; any overlap with its read set aborts it.
    """

    name = "OCC"
    may_block = False

    def __init__(self, history=None) -> None:
        super().__init__(history)
        self.commit_counter = 0
        self.start_number: dict[TxnId, int] = {}
        self.finish_number: dict[TxnId, int] = {}
        # (commit number, write set) of recent committers
        self._log: deque = deque()

    def begin(self, rec: TxnRecord, now: float) -> None:
        super().begin(rec, now)
        self.start_number[rec.id] = self.commit_counter

    def access(self, rec: TxnRecord, now: float) -> Decision:
        op = rec.next_op()
        if op.kind is OpKind.READ:
            self._do_read(rec, op.item, now)
        else:
            self._do_write(rec, op.item, now)
        return self._proceed(rec)

    def validate(self, rec: TxnRecord) -> bool:
        start = self.start_number[rec.id]
        for number, writes in reversed(self._log):
            if number <= start:
                break
            if not writes.isdisjoint(rec.read_set):
                return False
        return True

    def finish(self, rec: TxnRecord, now: float) -> Decision:
        self._begin_commit(rec, now)
        if not self.validate(rec):
            return AbortTxn(AbortReason.VALIDATION_FAILED)
        self.commit_counter += 1
        self.finish_number[rec.id] = self.commit_counter
        if rec.write_set:
            self._log.append((self.commit_counter, frozenset(rec.write_set)))
        self._flush_and_commit(rec, now)
        self.start_number.pop(rec.id)
        self._prune()
        return PROCEED

    def abort(self, rec: TxnRecord, now: float) -> None:
        if not rec.live:
            return
        self._discard(rec, now)
        self.start_number.pop(rec.id, None)
        self._prune()

    def _prune(self) -> None:
        oldest = min(self.start_number.values(), default=self.commit_counter)
        while self._log and self._log[0][0] <= oldest:
            self._log.popleft()

    def check_invariants(self) -> None:
        for t, start in self.start_number.items():
            if start > self.commit_counter:
                raise InvariantViolation(f"{t} started after the current commit number")
        for t, rec in self.txns.items():
            if rec.blocked is not None:
                raise InvariantViolation(f"OCC transaction {t} is blocked")
