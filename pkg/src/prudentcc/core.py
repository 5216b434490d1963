"""Transaction types shared by every protocol, and the prudent precedence graph."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

ItemId = int


class InvariantViolation(AssertionError):
    """A structural property the protocols promise was found broken at runtime."""


class PrecedenceRuleViolation(ValueError):
    """An edge was offered to the graph that the prudent precedence rule forbids."""


@dataclass(frozen=True, order=True)
class TxnId:
    id: int
    incarnation: int = 0

    def restarted(self) -> "TxnId":
        return TxnId(self.id, self.incarnation + 1)

    def __str__(self) -> str:
        if self.incarnation:
            return f"T{self.id}.{self.incarnation}"
        return f"T{self.id}"


class OpKind(enum.Enum):
    READ = "R"
    WRITE = "W"


@dataclass(frozen=True)
class Operation:
    kind: OpKind
    item: ItemId

    def __str__(self) -> str:
        return f"{self.kind.value}({self.item})"


def R(item: ItemId) -> Operation:
    return Operation(OpKind.READ, item)


def W(item: ItemId) -> Operation:
    return Operation(OpKind.WRITE, item)


class TxnPhase(enum.Enum):
    READ_PHASE = "ReadPhase"
    WAIT_TO_COMMIT = "WaitToCommit"
    COMMITTED = "Committed"
    ABORTED = "Aborted"


_LEGAL_TRANSITIONS = {
    (TxnPhase.READ_PHASE, TxnPhase.WAIT_TO_COMMIT),
    (TxnPhase.READ_PHASE, TxnPhase.ABORTED),
    (TxnPhase.WAIT_TO_COMMIT, TxnPhase.COMMITTED),
    (TxnPhase.WAIT_TO_COMMIT, TxnPhase.ABORTED),
}


class PrecedenceClass(enum.Enum):
    INDEPENDENT = "Independent"
    PRECEDING = "Preceding"
    PRECEDED = "Preceded"


class BlockReason(enum.Enum):
    RULE_VIOLATION = "RuleViolation"
    LOCK_WAIT = "LockWait"
    COMMIT_WAIT = "CommitWait"


# Only these blocks arm the timeout quantum; commit waits always resolve.
TIMED_BLOCKS = frozenset({BlockReason.RULE_VIOLATION, BlockReason.LOCK_WAIT})


class AbortReason(enum.Enum):
    LOCK_HOLDER_PRECEDED_BY_ME = "LockHolderPrecededByMe"
    BLOCK_TIMEOUT = "BlockTimeout"
    # Never issued: commit waits only target preceding transactions, which
    # cannot themselves commit-wait, so such cycles do not arise.
    COMMIT_WAIT_CYCLE = "CommitWaitCycle"
    VALIDATION_FAILED = "ValidationFailed"


# -- decisions ----------------------------------------------------------------


@dataclass(frozen=True)
class Proceed:
    def __str__(self) -> str:
        return "Proceed"


@dataclass(frozen=True)
class Block:
    reason: BlockReason
    blockers: frozenset = frozenset()

    def __str__(self) -> str:
        who = ",".join(str(t) for t in sorted(self.blockers))
        return f"Block({self.reason.value} on {who})"


@dataclass(frozen=True)
class AbortTxn:
    reason: AbortReason

    def __str__(self) -> str:
        return f"Abort({self.reason.value})"


PROCEED = Proceed()
Decision = Proceed | Block | AbortTxn


# -- transaction record -------------------------------------------------------


@dataclass
class BlockState:
    reason: BlockReason
    since: float
    blockers: frozenset


@dataclass
class TxnRecord:
    """Everything a protocol tracks about one incarnation of a transaction.

    ``workspace`` maps each item written so far to the pending-write marker
    (the writer's own id); the database only sees it at commit.
    ``observed`` maps each item read from the database to the id of the
    committed writer whose value was seen (``None`` for the initial value).
    """

    id: TxnId
    script: tuple[Operation, ...]
    phase: TxnPhase = TxnPhase.READ_PHASE
    pclass: PrecedenceClass = PrecedenceClass.INDEPENDENT
    read_set: set = field(default_factory=set)
    write_set: set = field(default_factory=set)
    workspace: dict = field(default_factory=dict)
    observed: dict = field(default_factory=dict)
    pc: int = 0
    blocked: Optional[BlockState] = None

    @property
    def done(self) -> bool:
        return self.pc >= len(self.script)

    def next_op(self) -> Operation:
        return self.script[self.pc]

    def set_phase(self, phase: TxnPhase) -> None:
        if (self.phase, phase) not in _LEGAL_TRANSITIONS:
            raise InvariantViolation(f"{self.id}: illegal phase change {self.phase.value} -> {phase.value}")
        self.phase = phase

    @property
    def live(self) -> bool:
        return self.phase in (TxnPhase.READ_PHASE, TxnPhase.WAIT_TO_COMMIT)


# -- conflicts ----------------------------------------------------------------


class ConflictKind(enum.Enum):
    RAW = "RAW"
    WAR = "WAR"
    WAW = "WAW"


@dataclass(frozen=True)
class ConflictReport:
    kind: ConflictKind
    item: ItemId
    reader: Optional[TxnId]
    writer: TxnId
    # the would-be precedence edge; None for a pure write-after-write
    edge: Optional[tuple[TxnId, TxnId]]


def detect_conflict(reader: TxnRecord, writer: TxnRecord, item: ItemId, kind: ConflictKind) -> ConflictReport:
    """Describe the precedence a conflict between two live transactions would create.

    Whichever side arrives second, the transaction that reads the item is
    serialized before the one that writes it: the reader sees the committed
    value, and the write only reaches the database at commit.
    """
    if reader.id == writer.id:
        raise ValueError("a transaction does not conflict with itself")
    if kind is ConflictKind.WAW:
        if item in reader.read_set or item in writer.read_set:
            raise ValueError("item was read by one side; classify as RAW or WAR")
        return ConflictReport(kind, item, None, writer.id, None)
    if kind is ConflictKind.RAW and item not in writer.workspace:
        raise ValueError(f"RAW: {writer.id} has no pending write of {item}")
    if kind is ConflictKind.WAR and item not in reader.read_set:
        raise ValueError(f"WAR: {reader.id} has not read {item}")
    if not (reader.live and writer.live):
        raise ValueError("conflicts are only tracked between uncommitted transactions")
    return ConflictReport(kind, item, reader.id, writer.id, (reader.id, writer.id))


# -- precedence graph -----------------------------------------------------------


class PrecedenceGraph:
    """Directed "serializes before" edges between uncommitted transactions.

    Admission is governed by the prudent precedence rule: the reading side
    must never have been preceded and the writing side must never have
    preceded anyone. A transaction's class is fixed by its first admitted
    edge and outlives the removal of its neighbours, so every edge runs from
    the preceding class to the preceded class and no path is longer than one
    edge.
    """

    def __init__(self) -> None:
        self._succ: dict[TxnId, set[TxnId]] = {}
        self._pred: dict[TxnId, set[TxnId]] = {}
        self._cls: dict[TxnId, PrecedenceClass] = {}

    def __len__(self) -> int:
        return len(self._cls)

    def __contains__(self, t: TxnId) -> bool:
        return t in self._cls

    def nodes(self) -> list[TxnId]:
        return sorted(self._cls)

    def edges(self) -> Iterator[tuple[TxnId, TxnId]]:
        for u in sorted(self._succ):
            for v in sorted(self._succ[u]):
                yield u, v

    def cls(self, t: TxnId) -> PrecedenceClass:
        return self._cls.get(t, PrecedenceClass.INDEPENDENT)

    def has_edge(self, u: TxnId, v: TxnId) -> bool:
        return v in self._succ.get(u, ())

    def predecessors(self, t: TxnId) -> set[TxnId]:
        return set(self._pred.get(t, ()))

    def successors(self, t: TxnId) -> set[TxnId]:
        return set(self._succ.get(t, ()))

    def allows(self, ti: TxnId, tj: TxnId) -> bool:
        """Would the rule admit ``ti`` (reader) preceding ``tj`` (writer)?"""
        if ti == tj:
            return False
        return self.cls(ti) is not PrecedenceClass.PRECEDED and self.cls(tj) is not PrecedenceClass.PRECEDING

    def add(self, ti: TxnId, tj: TxnId) -> None:
        self.add_all([(ti, tj)])

    def add_all(self, pairs: Iterable[tuple[TxnId, TxnId]]) -> None:
        """Admit every edge or none of them."""
        pairs = list(pairs)
        for ti, tj in pairs:
            if not self.allows(ti, tj):
                raise PrecedenceRuleViolation(
                    f"{ti} ({self.cls(ti).value}) may not precede {tj} ({self.cls(tj).value})"
                )
        # classes must agree across the batch too (e.g. t->u together with u->v)
        sources = {ti for ti, _ in pairs}
        targets = {tj for _, tj in pairs}
        if sources & targets:
            raise PrecedenceRuleViolation(f"batch would make {sorted(sources & targets)} both preceding and preceded")
        for ti, tj in pairs:
            self._succ.setdefault(ti, set()).add(tj)
            self._pred.setdefault(tj, set()).add(ti)
            self._cls[ti] = PrecedenceClass.PRECEDING
            self._cls[tj] = PrecedenceClass.PRECEDED
            if self._pred.get(ti) or self._succ.get(tj):
                raise InvariantViolation(f"edge {ti}->{tj} created a path of length two")

    def remove(self, t: TxnId) -> None:
        for v in self._succ.pop(t, ()):
            self._pred[v].discard(t)
            if not self._pred[v]:
                del self._pred[v]
        for u in self._pred.pop(t, ()):
            self._succ[u].discard(t)
            if not self._succ[u]:
                del self._succ[u]
        self._cls.pop(t, None)

    def check_invariants(self) -> None:
        """Re-verify the graph's structure from scratch; raise on any breach."""
        for u, v in self.edges():
            if u == v:
                raise InvariantViolation(f"self-edge on {u}")
            if self.cls(u) is not PrecedenceClass.PRECEDING or self.cls(v) is not PrecedenceClass.PRECEDED:
                raise InvariantViolation(f"edge {u}->{v} runs {self.cls(u).value}->{self.cls(v).value}")
            if self._succ.get(v):
                raise InvariantViolation(f"path of length two through {u}->{v}")
            if u not in self._pred.get(v, ()):
                raise InvariantViolation(f"edge {u}->{v} missing from predecessor index")
        if _has_cycle(self._succ):
            raise InvariantViolation("precedence graph has a cycle")


def _has_cycle(succ: dict) -> bool:
    white, grey, black = 0, 1, 2
    color: dict = {}
    for root in succ:
        if color.get(root, white) != white:
            continue
        stack = [(root, iter(succ.get(root, ())))]
        color[root] = grey
        while stack:
            node, it = stack[-1]
            for nxt in it:
                c = color.get(nxt, white)
                if c == grey:
                    return True
                if c == white:
                    color[nxt] = grey
                    stack.append((nxt, iter(succ.get(nxt, ()))))
                    break
            else:
                color[node] = black
                stack.pop()
    return False


# -- protocol base --------------------------------------------------------------


class Protocol:
    """State shared by the concurrency-control protocols.

    The simulator drives a protocol through :meth:`begin`, :meth:`access`
    (the record's next operation), :meth:`finish` (script complete) and
    :meth:`abort`. A ``Block`` decision leaves the record parked; when the
    condition it waits on may have cleared, its id is appended to
    :attr:`woken` and the driver re-issues the same call.
    """

    name = "?"
    may_block = True

    def __init__(self, history=None) -> None:
        self.history = history
        self.txns: dict[TxnId, TxnRecord] = {}
        # committed database state: item -> id of the last committed writer
        self.db: dict[ItemId, TxnId] = {}
        self.woken: list[TxnId] = []

    def begin(self, rec: TxnRecord, now: float) -> None:
        if rec.id in self.txns:
            raise InvariantViolation(f"{rec.id} started twice")
        self.txns[rec.id] = rec

    def access(self, rec: TxnRecord, now: float) -> Decision:
        raise NotImplementedError

    def finish(self, rec: TxnRecord, now: float) -> Decision:
        raise NotImplementedError

    def abort(self, rec: TxnRecord, now: float) -> None:
        raise NotImplementedError

    def drain_woken(self) -> list[TxnId]:
        woken, self.woken = self.woken, []
        return woken

    def check_invariants(self) -> None:
        """Full (possibly slow) consistency check; cheap checks run inline."""

    # helpers for subclasses

    def _emit(self, now: float, rec: TxnRecord, kind, item: Optional[ItemId] = None) -> None:
        if self.history is not None:
            self.history.record(now, rec.id, kind, item)

    def _do_read(self, rec: TxnRecord, x: ItemId, now: float) -> None:
        from .checker import EventKind

        if x not in rec.workspace:
            rec.observed[x] = self.db.get(x)
        rec.read_set.add(x)
        self._emit(now, rec, EventKind.READ_EXEC, x)

    def _do_write(self, rec: TxnRecord, x: ItemId, now: float) -> None:
        from .checker import EventKind

        rec.write_set.add(x)
        rec.workspace[x] = rec.id
        self._emit(now, rec, EventKind.WRITE_EXEC, x)

    def _begin_commit(self, rec: TxnRecord, now: float) -> None:
        from .checker import EventKind

        rec.set_phase(TxnPhase.WAIT_TO_COMMIT)
        self._emit(now, rec, EventKind.BEGIN_WAIT_TO_COMMIT)

    def _flush_and_commit(self, rec: TxnRecord, now: float) -> None:
        from .checker import EventKind

        for x in sorted(rec.workspace):
            self.db[x] = rec.id
            self._emit(now, rec, EventKind.FLUSH, x)
        rec.set_phase(TxnPhase.COMMITTED)
        rec.blocked = None
        self._emit(now, rec, EventKind.COMMIT)
        del self.txns[rec.id]

    def _discard(self, rec: TxnRecord, now: float) -> None:
        from .checker import EventKind

        rec.workspace.clear()
        rec.set_phase(TxnPhase.ABORTED)
        rec.blocked = None
        self._emit(now, rec, EventKind.ABORT)
        self.txns.pop(rec.id, None)

    def _block(self, rec: TxnRecord, reason: BlockReason, blockers, now: float) -> Block:
        blockers = frozenset(blockers)
        since = rec.blocked.since if rec.blocked is not None else now
        rec.blocked = BlockState(reason, since, blockers)
        return Block(reason, blockers)

    def _proceed(self, rec: TxnRecord) -> Proceed:
        rec.blocked = None
        return PROCEED
