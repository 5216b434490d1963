"""Histories and conflict-serializability checks.

A history is a totally ordered list of :class:`HistoryEvent`. Only reads
(``ReadExec``) and database writes (``Flush``) of committed incarnations take
part in the serialization graph; ``WriteExec`` marks a private workspace
write and is invisible to other transactions.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, TextIO

import numpy as np

BRUTE_FORCE_LIMIT = 8


class MalformedHistory(ValueError):
    pass


class TooLarge(ValueError):
    pass


class EventKind(enum.Enum):
    READ_EXEC = "ReadExec"
    WRITE_EXEC = "WriteExec"
    FLUSH = "Flush"
    BEGIN_WAIT_TO_COMMIT = "BeginWaitToCommit"
    COMMIT = "Commit"
    ABORT = "Abort"
    BLOCK = "Block"
    WAKE = "Wake"


_NEEDS_ITEM = {EventKind.READ_EXEC, EventKind.WRITE_EXEC, EventKind.FLUSH}
_TERMINAL = {EventKind.COMMIT, EventKind.ABORT}


@dataclass(frozen=True)
class HistoryEvent:
    seq: int
    time: float
    txn: int
    incarnation: int
    kind: EventKind
    item: Optional[int] = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.txn, self.incarnation)

    def to_line(self) -> str:
        item = "-" if self.item is None else str(self.item)
        return f"{self.seq} {self.time!r} {self.txn} {self.incarnation} {self.kind.value} {item}"

    @classmethod
    def from_line(cls, line: str) -> "HistoryEvent":
        parts = line.split()
        if len(parts) != 6:
            raise MalformedHistory(f"expected 6 fields, got {len(parts)}: {line!r}")
        seq, time, txn, inc, kind, item = parts
        try:
            return cls(
                int(seq),
                float(time),
                int(txn),
                int(inc),
                EventKind(kind),
                None if item == "-" else int(item),
            )
        except ValueError as exc:
            raise MalformedHistory(f"bad record {line!r}: {exc}") from None


class HistoryRecorder:
    """Append-only event log with a global sequence counter."""

    def __init__(self) -> None:
        self.events: list[HistoryEvent] = []

    def __len__(self) -> int:
        return len(self.events)

    def record(self, time: float, txn, kind: EventKind, item: Optional[int] = None) -> None:
        self.events.append(HistoryEvent(len(self.events), time, txn.id, txn.incarnation, kind, item))


HEADER = "# seq time txn incarnation kind item"


def write_history(events: Iterable[HistoryEvent], out: Path | str | TextIO) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w") as fh:
            write_history(events, fh)
        return
    out.write(HEADER + "\n")
    for ev in events:
        out.write(ev.to_line() + "\n")


def read_history(src: Path | str | TextIO) -> list[HistoryEvent]:
    if isinstance(src, (str, Path)):
        with open(src) as fh:
            return read_history(fh)
    events = []
    for line in src:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        events.append(HistoryEvent.from_line(line))
    return events


def validate(h: list[HistoryEvent]) -> None:
    """Raise MalformedHistory unless ``h`` is a complete, well-ordered history."""
    last_seq = None
    last_time = -math.inf
    finished: set = set()
    open_: set = set()
    began_commit: set = set()
    for ev in h:
        if last_seq is not None and ev.seq <= last_seq:
            raise MalformedHistory(f"sequence numbers not increasing at {ev.seq}")
        if ev.time < last_time:
            raise MalformedHistory(f"time runs backwards at seq {ev.seq}")
        last_seq, last_time = ev.seq, ev.time
        if ev.key in finished:
            raise MalformedHistory(f"event after termination of T{ev.txn}.{ev.incarnation} (seq {ev.seq})")
        if ev.kind in _NEEDS_ITEM and ev.item is None:
            raise MalformedHistory(f"{ev.kind.value} without item at seq {ev.seq}")
        if ev.kind is EventKind.BEGIN_WAIT_TO_COMMIT:
            began_commit.add(ev.key)
        if ev.kind is EventKind.COMMIT and ev.key not in began_commit:
            raise MalformedHistory(f"commit of T{ev.txn}.{ev.incarnation} without BeginWaitToCommit")
        if ev.kind in _TERMINAL:
            finished.add(ev.key)
            open_.discard(ev.key)
        else:
            open_.add(ev.key)
    if open_:
        txn, inc = min(open_)
        raise MalformedHistory(f"T{txn}.{inc} never commits or aborts (truncated history?)")


def committed(h: list[HistoryEvent]) -> set[tuple[int, int]]:
    return {ev.key for ev in h if ev.kind is EventKind.COMMIT}


def _data_ops(h: list[HistoryEvent]):
    """Database-level (key, is_write, item) operations of committed incarnations, in order.

    A read of an item the incarnation already wrote is served from its own
    workspace and touches no shared state.
    """
    done = committed(h)
    own_writes: set = set()
    for ev in h:
        if ev.key not in done:
            continue
        if ev.kind is EventKind.WRITE_EXEC:
            own_writes.add((ev.key, ev.item))
        elif ev.kind is EventKind.READ_EXEC and (ev.key, ev.item) not in own_writes:
            yield ev.key, False, ev.item
        elif ev.kind is EventKind.FLUSH:
            yield ev.key, True, ev.item


@dataclass
class SerializationGraph:
    nodes: set
    edges: set

    def successors(self) -> dict:
        succ = {n: set() for n in self.nodes}
        for u, v in self.edges:
            succ[u].add(v)
        return succ


def build_sg(h: list[HistoryEvent]) -> SerializationGraph:
    """Conflict graph over committed incarnations.

    ``Ti -> Tj`` whenever an operation of Ti precedes and conflicts with one
    of Tj on the same item (read/flush, flush/read, flush/flush).
    """
    validate(h)
    nodes = committed(h)
    edges: set = set()
    readers: dict = {}
    writers: dict = {}
    for key, is_write, item in _data_ops(h):
        rs = readers.setdefault(item, set())
        ws = writers.setdefault(item, set())
        for w in ws:
            if w != key:
                edges.add((w, key))
        if is_write:
            for r in rs:
                if r != key:
                    edges.add((r, key))
            ws.add(key)
        else:
            rs.add(key)
    return SerializationGraph(nodes, edges)


def is_acyclic(g: SerializationGraph) -> bool:
    succ = g.successors()
    state: dict = {}
    for root in sorted(succ):
        if root in state:
            continue
        state[root] = 1
        stack = [(root, iter(sorted(succ[root])))]
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                s = state.get(nxt)
                if s == 1:
                    return False
                if s is None:
                    state[nxt] = 1
                    stack.append((nxt, iter(sorted(succ[nxt]))))
                    advanced = True
                    break
            if not advanced:
                state[node] = 2
                stack.pop()
    return True


@lru_cache(maxsize=None)
def _all_orders(n: int) -> np.ndarray:
    """positions[k, i] = place of transaction i in the k-th serial order."""
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int8).reshape(-1, n)
    pos = np.empty_like(perms)
    rows = np.arange(perms.shape[0])[:, None]
    pos[rows, perms] = np.arange(n, dtype=np.int8)
    return pos


def brute_force_serializable(h: list[HistoryEvent]) -> bool:
    """Search every serial order of the committed incarnations for a conflict-equivalent one."""
    validate(h)
    txns = sorted(committed(h))
    if len(txns) > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{len(txns)} committed transactions; brute force handles at most {BRUTE_FORCE_LIMIT}")
    if len(txns) <= 1:
        return True
    index = {t: i for i, t in enumerate(txns)}
    ops = list(_data_ops(h))
    # every ordered pair of conflicting operations, as (earlier txn, later txn)
    must = set()
    for a in range(len(ops)):
        ka, wa, xa = ops[a]
        for b in range(a + 1, len(ops)):
            kb, wb, xb = ops[b]
            if xa == xb and ka != kb and (wa or wb):
                must.add((index[ka], index[kb]))
    if not must:
        return True
    pos = _all_orders(len(txns))
    first, second = np.array(sorted(must)).T
    ok = np.all(pos[:, first] < pos[:, second], axis=1)
    return bool(ok.any())
