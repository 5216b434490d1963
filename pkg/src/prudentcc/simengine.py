"""Closed-system discrete-event simulator for comparing concurrency control.

``mpl`` transactions are always in flight. Each operation takes one CPU
burst followed by one disk access (both queued FIFO on multi-server pools),
after which the protocol decides at zero simulated cost. Blocked
transactions give up their resources and are aborted when their block
quantum runs out; aborted transactions rerun the same script as a new
incarnation after a random restart delay; committed ones are replaced by a
freshly generated transaction.
"""

from __future__ import annotations

import dataclasses
import heapq
import itertools
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .baselines import OCC, Strict2PL
from .checker import EventKind, HistoryEvent, HistoryRecorder
from .core import (
    PROCEED,
    TIMED_BLOCKS,
    AbortReason,
    AbortTxn,
    Block,
    InvariantViolation,
    Operation,
    OpKind,
    Protocol,
    TxnId,
    TxnRecord,
)
from .ppcc import PPCC

PROTOCOL_NAMES = ("PPCC", "S2PL", "OCC")
DEFAULT_MPLS = (1, 2, 5, 10, 20, 30, 50, 75, 100, 150, 200)
DEFAULT_BLOCK_QUANTUM = 400.0


class ConfigInvalid(ValueError):
    pass


def make_protocol(name: str, history=None) -> Protocol:
    classes = {"PPCC": PPCC, "S2PL": Strict2PL, "2PL": Strict2PL, "OCC": OCC}
    try:
        return classes[name.upper()](history)
    except KeyError:
        raise ConfigInvalid(f"unknown protocol {name!r}; expected one of {', '.join(PROTOCOL_NAMES)}") from None


@dataclass(frozen=True)
class SimConfig:
    protocol: str = "PPCC"
    db_size: int = 500
    txn_size_mean: int = 8
    txn_size_halfwidth: int = 4
    write_prob: float = 0.2
    num_cpus: int = 4
    num_disks: int = 8
    cpu_burst_mean: float = 15.0
    cpu_burst_halfwidth: float = 5.0
    io_time_mean: float = 35.0
    io_time_halfwidth: float = 10.0
    horizon: float = 100_000.0
    mpl: int = 10
    block_quantum: float = DEFAULT_BLOCK_QUANTUM
    # restart delay is uniform on [0, restart_delay_max]; None means
    # twice the mean service time of one operation
    restart_delay_max: Optional[float] = None
    # a committed transaction that wrote anything spends one disk access
    # flushing its workspace before its terminal starts the next one
    commit_io: bool = True
    seed: int = 0

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @property
    def restart_delay_bound(self) -> float:
        if self.restart_delay_max is None:
            return 2 * (self.cpu_burst_mean + self.io_time_mean)
        return self.restart_delay_max

    def validate(self) -> "SimConfig":
        problems = []
        if self.protocol.upper() not in PROTOCOL_NAMES + ("2PL",):
            problems.append(f"protocol {self.protocol!r}")
        for name in ("db_size", "txn_size_mean", "num_cpus", "num_disks", "mpl"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("cpu_burst_mean", "io_time_mean", "horizon", "block_quantum"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if not 0 <= self.txn_size_halfwidth < self.txn_size_mean:
            problems.append("txn_size_halfwidth must be in [0, txn_size_mean)")
        if self.txn_size_mean + self.txn_size_halfwidth > self.db_size:
            problems.append("transactions could be longer than the database")
        if not 0 <= self.cpu_burst_halfwidth <= self.cpu_burst_mean:
            problems.append("cpu_burst_halfwidth out of range")
        if not 0 <= self.io_time_halfwidth <= self.io_time_mean:
            problems.append("io_time_halfwidth out of range")
        if not 0 <= self.write_prob <= 1:
            problems.append("write_prob must be in [0, 1]")
        if self.restart_delay_max is not None and self.restart_delay_max < 0:
            problems.append("restart_delay_max must be >= 0")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self


# -- random streams -------------------------------------------------------------

STREAMS = ("workload", "timing", "delays")


class UniformStream:
    """Buffered U[0, 1) draws from one numpy generator."""

    def __init__(self, seed_seq: np.random.SeedSequence, block: int = 4096) -> None:
        self._gen = np.random.default_rng(seed_seq)
        self._block = block
        self._buf: list = []
        self._i = 0

    def random(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self._gen.random(self._block).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()


def make_streams(seed: int) -> dict[str, UniformStream]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: UniformStream(ss) for name, ss in zip(STREAMS, children)}


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


# -- workload -------------------------------------------------------------------


def generate_txn(cfg: SimConfig, rng, stats: Optional[Counter] = None) -> tuple[Operation, ...]:
    """Random script: distinct reads, each write on an earlier read not yet written.

    A slot that comes up "write" when nothing is available to write becomes
    a read (counted as ``stats["fallback"]``).
    """
    lo = cfg.txn_size_mean - cfg.txn_size_halfwidth
    n = lo + int(rng.random() * (2 * cfg.txn_size_halfwidth + 1))
    ops = []
    read: set = set()
    writable: list = []
    for _ in range(n):
        if rng.random() < cfg.write_prob:
            if writable:
                x = writable.pop(int(rng.random() * len(writable)))
                ops.append(Operation(OpKind.WRITE, x))
                continue
            if stats is not None:
                stats["fallback"] += 1
        while True:
            x = int(rng.random() * cfg.db_size)
            if x not in read:
                break
        read.add(x)
        writable.append(x)
        ops.append(Operation(OpKind.READ, x))
    return tuple(ops)


# -- resources and metrics --------------------------------------------------------


class ResourcePool:
    """``servers`` identical servers in front of one FIFO queue."""

    def __init__(self, name: str, servers: int) -> None:
        self.name = name
        self.servers = servers
        self.busy: set[TxnId] = set()
        self.queue: deque = deque()

    def acquire(self, t: TxnId) -> bool:
        if len(self.busy) < self.servers:
            self.busy.add(t)
            return True
        self.queue.append(t)
        return False

    def release(self, t: TxnId) -> Optional[TxnId]:
        self.busy.remove(t)
        if self.queue:
            nxt = self.queue.popleft()
            self.busy.add(nxt)
            return nxt
        return None

    def check(self) -> None:
        if len(self.busy) > self.servers:
            raise InvariantViolation(f"{self.name}: {len(self.busy)} busy of {self.servers}")
        if self.queue and len(self.busy) < self.servers:
            raise InvariantViolation(f"{self.name}: idle server with a queue")


@dataclass
class RunMetrics:
    committed: int = 0
    aborted_by_cause: dict = field(default_factory=dict)
    restarts: int = 0
    blocks: int = 0

    @property
    def aborts(self) -> int:
        return sum(self.aborted_by_cause.values())

    def causes_str(self) -> str:
        return ";".join(f"{k}:{v}" for k, v in sorted(self.aborted_by_cause.items())) or "-"


@dataclass
class RunResult:
    config: SimConfig
    metrics: RunMetrics
    history: Optional[list[HistoryEvent]] = None
    # precedence edges the protocol admitted (PPCC only)
    edges: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.metrics, self.history))


# -- the simulator -----------------------------------------------------------------

_CPU_DONE, _IO_DONE, _TIMEOUT, _RESTART, _WAKE = range(5)
EVENT_KINDS = ("CpuDone", "IoDone", "TimeoutFired", "RestartDue", "Wake")


@dataclass
class _Slot:
    rec: TxnRecord
    finishing: bool = False
    episode: int = 0
    armed: bool = False


class Simulator:
    def __init__(self, cfg: SimConfig, trace: bool = False, check: bool = False) -> None:
        self.cfg = cfg.validate()
        self.history = HistoryRecorder() if trace else None
        self.proto = make_protocol(cfg.protocol, self.history)
        self.check = check
        streams = make_streams(cfg.seed)
        self.workload = streams["workload"]
        self.timing = streams["timing"]
        self.delays = streams["delays"]
        self.cpu = ResourcePool("cpu", cfg.num_cpus)
        self.disk = ResourcePool("disk", cfg.num_disks)
        self.metrics = RunMetrics()
        self.now = 0.0
        self._heap: list = []
        self._tick = itertools.count()
        self._next_id = itertools.count()
        self.live: dict[TxnId, _Slot] = {}
        self._restarting = 0
        # committed transactions still writing their workspace to disk
        self._flushing: set[TxnId] = set()
        self._wake_pending: set = set()
        self._commit_order: dict[TxnId, int] = {}

    def _schedule(self, at: float, kind: int, payload) -> None:
        heapq.heappush(self._heap, (at, next(self._tick), kind, payload))

    def run(self) -> RunResult:
        cfg = self.cfg
        for _ in range(cfg.mpl):
            self._start(TxnId(next(self._next_id)), generate_txn(cfg, self.workload))
        heap = self._heap
        while heap and heap[0][0] <= cfg.horizon:
            at, _, kind, payload = heapq.heappop(heap)
            if at < self.now:
                raise InvariantViolation(f"time went backwards: {at} < {self.now}")
            self.now = at
            if kind == _CPU_DONE:
                self._cpu_done(payload)
            elif kind == _IO_DONE:
                self._io_done(payload)
            elif kind == _WAKE:
                self._wake(payload)
            elif kind == _TIMEOUT:
                self._timeout(*payload)
            else:
                self._restarting -= 1
                self.metrics.restarts += 1
                self._start(*payload)
            if self.check:
                self._check_state()
        if self.check:
            self._check_commit_order()
        history = None
        if self.history is not None:
            # close the log: whatever is still running is cut off at the horizon
            for t in sorted(self.live):
                self.history.record(cfg.horizon, t, EventKind.ABORT)
            history = self.history.events
        edges = list(getattr(self.proto, "edge_log", ()))
        return RunResult(cfg, self.metrics, history, edges)

    # -- transaction lifecycle --------------------------------------------------

    def _start(self, t: TxnId, script: tuple[Operation, ...]) -> None:
        rec = TxnRecord(t, script)
        self.proto.begin(rec, self.now)
        self.live[t] = _Slot(rec)
        self._request_cpu(t)

    def _request_cpu(self, t: TxnId) -> None:
        if self.cpu.acquire(t):
            self._serve_cpu(t)

    def _serve_cpu(self, t: TxnId) -> None:
        c = self.cfg
        self._schedule(self.now + self.timing.uniform(c.cpu_burst_mean - c.cpu_burst_halfwidth, c.cpu_burst_mean + c.cpu_burst_halfwidth), _CPU_DONE, t)

    def _serve_disk(self, t: TxnId) -> None:
        c = self.cfg
        self._schedule(self.now + self.timing.uniform(c.io_time_mean - c.io_time_halfwidth, c.io_time_mean + c.io_time_halfwidth), _IO_DONE, t)

    def _cpu_done(self, t: TxnId) -> None:
        nxt = self.cpu.release(t)
        if nxt is not None:
            self._serve_cpu(nxt)
        if self.disk.acquire(t):
            self._serve_disk(t)

    def _io_done(self, t: TxnId) -> None:
        nxt = self.disk.release(t)
        if nxt is not None:
            self._serve_disk(nxt)
        if t in self._flushing:
            self._flushing.remove(t)
            self._start(TxnId(next(self._next_id)), generate_txn(self.cfg, self.workload))
            return
        self._decide(self.live[t])

    def _decide(self, slot: _Slot) -> None:
        proto = self.proto
        rec = slot.rec
        while True:
            decision = proto.finish(rec, self.now) if slot.finishing else proto.access(rec, self.now)
            if decision is PROCEED:
                slot.episode += 1
                slot.armed = False
                if slot.finishing:
                    self._committed(slot)
                    break
                rec.pc += 1
                if rec.done:
                    slot.finishing = True
                    continue
                self._request_cpu(rec.id)
            elif isinstance(decision, Block):
                self._blocked(slot, decision)
            elif isinstance(decision, AbortTxn):
                self._abort(slot, decision.reason)
            else:
                raise InvariantViolation(f"unknown decision {decision!r}")
            break
        self._flush_wakes()

    def _blocked(self, slot: _Slot, decision: Block) -> None:
        if not self.proto.may_block:
            raise InvariantViolation(f"{self.proto.name} issued a block")
        rec = slot.rec
        self.metrics.blocks += 1
        if self.history is not None:
            self.history.record(self.now, rec.id, EventKind.BLOCK, None)
        if decision.reason in TIMED_BLOCKS and not slot.armed:
            slot.armed = True
            self._schedule(rec.blocked.since + self.cfg.block_quantum, _TIMEOUT, (rec.id, slot.episode))

    def _committed(self, slot: _Slot) -> None:
        t = slot.rec.id
        del self.live[t]
        self.metrics.committed += 1
        self._commit_order[t] = len(self._commit_order)
        if self.cfg.commit_io and slot.rec.write_set:
            self._flushing.add(t)
            if self.disk.acquire(t):
                self._serve_disk(t)
            return
        self._start(TxnId(next(self._next_id)), generate_txn(self.cfg, self.workload))

    def _abort(self, slot: _Slot, reason: AbortReason) -> None:
        rec = slot.rec
        self.proto.abort(rec, self.now)
        del self.live[rec.id]
        causes = self.metrics.aborted_by_cause
        causes[reason.value] = causes.get(reason.value, 0) + 1
        self._restarting += 1
        delay = self.delays.uniform(0.0, self.cfg.restart_delay_bound)
        self._schedule(self.now + delay, _RESTART, (rec.id.restarted(), rec.script))

    def _flush_wakes(self) -> None:
        for t in self.proto.drain_woken():
            if t not in self._wake_pending:
                self._wake_pending.add(t)
                self._schedule(self.now, _WAKE, t)

    def _wake(self, t: TxnId) -> None:
        self._wake_pending.discard(t)
        slot = self.live.get(t)
        if slot is None or slot.rec.blocked is None:
            return
        if self.history is not None:
            self.history.record(self.now, t, EventKind.WAKE, None)
        self._decide(slot)

    def _timeout(self, t: TxnId, episode: int) -> None:
        slot = self.live.get(t)
        if slot is None or slot.episode != episode:
            return
        blocked = slot.rec.blocked
        if blocked is None or blocked.reason not in TIMED_BLOCKS:
            return
        self._abort(slot, AbortReason.BLOCK_TIMEOUT)
        self._flush_wakes()

    # -- runtime checks -----------------------------------------------------------

    def _check_state(self) -> None:
        self.cpu.check()
        self.disk.check()
        in_flight = len(self.live) + self._restarting + len(self._flushing)
        if in_flight != self.cfg.mpl:
            raise InvariantViolation(f"{len(self.live)} live + {self._restarting} restarting + "
                                     f"{len(self._flushing)} flushing != mpl {self.cfg.mpl}")
        self.proto.check_invariants()

    def _check_commit_order(self) -> None:
        order = self._commit_order
        for u, v in getattr(self.proto, "edge_log", ()):
            if u in order and v in order and not order[u] < order[v]:
                raise InvariantViolation(f"{v} committed before its predecessor {u}")


def run_simulation(cfg: SimConfig, trace: bool = False, check: bool = False) -> RunResult:
    return Simulator(cfg, trace=trace, check=check).run()


# -- sweeps -------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    protocol: str
    mpl: int
    seed: int
    metrics: RunMetrics


@dataclass
class SweepTable:
    rows: list[SweepRow]

    def curve(self, protocol: str) -> dict[int, float]:
        """Seed-averaged committed count per MPL."""
        per: dict[int, list] = {}
        for r in self.rows:
            if r.protocol == protocol:
                per.setdefault(r.mpl, []).append(r.metrics.committed)
        return {m: float(np.mean(v)) for m, v in sorted(per.items())}

    def peak(self, protocol: str) -> tuple[int, float]:
        """(mpl, committed) at the top of the seed-averaged curve."""
        curve = self.curve(protocol)
        mpl = max(curve, key=lambda m: (curve[m], -m))
        return mpl, curve[mpl]

    def peaks(self) -> dict[str, tuple[int, float]]:
        protocols = dict.fromkeys(r.protocol for r in self.rows)
        return {p: self.peak(p) for p in protocols}


def _run_cell(cfg: SimConfig) -> RunMetrics:
    return run_simulation(cfg).metrics


def cell_configs(template: SimConfig, mpl_list: Sequence[int], protocols: Iterable[str] = PROTOCOL_NAMES,
                 seeds: Iterable[int] = (0,), quanta: Optional[dict[str, float]] = None) -> list[SimConfig]:
    """One config per (protocol, mpl, seed); protocols share the derived seed so they see the same workload.

    ``quanta`` overrides the template's block quantum for the named protocols.
    """
    if not mpl_list:
        raise ConfigInvalid("empty mpl list")
    quanta = quanta or {}
    cells = []
    for p in protocols:
        q = quanta.get(p, template.block_quantum)
        for seed in seeds:
            for m in mpl_list:
                cells.append(template.replace(protocol=p, mpl=int(m), seed=derive_seed(seed, m),
                                              block_quantum=q).validate())
    return cells


def sweep_mpl(template: SimConfig, mpl_list: Sequence[int], protocols: Iterable[str] = PROTOCOL_NAMES,
              seeds: Iterable[int] = (0,), workers: int = 1,
              quanta: Optional[dict[str, float]] = None) -> SweepTable:
    protocols = list(protocols)
    seeds = list(seeds)
    cells = cell_configs(template, mpl_list, protocols, seeds, quanta)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            metrics = list(pool.map(_run_cell, cells, chunksize=4))
    else:
        metrics = [_run_cell(c) for c in cells]
    keys = [(p, s, int(m)) for p in protocols for s in seeds for m in mpl_list]
    rows = [SweepRow(p, m, s, met) for (p, s, m), met in zip(keys, metrics)]
    return SweepTable(rows)
