from collections import Counter

import numpy as np
import pytest

from prudentcc.checker import build_sg, is_acyclic
from prudentcc.core import InvariantViolation, OpKind, TxnId
from prudentcc.simengine import (
    ConfigInvalid,
    ResourcePool,
    SimConfig,
    Simulator,
    derive_seed,
    generate_txn,
    make_streams,
    run_simulation,
    sweep_mpl,
)

SHORT = dict(horizon=4000.0)


def expected_write_counts(n_lo, n_hi, p):
    """Exact E[writes] and E[fallbacks] per transaction, by dynamic programming over slots.

    State: how many read items are still waiting to be written.
    """
    writes = fallbacks = slots = 0.0
    lengths = range(n_lo, n_hi + 1)
    for n in lengths:
        dist = np.zeros(n + 2)
        dist[0] = 1.0
        for _ in range(n):
            nxt = np.zeros_like(dist)
            writes += p * dist[1:].sum()
            fallbacks += p * dist[0]
            nxt[:-1] += p * dist[1:]
            nxt[1] += p * dist[0]
            nxt[1:] += (1 - p) * dist[:-1]
            dist = nxt
        slots += n
    k = len(lengths)
    return writes / k, fallbacks / k, slots / k


def prob_writes_something(n_lo, n_hi, p):
    """Exact chance that a script holds at least one write."""
    total = 0.0
    for n in range(n_lo, n_hi + 1):
        # mass of scripts with no write yet, by number of items read so far
        dist = np.zeros(n + 1)
        dist[0] = 1.0
        for _ in range(n):
            nxt = np.zeros_like(dist)
            nxt[1:] += (1 - p) * dist[:-1]
            nxt[1] += p * dist[0]
            dist = nxt
        total += 1.0 - dist.sum()
    return total / (n_hi - n_lo + 1)


def sample(cfg, n=10_000, seed=7):
    rng = make_streams(seed)["workload"]
    stats = Counter()
    txns = [generate_txn(cfg, rng, stats) for _ in range(n)]
    return txns, stats


def test_generator_shape():
    cfg = SimConfig(db_size=100, write_prob=0.5)
    txns, _ = sample(cfg, 2000)
    for ops in txns:
        assert 4 <= len(ops) <= 12
        reads = [op.item for op in ops if op.kind is OpKind.READ]
        writes = [op.item for op in ops if op.kind is OpKind.WRITE]
        assert len(set(reads)) == len(reads)
        assert len(set(writes)) == len(writes)
        for k, op in enumerate(ops):
            if op.kind is OpKind.WRITE:
                assert any(o.kind is OpKind.READ and o.item == op.item for o in ops[:k])
        assert all(0 <= x < 100 for x in reads)


@pytest.mark.parametrize("p", [0.2, 0.5])
def test_write_fraction_matches_exact_oracle(p):
    cfg = SimConfig(write_prob=p)
    txns, stats = sample(cfg)
    w_exp, f_exp, n_exp = expected_write_counts(4, 12, p)
    writes = sum(op.kind is OpKind.WRITE for ops in txns for op in ops)
    slots = sum(len(ops) for ops in txns)
    assert writes / len(txns) == pytest.approx(w_exp, rel=0.03)
    assert stats["fallback"] / len(txns) == pytest.approx(f_exp, rel=0.05)
    assert slots / len(txns) == pytest.approx(n_exp, rel=0.01)
    # the coin itself lands on "write" at the configured rate
    assert abs((writes + stats["fallback"]) / slots - p) < 0.01


def test_half_writes_approach_every_read_written():
    # short scripts leave reads unwritten at the end; the share written climbs toward one with length
    ratios = []
    for size in (8, 64, 512):
        cfg = SimConfig(write_prob=0.5, txn_size_mean=size, txn_size_halfwidth=0, db_size=1000)
        txns, _ = sample(cfg, 40_000 // size)
        reads = sum(op.kind is OpKind.READ for ops in txns for op in ops)
        writes = sum(op.kind is OpKind.WRITE for ops in txns for op in ops)
        w_exp, _, n_exp = expected_write_counts(size, size, 0.5)
        assert writes / reads == pytest.approx(w_exp / (n_exp - w_exp), rel=0.05)
        ratios.append(writes / reads)
    assert ratios[0] < ratios[1] < ratios[2]
    assert ratios[2] > 0.9


def test_no_writes_at_zero():
    txns, _ = sample(SimConfig(write_prob=0.0), 500)
    assert all(op.kind is OpKind.READ for ops in txns for op in ops)


@pytest.mark.parametrize("bad", [
    dict(mpl=0), dict(db_size=0), dict(write_prob=1.5), dict(protocol="MVCC"),
    dict(cpu_burst_halfwidth=20.0), dict(block_quantum=0.0), dict(txn_size_halfwidth=8),
    dict(restart_delay_max=-1.0),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigInvalid):
        SimConfig(**bad).validate()


def test_resource_pool_fifo():
    pool = ResourcePool("cpu", 2)
    assert pool.acquire(TxnId(1)) and pool.acquire(TxnId(2))
    assert not pool.acquire(TxnId(3)) and not pool.acquire(TxnId(4))
    assert pool.release(TxnId(2)) == TxnId(3)
    assert pool.release(TxnId(1)) == TxnId(4)
    pool.check()
    pool.queue.append(TxnId(9))
    pool.busy.clear()
    with pytest.raises(InvariantViolation):
        pool.check()


def test_prob_writes_something_oracle():
    cfg = SimConfig()
    txns, _ = sample(cfg, 20_000)
    share = np.mean([any(op.kind is OpKind.WRITE for op in ops) for ops in txns])
    assert share == pytest.approx(prob_writes_something(4, 12, 0.2), abs=0.01)


@pytest.mark.parametrize("protocol", ["PPCC", "S2PL", "OCC"])
@pytest.mark.parametrize("commit_io", [False, True])
def test_single_transaction_closed_form(protocol, commit_io):
    # one terminal: a cycle is 8 operations of 15 + 35 on average, plus a flush if anything was written
    cycle = 8 * 50 + (35 * prob_writes_something(4, 12, 0.2) if commit_io else 0)
    runs = [run_simulation(SimConfig(protocol=protocol, mpl=1, seed=s, commit_io=commit_io)).metrics
            for s in range(8)]
    assert all(m.aborts == 0 and m.blocks == 0 for m in runs)
    assert np.mean([m.committed for m in runs]) == pytest.approx(100_000 / cycle, rel=0.02)


@pytest.mark.parametrize("protocol", ["PPCC", "S2PL", "OCC"])
def test_same_seed_same_everything(protocol):
    cfg = SimConfig(protocol=protocol, db_size=100, mpl=15, seed=11, **SHORT)
    a, b = run_simulation(cfg, trace=True), run_simulation(cfg, trace=True)
    assert a.metrics == b.metrics
    assert [e.to_line() for e in a.history] == [e.to_line() for e in b.history]
    c = run_simulation(cfg.replace(seed=12), trace=True)
    assert c.history != a.history


def test_read_only_workload_is_protocol_independent():
    counts = {p: run_simulation(SimConfig(protocol=p, write_prob=0.0, db_size=100, mpl=20, seed=5, **SHORT)).metrics
              for p in ("PPCC", "S2PL", "OCC")}
    assert len({m.committed for m in counts.values()}) == 1
    assert all(m.aborts == 0 and m.blocks == 0 for m in counts.values())


@pytest.mark.parametrize("protocol", ["PPCC", "S2PL", "OCC"])
@pytest.mark.parametrize("db", [20, 100])
def test_checked_runs_are_serializable(protocol, db):
    # check=True re-verifies pools, conservation and protocol invariants after every event
    res = run_simulation(SimConfig(protocol=protocol, db_size=db, write_prob=0.5, mpl=25, seed=1, **SHORT),
                         trace=True, check=True)
    assert res.metrics.committed > 0
    assert is_acyclic(build_sg(res.history))
    assert res.metrics.committed == sum(e.kind.value == "Commit" for e in res.history)


def test_sweep_one_cell():
    table = sweep_mpl(SimConfig(**SHORT), [5], protocols=["OCC"])
    assert len(table.rows) == 1
    assert table.peak("OCC")[0] == 5


def test_sweep_quanta_override():
    table = sweep_mpl(SimConfig(db_size=100, **SHORT), [20], protocols=["PPCC"], quanta={"PPCC": 50.0})
    direct = run_simulation(SimConfig(db_size=100, mpl=20, seed=derive_seed(0, 20), block_quantum=50.0, **SHORT))
    assert table.rows[0].metrics == direct.metrics


def test_protocols_see_the_same_first_transactions():
    scripts = {}
    for p in ("PPCC", "S2PL", "OCC"):
        sim = Simulator(SimConfig(protocol=p, mpl=3, seed=4, horizon=1.0))
        sim.run()
        scripts[p] = tuple(slot.rec.script for slot in sim.live.values())
    assert scripts["PPCC"] == scripts["S2PL"] == scripts["OCC"]


def test_read_only_transactions_skip_the_flush():
    a = run_simulation(SimConfig(write_prob=0.0, mpl=10, seed=2, commit_io=True, **SHORT)).metrics
    b = run_simulation(SimConfig(write_prob=0.0, mpl=10, seed=2, commit_io=False, **SHORT)).metrics
    assert a == b


def test_flush_costs_throughput():
    on = run_simulation(SimConfig(mpl=10, seed=2, **SHORT)).metrics.committed
    off = run_simulation(SimConfig(mpl=10, seed=2, commit_io=False, **SHORT)).metrics.committed
    assert on < off
