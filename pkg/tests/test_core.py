import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prudentcc.core import (
    ConflictKind,
    InvariantViolation,
    PrecedenceClass,
    PrecedenceGraph,
    PrecedenceRuleViolation,
    R,
    TxnId,
    TxnPhase,
    TxnRecord,
    W,
    detect_conflict,
)

T = TxnId


class RuleOracle:
    """Plain re-statement of the rule: classes are sticky, reader never preceded, writer never preceding."""

    def __init__(self, n):
        self.n = n
        self.adj = np.zeros((n, n), dtype=int)
        self.cls = ["I"] * n

    def allows(self, i, j):
        return i != j and self.cls[i] != "D" and self.cls[j] != "G"

    def add(self, i, j):
        self.adj[i, j] = 1
        self.cls[i], self.cls[j] = "G", "D"

    def remove(self, i):
        self.adj[i, :] = 0
        self.adj[:, i] = 0
        self.cls[i] = "I"


def longest_path_ok(adj):
    # no path of two edges: A @ A has no nonzero entry
    return not (adj @ adj).any()


def matrix_of(g, n):
    a = np.zeros((n, n), dtype=int)
    for u, v in g.edges():
        a[u.id, v.id] = 1
    return a


def test_class_follows_first_edge():
    g = PrecedenceGraph()
    g.add(T(1), T(2))
    assert g.cls(T(1)) is PrecedenceClass.PRECEDING
    assert g.cls(T(2)) is PrecedenceClass.PRECEDED
    assert g.cls(T(3)) is PrecedenceClass.INDEPENDENT


def test_rule_rejects_chains_both_ways():
    g = PrecedenceGraph()
    g.add(T(1), T(2))
    # T2 is preceded, so it may not read ahead of anyone
    assert not g.allows(T(2), T(3))
    # T1 is preceding, so nobody may be ordered before it
    assert not g.allows(T(3), T(1))
    with pytest.raises(PrecedenceRuleViolation):
        g.add(T(2), T(3))
    # fan-in and fan-out stay legal
    g.add(T(1), T(4))
    g.add(T(5), T(2))
    assert g.predecessors(T(2)) == {T(1), T(5)}


def test_add_all_is_atomic():
    g = PrecedenceGraph()
    g.add(T(1), T(2))
    before = list(g.edges())
    with pytest.raises(PrecedenceRuleViolation):
        g.add_all([(T(3), T(4)), (T(2), T(4))])
    assert list(g.edges()) == before
    assert g.cls(T(3)) is PrecedenceClass.INDEPENDENT


def test_batch_cannot_make_a_middle_node():
    g = PrecedenceGraph()
    with pytest.raises(PrecedenceRuleViolation):
        g.add_all([(T(1), T(2)), (T(2), T(3))])
    assert len(g) == 0


def test_self_edge_refused():
    assert not PrecedenceGraph().allows(T(1), T(1))


def test_removal_keeps_classes_of_neighbours():
    g = PrecedenceGraph()
    g.add(T(1), T(2))
    g.remove(T(1))
    assert not g.predecessors(T(2))
    # T2 stays preceded even though its predecessor left
    assert g.cls(T(2)) is PrecedenceClass.PRECEDED
    assert not g.allows(T(2), T(3))
    g.check_invariants()


def test_check_invariants_catches_tampering():
    g = PrecedenceGraph()
    g.add(T(1), T(2))
    g._succ.setdefault(T(2), set()).add(T(3))
    g._pred.setdefault(T(3), set()).add(T(2))
    with pytest.raises(InvariantViolation):
        g.check_invariants()


def test_all_short_insertion_orders_four_txns():
    """Every sequence of three attempted edges over four transactions, against the oracle."""
    pairs = [(i, j) for i in range(4) for j in range(4) if i != j]
    for seq in itertools.product(pairs, repeat=3):
        g, o = PrecedenceGraph(), RuleOracle(4)
        for i, j in seq:
            assert g.allows(T(i), T(j)) == o.allows(i, j)
            if o.allows(i, j):
                g.add(T(i), T(j))
                o.add(i, j)
            else:
                with pytest.raises(PrecedenceRuleViolation):
                    g.add(T(i), T(j))
        assert (matrix_of(g, 4) == o.adj).all()
        assert longest_path_ok(o.adj)


steps = st.lists(
    st.one_of(
        st.tuples(st.just("add"), st.integers(0, 4), st.integers(0, 4)),
        st.tuples(st.just("remove"), st.integers(0, 4), st.just(0)),
    ),
    max_size=40,
)


@settings(max_examples=300, deadline=None)
@given(steps)
def test_random_histories_match_oracle(ops):
    g, o = PrecedenceGraph(), RuleOracle(5)
    seen: dict = {}
    for op, i, j in ops:
        if op == "remove":
            g.remove(T(i))
            o.remove(i)
            seen.pop(i, None)
        elif o.allows(i, j):
            g.add(T(i), T(j))
            o.add(i, j)
        else:
            assert not g.allows(T(i), T(j))
        for k in range(5):
            c = g.cls(T(k))
            # a class only changes by leaving the graph
            if k in seen and c is not PrecedenceClass.INDEPENDENT:
                assert c is seen[k]
            if c is not PrecedenceClass.INDEPENDENT:
                seen[k] = c
        a = matrix_of(g, 5)
        assert (a == o.adj).all()
        assert longest_path_ok(a)
        g.check_invariants()


def _rec(i, ops, reads=(), writes=()):
    rec = TxnRecord(T(i), tuple(ops))
    rec.read_set.update(reads)
    rec.write_set.update(writes)
    rec.workspace.update({x: T(i) for x in writes})
    return rec


def test_detect_conflict_orients_reader_first():
    reader = _rec(1, [R(0)], reads=[0])
    writer = _rec(2, [R(0), W(0)], reads=[0], writes=[0])
    raw = detect_conflict(reader, writer, 0, ConflictKind.RAW)
    war = detect_conflict(reader, writer, 0, ConflictKind.WAR)
    assert raw.edge == war.edge == (T(1), T(2))


def test_write_write_has_no_edge():
    a = _rec(1, [W(3)], writes=[3])
    b = _rec(2, [W(3)], writes=[3])
    assert detect_conflict(a, b, 3, ConflictKind.WAW).edge is None


def test_detect_conflict_rejects_nonsense():
    a = _rec(1, [R(0)], reads=[0])
    with pytest.raises(ValueError):
        detect_conflict(a, a, 0, ConflictKind.WAR)
    b = _rec(2, [R(1)], reads=[1])
    with pytest.raises(ValueError):
        detect_conflict(a, b, 0, ConflictKind.RAW)


def test_phase_transitions():
    rec = TxnRecord(T(1), (R(0),))
    rec.set_phase(TxnPhase.WAIT_TO_COMMIT)
    rec.set_phase(TxnPhase.COMMITTED)
    assert not rec.live
    with pytest.raises(InvariantViolation):
        rec.set_phase(TxnPhase.READ_PHASE)
    fresh = TxnRecord(T(2), (R(0),))
    with pytest.raises(InvariantViolation):
        fresh.set_phase(TxnPhase.COMMITTED)


def test_txn_id_incarnations():
    t = T(4)
    assert str(t) == "T4"
    assert str(t.restarted()) == "T4.1"
    assert t.restarted() != t and t.restarted().id == 4
