"""Trace a contended run and test its history for conflict serializability.

Also shows the checker rejecting a classic lost update.
"""

from prudentcc.checker import (
    EventKind,
    HistoryRecorder,
    brute_force_serializable,
    build_sg,
    committed,
    is_acyclic,
)
from prudentcc.core import TxnId
from prudentcc.simengine import SimConfig, run_simulation

# A small database and many writers make conflicts frequent.
for protocol in ("PPCC", "S2PL", "OCC"):
    res = run_simulation(SimConfig(protocol=protocol, db_size=30, write_prob=0.5, mpl=20, horizon=5000.0),
                         trace=True, check=True)
    sg = build_sg(res.history)
    print(f"{protocol}: {len(res.history)} events, {len(committed(res.history))} committed, "
          f"{len(sg.edges)} conflict edges, acyclic={is_acyclic(sg)}")

# Two transactions read x, then both overwrite it.
h = HistoryRecorder()
t1, t2 = TxnId(1), TxnId(2)
E = EventKind
for n, (t, kind, x) in enumerate([
    (t1, E.READ_EXEC, 0), (t2, E.READ_EXEC, 0), (t1, E.WRITE_EXEC, 0), (t2, E.WRITE_EXEC, 0),
    (t1, E.BEGIN_WAIT_TO_COMMIT, None), (t1, E.FLUSH, 0), (t1, E.COMMIT, None),
    (t2, E.BEGIN_WAIT_TO_COMMIT, None), (t2, E.FLUSH, 0), (t2, E.COMMIT, None),
]):
    h.record(float(n), t, kind, x)
sg = build_sg(h.events)
print(f"lost update: edges {sorted(sg.edges)}, acyclic={is_acyclic(sg)}, "
      f"some serial order works={brute_force_serializable(h.events)}")
