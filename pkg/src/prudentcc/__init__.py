"""Prudent-precedence concurrency control, with strict 2PL and OCC baselines,
inside a deterministic closed-system database simulator."""

from .baselines import OCC, RwLockTable, Strict2PL
from .checker import (
    EventKind,
    HistoryEvent,
    HistoryRecorder,
    MalformedHistory,
    SerializationGraph,
    TooLarge,
    brute_force_serializable,
    build_sg,
    is_acyclic,
    read_history,
    write_history,
)
from .core import (
    AbortReason,
    AbortTxn,
    Block,
    BlockReason,
    InvariantViolation,
    Operation,
    OpKind,
    PrecedenceClass,
    PrecedenceGraph,
    PrecedenceRuleViolation,
    Proceed,
    TxnId,
    TxnPhase,
    TxnRecord,
    detect_conflict,
)
from .ppcc import PPCC, CommitLockTable
from .simengine import (
    ConfigInvalid,
    RunMetrics,
    SimConfig,
    SweepTable,
    generate_txn,
    run_simulation,
    sweep_mpl,
)

__version__ = "0.1.0"
