"""Block quanta picked per setting by ``prudentcc sweep-quantum``.

Each entry is the quantum with the best seed-averaged peak throughput over
the grid {50, 100, 200, 400, 800} (25 added for PPCC at 16/32), seeds 0-2,
full 100,000-unit horizon. OCC never blocks and needs no entry.
"""

from __future__ import annotations

from .simengine import SimConfig

# (db_size, txn_size_mean, write_prob, num_cpus, num_disks) -> protocol -> quantum
TUNED_QUANTA: dict[tuple, dict[str, float]] = {
    (500, 8, 0.2, 4, 8): {"PPCC": 400.0, "S2PL": 800.0},
    (100, 8, 0.2, 4, 8): {"PPCC": 200.0, "S2PL": 200.0},
    (500, 8, 0.5, 4, 8): {"PPCC": 200.0, "S2PL": 400.0},
    (100, 8, 0.5, 4, 8): {"PPCC": 50.0, "S2PL": 100.0},
    (500, 16, 0.2, 4, 8): {"PPCC": 400.0, "S2PL": 400.0},
    (100, 16, 0.2, 4, 8): {"PPCC": 200.0, "S2PL": 100.0},
    (500, 16, 0.5, 4, 8): {"PPCC": 200.0, "S2PL": 400.0},
    (100, 16, 0.5, 4, 8): {"PPCC": 100.0, "S2PL": 50.0},
    (100, 8, 0.2, 16, 32): {"PPCC": 50.0, "S2PL": 100.0},
    (100, 8, 0.5, 16, 32): {"PPCC": 100.0, "S2PL": 50.0},
    (500, 8, 0.2, 16, 32): {"PPCC": 200.0, "S2PL": 200.0},
    (500, 8, 0.5, 16, 32): {"PPCC": 100.0, "S2PL": 100.0},
}


def setting_key(cfg: SimConfig) -> tuple:
    return (cfg.db_size, cfg.txn_size_mean, cfg.write_prob, cfg.num_cpus, cfg.num_disks)


def tuned_quanta(cfg: SimConfig) -> dict[str, float]:
    """Per-protocol quanta for ``cfg``'s setting; empty (use the default) if it was never tuned."""
    return dict(TUNED_QUANTA.get(setting_key(cfg), {}))
