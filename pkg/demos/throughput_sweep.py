"""Throughput against multiprogramming level for the three protocols.

Usage: python demos/throughput_sweep.py [db_size] [write_prob] [horizon]

Defaults to the base setting (500 items, write probability 0.2, 4 CPUs and
8 disks). A shorter horizon gives a quick, noisier picture.
"""

import sys

from prudentcc.simengine import PROTOCOL_NAMES, SimConfig, sweep_mpl
from prudentcc.tuning import tuned_quanta

db = int(sys.argv[1]) if len(sys.argv) > 1 else 500
wp = float(sys.argv[2]) if len(sys.argv) > 2 else 0.2
horizon = float(sys.argv[3]) if len(sys.argv) > 3 else 20_000.0

cfg = SimConfig(db_size=db, write_prob=wp, horizon=horizon)
quanta = tuned_quanta(cfg)
mpls = [1, 2, 5, 10, 15, 20, 30, 50, 75, 100]
table = sweep_mpl(cfg, mpls, seeds=[0, 1], quanta=quanta)

print(f"db_size={db} write_prob={wp} horizon={horizon:g} quanta={quanta or 'default'}")
print("mpl   " + "".join(f"{p:>8s}" for p in PROTOCOL_NAMES))
curves = {p: table.curve(p) for p in PROTOCOL_NAMES}
for m in mpls:
    print(f"{m:<6d}" + "".join(f"{curves[p][m]:8.0f}" for p in PROTOCOL_NAMES))

# the curves rise while resources are idle, then fall as conflicts pile up
for p, (m, peak) in table.peaks().items():
    print(f"{p}: peak {peak:.0f} commits at mpl {m}")
