"""Replay the four small PPCC schedules step by step.

Each line is one step: the operation, what the protocol decided, and any
precedence edges it admitted. The [ok] lines are the expected outcomes.
"""

from prudentcc.scenarios import SCENARIOS

for name, scenario in SCENARIOS.items():
    print(f"== {name}: {scenario.__doc__}")
    failures = scenario(out=print)
    print(f"-> {'as expected' if not failures else 'DIVERGED: ' + '; '.join(failures)}\n")
