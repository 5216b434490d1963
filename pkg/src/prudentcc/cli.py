"""Command line: experiment matrices, history checks and example replays.

Config files are flat ``key = value`` text; ``#`` starts a comment and lists
are comma separated. Keys are the :class:`SimConfig` field names plus the
matrix keys below. Every matrix key accepts a list.

    protocol = PPCC, S2PL, OCC
    db_size = 100, 500
    txn_size_mean = 8, 16
    write_prob = 0.2, 0.5
    resources = 4/8, 16/32        # cpus/disks
    mpl_list = 1, 2, 5, 10, 20
    seeds = 0, 1, 2
    block_quantum = 400           # shared default
    block_quantum.PPCC = 100      # per-protocol override
    tuned_quanta = false          # true: per-setting quanta from prudentcc.tuning
    quantum_list = 50, 100, 200   # sweep-quantum only
    check = true                  # run-time invariant checks
    commit_io = true              # disk access for each committed writer

Flags override the file, and ``PPCC_CONFIG``, ``PPCC_OUT``, ``PPCC_SEED``,
``PPCC_TRACE``, ``PPCC_PROTOCOL`` and ``PPCC_MPL`` stand in for missing flags.

Exit codes: 0 ok, 1 non-serializable history or replay divergence,
2 bad config or malformed history, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .checker import (
    BRUTE_FORCE_LIMIT,
    MalformedHistory,
    brute_force_serializable,
    build_sg,
    committed,
    is_acyclic,
    read_history,
    validate,
    write_history,
)
from .core import InvariantViolation
from .scenarios import SCENARIOS
from .simengine import (
    DEFAULT_MPLS,
    PROTOCOL_NAMES,
    ConfigInvalid,
    SimConfig,
    Simulator,
    derive_seed,
)
from .tuning import tuned_quanta

ENV_PREFIX = "PPCC_"
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INVARIANT = 0, 1, 2, 3

_SIM_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


@dataclass
class ExperimentMatrix:
    """Cross product of protocol x db_size x txn_size x write_prob x resources, each swept over MPL and seeds."""

    base: SimConfig = field(default_factory=SimConfig)
    protocols: list[str] = field(default_factory=lambda: list(PROTOCOL_NAMES))
    db_sizes: list[int] = field(default_factory=lambda: [500])
    txn_sizes: list[int] = field(default_factory=lambda: [8])
    write_probs: list[float] = field(default_factory=lambda: [0.2])
    resources: list[tuple[int, int]] = field(default_factory=lambda: [(4, 8)])
    mpl_list: list[int] = field(default_factory=lambda: list(DEFAULT_MPLS))
    seeds: list[int] = field(default_factory=lambda: [0])
    quanta: dict[str, float] = field(default_factory=dict)
    quantum_list: list[float] = field(default_factory=lambda: [50.0, 100.0, 200.0, 400.0, 800.0])
    check: bool = True
    use_tuned: bool = False

    def groups(self) -> list[tuple[str, SimConfig]]:
        """One (name, template) per figure-style setting."""
        out = []
        for db, size, wp, (cpus, disks) in itertools.product(self.db_sizes, self.txn_sizes,
                                                              self.write_probs, self.resources):
            name = f"db{db}_size{size}_wp{wp:g}_res{cpus}x{disks}"
            tmpl = self.base.replace(db_size=db, txn_size_mean=size, write_prob=wp,
                                     num_cpus=cpus, num_disks=disks)
            out.append((name, tmpl))
        return out

    def cells(self) -> list[tuple[str, SimConfig]]:
        """Every run, in output order: group, protocol, seed, mpl."""
        if not self.mpl_list:
            raise ConfigInvalid("mpl_list is empty")
        if not self.seeds:
            raise ConfigInvalid("seeds is empty")
        if not self.protocols:
            raise ConfigInvalid("no protocols selected")
        out = []
        for name, tmpl in self.groups():
            tuned = tuned_quanta(tmpl) if self.use_tuned else {}
            for p in self.protocols:
                q = self.quanta.get(p, tuned.get(p, tmpl.block_quantum))
                for s in self.seeds:
                    for m in self.mpl_list:
                        cfg = tmpl.replace(protocol=p, mpl=m, seed=derive_seed(s, m), block_quantum=q)
                        out.append((name, cfg.validate()))
        return out


# -- config parsing ---------------------------------------------------------------


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return kind(raw)
    except ValueError:
        raise ConfigInvalid(f"{key}: cannot parse {raw!r}") from None


def _protocol(name: str) -> str:
    up = name.strip().upper()
    if up == "2PL":
        up = "S2PL"
    if up not in PROTOCOL_NAMES:
        raise ConfigInvalid(f"unknown protocol {name!r}")
    return up


def _resources(raw: str) -> tuple[int, int]:
    parts = raw.split("/")
    if len(parts) != 2:
        raise ConfigInvalid(f"resources: expected cpus/disks, got {raw!r}")
    cpus, disks = (_convert("resources", p, int) for p in parts)
    return cpus, disks


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigInvalid(f"line {n}: empty key")
        pairs[key] = value
    return pairs


def build_matrix(pairs: dict[str, str]) -> ExperimentMatrix:
    m = ExperimentMatrix()
    base: dict = {}
    for key, value in pairs.items():
        items = _split(value)
        if key == "protocol":
            m.protocols = list(dict.fromkeys(_protocol(p) for p in items))
        elif key == "db_size":
            m.db_sizes = [_convert(key, v, int) for v in items]
        elif key == "txn_size_mean":
            m.txn_sizes = [_convert(key, v, int) for v in items]
        elif key == "write_prob":
            m.write_probs = [_convert(key, v, float) for v in items]
        elif key == "resources":
            m.resources = [_resources(v) for v in items]
        elif key == "mpl_list":
            m.mpl_list = [_convert(key, v, int) for v in items]
        elif key == "seeds":
            m.seeds = [_convert(key, v, int) for v in items]
        elif key == "quantum_list":
            m.quantum_list = [_convert(key, v, float) for v in items]
        elif key == "check":
            m.check = _convert(key, value, bool)
        elif key == "tuned_quanta":
            m.use_tuned = _convert(key, value, bool)
        elif key.startswith("block_quantum."):
            m.quanta[_protocol(key.split(".", 1)[1])] = _convert(key, value, float)
        elif key in ("num_cpus", "num_disks", "mpl", "seed"):
            raise ConfigInvalid(f"{key} is set through resources / mpl_list / seeds")
        elif key in _SIM_FIELDS:
            kind = type(_SIM_FIELDS[key].default)
            kind = kind if kind in (int, bool) else float
            base[key] = None if value.lower() == "none" else _convert(key, value, kind)
        else:
            raise ConfigInvalid(f"unknown key {key!r}")
    m.base = SimConfig(**base)
    return m


def load_matrix(path: Optional[str]) -> ExperimentMatrix:
    if path is None:
        return ExperimentMatrix()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigInvalid(f"cannot read config {path}: {e.strerror}") from None
    return build_matrix(parse_config_text(text))


def _flag(args, name: str) -> Optional[str]:
    value = getattr(args, name, None)
    if value is None:
        value = os.environ.get(ENV_PREFIX + name.upper())
    return value


def _apply_overrides(m: ExperimentMatrix, args) -> None:
    seed = _flag(args, "seed")
    if seed is not None:
        m.seeds = [_convert("seed", seed, int)]
    protocol = _flag(args, "protocol")
    if protocol is not None:
        m.protocols = [_protocol(p) for p in _split(protocol)]
    mpl = _flag(args, "mpl")
    if mpl is not None:
        m.mpl_list = [_convert("mpl", v, int) for v in _split(mpl)]


def _trace_enabled(args) -> bool:
    if getattr(args, "trace", False):
        return True
    return os.environ.get(ENV_PREFIX + "TRACE", "").lower() in ("1", "true", "yes")


# -- run ------------------------------------------------------------------------------

DETAIL_COLUMNS = ["protocol", "mpl", "seed", "committed", "aborts_by_cause", "restarts"]
SUMMARY_COLUMNS = ["group", "protocol", "peak_mpl", "peak_committed", "mean_peak_mpl", "mean_peak_committed"]


def _seed_of(matrix: ExperimentMatrix, cfg: SimConfig) -> int:
    for s in matrix.seeds:
        if derive_seed(s, cfg.mpl) == cfg.seed:
            return s
    return cfg.seed


def _trace_name(group: str, cfg: SimConfig, seed: int) -> str:
    return f"{group}_{cfg.protocol}_mpl{cfg.mpl}_seed{seed}.hist"


def _run_one(cfg: SimConfig, trace: bool, check: bool):
    sim = Simulator(cfg, trace=trace, check=check)
    return sim, sim.run()


def _report_violation(err: Exception, group: str, cfg: SimConfig, seed: int, out: Path) -> int:
    # rerun the cell with tracing to leave the events up to the failure on disk
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    path = trace_dir / ("FAILED_" + _trace_name(group, cfg, seed))
    sim = Simulator(cfg, trace=True, check=True)
    try:
        sim.run()
    except InvariantViolation:
        pass
    write_history(sim.history.events, path)
    print(f"invariant violation: {err}", file=sys.stderr)
    print(f"  protocol={cfg.protocol} mpl={cfg.mpl} seed={seed} (cell seed {cfg.seed})", file=sys.stderr)
    print(f"  trace: {path}", file=sys.stderr)
    return EXIT_INVARIANT


def execute(matrix: ExperimentMatrix, out: Path, trace: bool = False, echo=print) -> int:
    cells = matrix.cells()
    echo(f"{len(cells)} runs in {len(matrix.groups())} group(s)")
    out.mkdir(parents=True, exist_ok=True)
    rows: dict[str, list] = {}
    for group, cfg in cells:
        seed = _seed_of(matrix, cfg)
        try:
            _, result = _run_one(cfg, trace, matrix.check)
        except InvariantViolation as err:
            return _report_violation(err, group, cfg, seed, out)
        if trace:
            trace_dir = out / "traces"
            trace_dir.mkdir(exist_ok=True)
            write_history(result.history, trace_dir / _trace_name(group, cfg, seed))
        m = result.metrics
        rows.setdefault(group, []).append((cfg.protocol, cfg.mpl, seed, m.committed, m.causes_str(), m.restarts))
    write_csvs(rows, out)
    return EXIT_OK


def summarize(rows: list) -> list[tuple]:
    """Per protocol: the best single cell, and the top of the seed-averaged curve."""
    out = []
    for p in dict.fromkeys(r[0] for r in rows):
        mine = [r for r in rows if r[0] == p]
        best = max(mine, key=lambda r: (r[3], -r[1]))
        per: dict[int, list] = {}
        for r in mine:
            per.setdefault(r[1], []).append(r[3])
        avg = {k: sum(v) / len(v) for k, v in per.items()}
        top = max(avg, key=lambda k: (avg[k], -k))
        out.append((p, best[1], best[3], top, round(avg[top], 3)))
    return out


def write_csvs(rows: dict[str, list], out: Path) -> None:
    for group, data in rows.items():
        with open(out / f"{group}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DETAIL_COLUMNS)
            w.writerows(data)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for group, data in rows.items():
            for row in summarize(data):
                w.writerow((group,) + row)


def cmd_run(args) -> int:
    matrix = load_matrix(_flag(args, "config"))
    _apply_overrides(matrix, args)
    out = Path(_flag(args, "out") or "results")
    return execute(matrix, out, trace=_trace_enabled(args))


# -- sweep-quantum ---------------------------------------------------------------------


def cmd_sweep_quantum(args) -> int:
    """Peak throughput per (protocol, quantum); OCC never blocks and is left out."""
    matrix = load_matrix(_flag(args, "config"))
    _apply_overrides(matrix, args)
    matrix.protocols = [p for p in matrix.protocols if p != "OCC"]
    out = Path(_flag(args, "out") or "results")
    out.mkdir(parents=True, exist_ok=True)
    if not matrix.quantum_list:
        raise ConfigInvalid("quantum_list is empty")
    lines = []
    for q in matrix.quantum_list:
        sub = dataclasses.replace(matrix, quanta={p: q for p in matrix.protocols})
        cells = sub.cells()
        rows: dict[str, list] = {}
        for group, cfg in cells:
            try:
                _, result = _run_one(cfg, False, matrix.check)
            except InvariantViolation as err:
                return _report_violation(err, group, cfg, _seed_of(matrix, cfg), out)
            rows.setdefault(group, []).append((cfg.protocol, cfg.mpl, _seed_of(matrix, cfg),
                                               result.metrics.committed))
        for group, data in rows.items():
            for p, _, _, mpl, avg in summarize(data):
                lines.append((group, p, f"{q:g}", mpl, avg))
                print(f"{group} {p:5s} quantum={q:g}: peak {avg:g} at mpl {mpl}")
    with open(out / "quantum_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "protocol", "block_quantum", "peak_mpl", "mean_peak_committed"])
        w.writerows(lines)
    best: dict = {}
    for group, p, q, mpl, avg in lines:
        key = (group, p)
        if key not in best or avg > best[key][1]:
            best[key] = (q, avg)
    for (group, p), (q, avg) in best.items():
        print(f"best {group} {p}: quantum {q} ({avg:g})")
    return EXIT_OK


# -- check ------------------------------------------------------------------------------


def check_file(path: str, echo=print) -> int:
    try:
        h = read_history(path)
        validate(h)
    except OSError as e:
        echo(f"cannot read {path}: {e.strerror}")
        return EXIT_USAGE
    except MalformedHistory as e:
        echo(f"malformed history: {e}")
        return EXIT_USAGE
    sg = build_sg(h)
    ok = is_acyclic(sg)
    n = len(committed(h))
    echo(f"{n} committed incarnations, {len(sg.edges)} edges: {'acyclic' if ok else 'CYCLIC'}")
    if n <= BRUTE_FORCE_LIMIT:
        oracle = brute_force_serializable(h)
        echo(f"brute-force oracle: {'serializable' if oracle else 'not serializable'}"
             f" ({'agrees' if oracle == ok else 'DISAGREES'})")
        if oracle != ok:
            return EXIT_INVARIANT
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check(args) -> int:
    return check_file(args.history)


# -- replay -----------------------------------------------------------------------------


def cmd_replay(args) -> int:
    names = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
    failed = False
    for name in names:
        if name not in SCENARIOS:
            print(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)} or all")
            return EXIT_USAGE
        print(f"== {name}")
        failures = SCENARIOS[name](out=print)
        failed = failed or bool(failures)
        print(f"{name}: {'FAIL' if failures else 'ok'}")
    return EXIT_FAIL if failed else EXIT_OK


# -- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prudentcc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def matrix_flags(p):
        p.add_argument("--config", help="key = value experiment file")
        p.add_argument("--out", help="output directory (default results)")
        p.add_argument("--seed", help="run this single seed instead of the configured list")
        p.add_argument("--protocol", help="comma-separated protocols (PPCC, S2PL, OCC)")
        p.add_argument("--mpl", help="comma-separated MPL values")

    run = sub.add_parser("run", help="run an experiment matrix and write CSVs")
    matrix_flags(run)
    run.add_argument("--trace", action="store_true", default=None, help="also write a history file per run")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep-quantum", help="peak throughput for each block quantum")
    matrix_flags(sweep)
    sweep.set_defaults(func=cmd_sweep_quantum)

    check = sub.add_parser("check", help="test a history file for conflict serializability")
    check.add_argument("history")
    check.set_defaults(func=cmd_check)

    replay = sub.add_parser("replay", help="replay a worked example through PPCC")
    replay.add_argument("scenario", help=f"{', '.join(SCENARIOS)} or all")
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
