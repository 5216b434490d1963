import csv
from pathlib import Path

import pytest

from prudentcc.cli import main

FIXTURES = Path(__file__).parent / "fixtures"

SMALL = """\
# tiny matrix
protocol = PPCC, 2PL, OCC
db_size = 100
write_prob = 0.2, 0.5
mpl_list = 1, 5, 10
seeds = 0, 1
horizon = 3000
block_quantum.PPCC = 100
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_writes_one_csv_per_group_and_summary(config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    groups = sorted(p.name for p in out.glob("db*.csv"))
    assert groups == ["db100_size8_wp0.2_res4x8.csv", "db100_size8_wp0.5_res4x8.csv"]
    for name in groups:
        rows = read_csv(out / name)
        assert list(rows[0]) == ["protocol", "mpl", "seed", "committed", "aborts_by_cause", "restarts"]
        # every cell exactly once
        cells = [(r["protocol"], r["mpl"], r["seed"]) for r in rows]
        assert len(cells) == len(set(cells)) == 3 * 3 * 2
    summary = read_csv(out / "summary.csv")
    for row in summary:
        detail = [r for r in read_csv(out / f"{row['group']}.csv") if r["protocol"] == row["protocol"]]
        assert int(row["peak_committed"]) == max(int(r["committed"]) for r in detail)


def test_run_is_byte_identical(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(config), "--out", str(a)]) == 0
    assert main(["run", "--config", str(config), "--out", str(b)]) == 0
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_trace_files_pass_check(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out), "--trace", "--seed", "3", "--mpl", "10"]) == 0
    traces = sorted((out / "traces").glob("*.hist"))
    assert len(traces) == 2 * 3
    for t in traces:
        assert main(["check", str(t)]) == 0
    rows = read_csv(out / "db100_size8_wp0.2_res4x8.csv")
    assert {r["seed"] for r in rows} == {"3"} and {r["mpl"] for r in rows} == {"10"}


def test_env_overrides(config, tmp_path, monkeypatch):
    out = tmp_path / "env"
    monkeypatch.setenv("PPCC_CONFIG", str(config))
    monkeypatch.setenv("PPCC_OUT", str(out))
    monkeypatch.setenv("PPCC_PROTOCOL", "OCC")
    monkeypatch.setenv("PPCC_MPL", "5")
    assert main(["run"]) == 0
    rows = read_csv(out / "db100_size8_wp0.2_res4x8.csv")
    assert {r["protocol"] for r in rows} == {"OCC"}
    # a flag beats the environment
    assert main(["run", "--protocol", "PPCC", "--out", str(tmp_path / "flag")]) == 0
    rows = read_csv(tmp_path / "flag" / "db100_size8_wp0.2_res4x8.csv")
    assert {r["protocol"] for r in rows} == {"PPCC"}


@pytest.mark.parametrize("text", [
    "mpl_list =\n",
    "mpl_list = 1, x\n",
    "colour = blue\n",
    "protocol = MVCC\n",
    "resources = 4\n",
    "write_prob = 2.0\n",
    "just some words\n",
])
def test_config_errors_exit_2(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_boolean_and_none_keys(tmp_path):
    from prudentcc.cli import build_matrix, parse_config_text

    m = build_matrix(parse_config_text("commit_io = false\nrestart_delay_max = none\ncheck = no\n"))
    assert m.base.commit_io is False and m.base.restart_delay_max is None and m.check is False
    path = tmp_path / "b.cfg"
    path.write_text("commit_io = maybe\n")
    assert main(["run", "--config", str(path)]) == 2


def test_missing_config_exit_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_check_lost_update_exit_1():
    assert main(["check", str(FIXTURES / "lost_update.hist")]) == 1


def test_check_truncated_exit_2(tmp_path):
    lines = (FIXTURES / "lost_update.hist").read_text().splitlines()
    cut = tmp_path / "cut.hist"
    cut.write_text("\n".join(lines[:-2]) + "\n")
    assert main(["check", str(cut)]) == 2
    assert main(["check", str(tmp_path / "absent.hist")]) == 2


@pytest.mark.parametrize("name", ["example1", "example2", "example3", "example4", "all"])
def test_replay(name, capsys):
    assert main(["replay", name]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_replay_unknown():
    assert main(["replay", "example9"]) == 2


def test_sweep_quantum(config, tmp_path, capsys):
    path = tmp_path / "q.cfg"
    path.write_text(SMALL + "quantum_list = 50, 400\nwrite_prob = 0.5\n")
    out = tmp_path / "q"
    assert main(["sweep-quantum", "--config", str(path), "--out", str(out), "--mpl", "10"]) == 0
    rows = read_csv(out / "quantum_sweep.csv")
    assert {(r["protocol"], r["block_quantum"]) for r in rows} == {
        ("PPCC", "50"), ("PPCC", "400"), ("S2PL", "50"), ("S2PL", "400")}
    assert "best" in capsys.readouterr().out


def test_invariant_violation_exit_3(config, tmp_path, monkeypatch, capsys):
    from prudentcc.core import InvariantViolation
    from prudentcc.ppcc import PPCC

    def broken(self):
        if len(self.txns) > 3:
            raise InvariantViolation("planted failure")

    monkeypatch.setattr(PPCC, "check_invariants", broken)
    out = tmp_path / "bad"
    assert main(["run", "--config", str(config), "--out", str(out), "--protocol", "PPCC", "--mpl", "10"]) == 3
    err = capsys.readouterr().err
    assert "planted failure" in err and "seed=0" in err
    failed = list((out / "traces").glob("FAILED_*.hist"))
    assert len(failed) == 1 and str(failed[0]) in err
