import subprocess
import sys

import pytest

from kvcompress.cli import main
from kvcompress.workload import read_trace


@pytest.fixture
def small_trace(tmp_path):
    path = tmp_path / "small_trace.kvtr"
    assert main(["trace-gen", "--steps", "17", "--dim", "8", "--seed", "3", "--out", str(path)]) == 0
    return path


def test_trace_gen_kinds(tmp_path):
    p = tmp_path / "hh.kvtr"
    assert main(["trace-gen", "--kind", "heavy-hitter", "--steps", "40", "--dim", "4", "--n-hot", "2", "--out", str(p)]) == 0
    tr = read_trace(p)
    assert (len(tr), tr.head_dim, tr.kind) == (40, 4, "heavy_hitter")


def test_bench_plateau(small_trace, tmp_path):
    out = tmp_path / "r.csv"
    argv = ["bench", "--policy", "zeromerge", "--bc", "4", "--br", "2", "--bp", "3", "--trace", str(small_trace), "--out", str(out)]
    assert main(argv) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()[1:] if not line.startswith("#")]
    occupancy = [int(r[1]) for r in rows]
    assert occupancy == list(range(1, 10)) + [9] * 8


def test_bench_stdout(small_trace, capsys):
    assert main(["bench", "--trace", str(small_trace)]) == 0
    assert capsys.readouterr().out.startswith("step,cache_entries")


def test_bench_bp_zero(small_trace, capsys):
    assert main(["bench", "--bp", "0", "--trace", str(small_trace)]) == 1
    assert "--bp" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv,flag",
    [
        (["bench", "--trace", "X", "--bogus"], "--bogus"),
        (["bench", "--trace", "X", "--alpha", "0"], "--alpha"),
        (["bench", "--trace", "X", "--decay", "2"], "--decay"),
        (["bench", "--trace", "X", "--br", "-1"], "--br"),
        (["bench", "--trace", "X", "--window", "0", "--policy", "window"], "--window"),
        (["compare", "--trace", "X", "--policies", "zeromerge,lru"], "--policies"),
    ],
)
def test_usage_errors(small_trace, capsys, argv, flag):
    argv = [str(small_trace) if a == "X" else a for a in argv]
    assert main(argv) == 1
    assert flag in capsys.readouterr().err


def test_missing_trace(tmp_path, capsys):
    assert main(["bench", "--trace", str(tmp_path / "nope.kvtr")]) == 1
    assert "--trace" in capsys.readouterr().err


def test_malformed_trace_is_runtime_error(tmp_path):
    p = tmp_path / "bad.kvtr"
    p.write_bytes(b"KVTRjunk")
    assert main(["bench", "--trace", str(p)]) == 2


def test_no_subcommand():
    assert main([]) == 1


def test_config_file(small_trace, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# budgets\nbc = 4\nbr=2\nbp=3\npolicy=zeromerge\ntrace=%s\n" % small_trace)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["--config", str(cfg), "bench", "--out", str(a)]) == 0
    assert main(["bench", "--trace", str(small_trace), "--bc", "4", "--br", "2", "--bp", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    # flags win over the file
    c = tmp_path / "c.csv"
    assert main(["--config", str(cfg), "bench", "--bp", "5", "--out", str(c)]) == 0
    assert "# capacity=11" in c.read_text()


@pytest.mark.parametrize("text,needle", [("nonsense\n", "line 1"), ("flux=3\n", "flux"), ("bc=x\n", "bc")])
def test_config_errors(small_trace, tmp_path, capsys, text, needle):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    assert main(["--config", str(cfg), "bench", "--trace", str(small_trace)]) == 1
    assert needle in capsys.readouterr().err


def test_budget_frac(tmp_path):
    p = tmp_path / "t.kvtr"
    main(["trace-gen", "--steps", "200", "--dim", "4", "--out", str(p)])
    out = tmp_path / "r.csv"
    assert main(["bench", "--trace", str(p), "--budget-frac", "0.05", "--out", str(out)]) == 0
    assert "# capacity=10" in out.read_text()


def test_compare(tmp_path, capsys):
    p = tmp_path / "t.kvtr"
    main(["trace-gen", "--kind", "heavy-hitter", "--steps", "128", "--dim", "8", "--out", str(p)])
    out = tmp_path / "cmp.csv"
    assert main(["compare", "--trace", str(p), "--budget-frac", "0.1", "--out", str(out)]) == 0
    text = out.read_text()
    policies = {line.split(",")[0] for line in text.splitlines()[1:] if not line.startswith("#")}
    assert policies == {"full", "window", "sink-window", "heavy-hitter", "zeromerge"}
    assert "zeromerge_mean_l2 <= window_mean_l2" in text
    assert "zeromerge" in capsys.readouterr().out


def test_verify_small(capsys):
    assert main(["verify", "--trials", "5", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert "trials: 5" in out and "violations: 0" in out


def test_verify_trace(small_trace, capsys):
    assert main(["verify", "--trace", str(small_trace), "--bc", "2", "--br", "2", "--bp", "1"]) == 0
    assert "violations: 0" in capsys.readouterr().out


def test_console_script_module():
    r = subprocess.run([sys.executable, "-m", "kvcompress.cli", "verify", "--trials", "2"], capture_output=True, text=True)
    assert r.returncode == 0 and "violations: 0" in r.stdout
