import json
import subprocess
import sys

from minerva.cli import main

SMALL = """
[run]
name = "tiny"
seed = 4
horizon = 500

[network]
nodes = 10

[committee]
csize = 4
gsize = 1

[workload]
clients = 3
"""


def write(tmp_path, text=SMALL, name="tiny.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def summary(out):
    return dict(line.split("\t", 1) for line in out.splitlines() if "\t" in line)


def test_run_writes_artifacts_and_summary(tmp_path, capsys):
    scen = write(tmp_path)
    code = main(["run", scen, "--out", str(tmp_path / "o"), "--trace"])
    out = capsys.readouterr().out
    assert code == 0
    s = summary(out)
    assert out.startswith("=== tiny seed=4 ===") and out.rstrip().endswith("===")
    assert s["exit"] == "0" and s["consistency_ok"] == "True" and s["assert safety"] == "pass"
    o = tmp_path / "o"
    for name in ("metrics.json", "timeseries.csv", "chain.jsonl", "daylog.jsonl", "elections.jsonl",
                 "trace.jsonl", "figures/chain_growth.png", "figures/payments.png",
                 "figures/committee_quality.png"):
        assert (o / name).stat().st_size > 0, name
    doc = json.loads((o / "metrics.json").read_text())
    assert doc["passed"] is True and doc["config"]["run"]["seed"] == 4
    assert (o / "timeseries.csv").read_text().startswith("tick,snail_height,fast_height")


def test_seed_override_and_byte_identical(tmp_path, capsys):
    scen = write(tmp_path)
    for d in ("a", "b"):
        assert main(["run", scen, "--seed", "9", "--out", str(tmp_path / d)]) == 0
    assert "seed=9" in capsys.readouterr().out
    for name in ("metrics.json", "timeseries.csv", "chain.jsonl", "figures/payments.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_error_exit_2(tmp_path, capsys):
    bad = write(tmp_path, "[run]\nhorizon = 0\nzzz = 1\n", "bad.toml")
    assert main(["run", bad]) == 2
    out = capsys.readouterr().out
    assert "error\trun.zzz: unknown key" in out and "exit\t2" in out
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_assertion_failure_exit_1(capsys):
    assert main(["run", "committee_overrun"]) == 1
    s = summary(capsys.readouterr().out)
    assert s["assert safety"] == "FAIL" and int(s["fast_divergences"]) >= 1


def test_parallel_matches_serial(tmp_path, capsys):
    a = write(tmp_path, SMALL, "one.toml")
    b = write(tmp_path, SMALL.replace("seed = 4", "seed = 5").replace('"tiny"', '"tiny2"'), "two.toml")
    assert main(["run", a, b]) == 0
    serial = capsys.readouterr().out
    assert main(["run", a, b, "--parallel", "2", "--out", str(tmp_path / "p")]) == 0
    par = capsys.readouterr().out
    strip = lambda t: [l for l in t.splitlines() if not l.startswith("artifacts")]
    assert strip(serial) == strip(par)
    assert (tmp_path / "p" / "one" / "metrics.json").exists() and (tmp_path / "p" / "two" / "metrics.json").exists()
    assert main(["run", a, "--parallel", "0"]) == 2


def test_inspect_revalidates(tmp_path, capsys):
    scen = write(tmp_path)
    main(["run", scen, "--out", str(tmp_path / "o")])
    capsys.readouterr()
    chain = str(tmp_path / "o" / "chain.jsonl")
    assert main(["inspect", chain]) == 0
    s = summary(capsys.readouterr().out)
    assert int(s["blocks"]) >= 2 and int(s["fruits"]) > 0
    assert main(["inspect", chain, "--scenario", scen]) == 0
    assert "valid\tTrue" in capsys.readouterr().out
    # without certified fast blocks, the fruits cannot be accepted
    assert main(["inspect", chain, "--scenario", scen, "--daylog", str(tmp_path / "none.jsonl")]) == 1
    assert "valid\tFalse" in capsys.readouterr().out


def test_matrix_command(capsys):
    assert main(["matrix", "31", "4", "3"]) == 0
    out = capsys.readouterr().out
    rows = [l.split() for l in out.splitlines() if l and l[0] in "01"]
    assert len(rows) == 31 and all(r.count("1") == 4 for r in rows)
    assert "strongly_connected\tTrue" in out and "checks\tok" in out
    assert main(["matrix", "4", "4", "1"]) == 2
    main(["matrix", "12", "2", "1"])
    assert "warning" in capsys.readouterr().err


def test_scenarios_listing_and_module_entry():
    proc = subprocess.run([sys.executable, "-m", "minerva", "scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "honest_baseline" in proc.stdout.split()
