import json
import subprocess
import sys

import pytest

from idaracer.cli import main
from idaracer.harness import corpus_dir


def path(name):
    return str(corpus_dir() / name)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_prodcons_json(capsys):
    code, out, _ = run(capsys, "analyze", path("prodcons.ida"), "--format=json")
    assert code == 1
    js = json.loads(out)
    racy = [p for p in js["pairs"] if p["verdict"] == "potentially-racy"]
    assert [(p["s1"], p["s2"]) for p in racy] == [("prod:12", "cons:21")]


def test_analyze_pingpong_ceiling_clean(capsys):
    code, out, _ = run(capsys, "analyze", path("pingpong.ida"), "--mutex=ceiling",
                       "--no-round-robin")
    assert code == 0


def test_check_oib_prints_trace(capsys):
    code, out, _ = run(capsys, "check-oib", path("prodcons.ida"), "--s1", "cons:21",
                       "--s2", "prod:12", "--trace")
    assert code == 1
    assert "TSHARE" in out and "prod:12" in out


def test_check_oib_none(capsys):
    code, out, _ = run(capsys, "check-oib", path("prodcons.ida"), "--s1", "prod:13",
                       "--s2", "cons:23", "--format=json")
    assert code == 0


def test_mhp(capsys):
    code, _, _ = run(capsys, "mhp", path("prodcons.ida"), "--s1", "prod:12", "--s2", "cons:21")
    assert code == 1
    code, _, _ = run(capsys, "mhp", path("prodcons.ida"), "--s1", "prod:13", "--s2", "cons:23")
    assert code == 0


def test_facts_json(capsys):
    code, out, _ = run(capsys, "facts", path("prodcons.ida"), "--format=json")
    assert code == 0
    js = json.loads(out)
    assert js["statements"]["cons:23"]["prio"] == [2, 2]
    assert js["susplist"]["cons"] == ["prod"]


def test_explore_counts_states(capsys):
    code, out, _ = run(capsys, "explore", path("usb_test.ida"), "--format=json")
    assert code == 0
    assert json.loads(out)["states"] > 0


def test_analyze_confirm_and_dump(capsys):
    code, out, _ = run(capsys, "analyze", path("prodcons.ida"), "--format=json", "--confirm",
                       "--dump-facts")
    js = json.loads(out)
    assert code == 1 and "facts" in js
    assert js["metrics"]["precisionPct"] == 100.0


def test_corpus_csv(capsys, tmp_path):
    for name in ("prodcons.ida", "usb_test.ida"):
        (tmp_path / name).write_text((corpus_dir() / name).read_text())
    csv = tmp_path / "out.csv"
    code, out, _ = run(capsys, "corpus", str(tmp_path), "--csv", str(csv), "--loop-bound", "1")
    lines = csv.read_text().strip().splitlines()
    assert lines[1].startswith("prodcons.ida") and lines[2].startswith("usb_test.ida")
    assert lines[-1].startswith("Overall")
    assert "| prodcons.ida |" in out
    # exit 1 is reserved for soundness violations here
    assert code == 0


def test_fuzz_small(capsys):
    code, out, _ = run(capsys, "fuzz", "--seed", "5", "--n", "5", "--format=json")
    assert code == 0
    assert json.loads(out)["counterexamples"] == []


@pytest.mark.parametrize("argv", [
    ["analyze", "--bogus", "x.ida"],
    ["analyze", "/nonexistent/file.ida"],
    ["frobnicate"],
    ["check-oib", "PRODCONS", "--s1", "prod-12", "--s2", "cons:21"],
])
def test_usage_errors_exit_two(capsys, argv):
    argv = [path("prodcons.ida") if a == "PRODCONS" else a for a in argv]
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert err


def test_parse_error_exit_two(capsys, tmp_path):
    f = tmp_path / "bad.ida"
    f.write_text("main { start }")
    code, _, err = run(capsys, "analyze", str(f))
    assert code == 2 and "bad.ida:1:14: expected" in err


def test_json_byte_identical(capsys):
    outs = {run(capsys, "analyze", path("flag.ida"), "--format=json", "--confirm")[1]
            for _ in range(2)}
    assert len(outs) == 1


def test_module_entry_point_no_color():
    r = subprocess.run([sys.executable, "-m", "idaracer", "analyze", path("counter.ida")],
                       capture_output=True, text=True, env={"IDARACER_COLOR": "0", "PATH": ""})
    assert r.returncode == 1
    assert "\x1b[" not in r.stdout
