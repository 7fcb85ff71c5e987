import json
import random

from idaracer.detector import DetectorConfig
from idaracer.frontend import parse, validate
from idaracer.harness import (
    COLUMNS, Counterexample, FuzzConfig, Violation, audit, csv_table, fuzz_soundness,
    markdown_table, random_program, replay_counterexample, run_corpus, run_program,
)
from idaracer.semantics import Bounds

from conftest import load, sid


def test_prodcons_row(corpus_paths):
    (r,) = run_corpus(next(p for p in corpus_paths if p.name == "prodcons.ida"))
    assert (r.conflicting, r.potential, r.true_races, r.confirmed) == (6, 1, 1, 1)
    assert round(r.elim_pct, 1) == 83.3
    assert r.precision_pct == 100.0
    assert r.violations == [] and not r.bounds_hit


def test_zero_conflict_row(corpus_paths):
    r = run_program(next(p for p in corpus_paths if p.name == "usb_test.ida"))
    assert r.conflicting == 0 and r.elim_pct == 0.0 and r.precision_pct == 100.0


def test_results_ordered_by_name(corpus_paths):
    res = run_corpus(b=Bounds(loop_bound=1))
    assert [r.program for r in res] == sorted(p.name for p in corpus_paths)


def test_parallel_matches_sequential():
    b = Bounds(loop_bound=1)
    seq = run_corpus(b=b)
    par = run_corpus(b=b, jobs=2)
    strip = lambda rs: [(r.program, r.conflicting, r.potential, r.true_races) for r in rs]
    assert strip(seq) == strip(par)


def test_tables():
    res = run_corpus(b=Bounds(loop_bound=1))
    md = markdown_table(res)
    assert md.splitlines()[0].startswith("| Program | Conf. acc. |")
    assert md.splitlines()[-1].startswith("| Overall |")
    rows = csv_table(res).splitlines()
    assert rows[0].split(",") == list(COLUMNS)
    assert len(rows) == len(res) + 2


def test_metrics_match_hand_counts():
    a = audit(load("prodcons.ida"))
    racy = [v for v in a.report.verdicts if v.racy]
    assert a.report.potential == len(racy)
    assert a.confirmed == sum((v.pair.s1, v.pair.s2) in a.rel.mhp for v in racy)


def test_generator_valid_and_bounded():
    rng = random.Random(4)
    sc = FuzzConfig()
    for _ in range(100):
        p = parse(random_program(rng, sc))
        assert validate(p) == []
        tasks = [f for f in p.functions if f.kind == "task"]
        assert 1 <= len(tasks) <= sc.max_tasks
        assert len(p.isrs) <= sc.max_isrs


def test_fuzz_seed_one():
    rep = fuzz_soundness(seed=1, n=100)
    assert rep.counterexamples == []
    assert rep.directions > 0


def test_fuzz_without_suspend_never_uses_c1():
    rep = fuzz_soundness(seed=2, n=40, sc=FuzzConfig(suspend_resume=False))
    assert "C1" not in rep.rules
    assert rep.counterexamples == []


def test_fuzz_deterministic():
    a = fuzz_soundness(seed=3, n=15).to_json()
    b = fuzz_soundness(seed=3, n=15).to_json()
    assert a == b


def test_replay_counterexample_round_trip(tmp_path):
    src = (load.__globals__["corpus_dir"]() / "prodcons.ida").read_text()
    c = Counterexample(7, 0, src, DetectorConfig(), Bounds(), [])
    path = tmp_path / "cex.json"
    path.write_text(json.dumps(c.to_json()))
    assert replay_counterexample(path) == []
    assert replay_counterexample(json.dumps(c.to_json())) == []


def test_violation_json():
    v = Violation(sid("a:1"), sid("b:2"), "C2")
    assert v.to_json() == {"s1": "a:1", "s2": "b:2", "rule": "C2"}
