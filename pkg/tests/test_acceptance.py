import itertools
import time
from concurrent.futures import ProcessPoolExecutor

import pytest

from idaracer.analyses import PrioInterval, analyze
from idaracer.detector import RULE_ORDER, DetectorConfig, detect_races
from idaracer.frontend import parse, statements
from idaracer.harness import fact_violations, fuzz_soundness, run_corpus
from idaracer.semantics import Bounds, Config, access_statements, explore, mhp, occurs_in_between

from conftest import load, sid

FUZZ_SEEDS = range(101, 106)
FUZZ_PER_SEED = 100


@pytest.mark.criterion(1, "producer-consumer priority and suspended facts")
def test_prodcons_facts(record_property):
    t0 = time.perf_counter()
    p = load("prodcons.ida")
    facts = analyze(p)
    elapsed = time.perf_counter() - t0
    for s, _ in statements(p):
        if s.func == "prod":
            assert facts.prio[s] == PrioInterval(1, 1), s
        want = {"cons"} if s.func == "prod" and s.line in (12, 13, 14) else set()
        assert facts.suspended[s] == want, s
    assert facts.prio[sid("cons:23")] == PrioInterval(2, 2)
    assert facts.prio[sid("cons:21")] == PrioInterval(1, 1)
    record_property("note", f"{elapsed * 1000:.1f} ms")
    assert elapsed < 1.0


@pytest.mark.criterion(2, "count pair non-racy by C1+C2, item pair racy, oracle agrees")
def test_prodcons_verdicts_and_witnesses(record_property):
    t0 = time.perf_counter()
    p = load("prodcons.ida")
    by = {(str(v.pair.s1), str(v.pair.s2)): v for v in detect_races(p).verdicts}
    count, item = by[("prod:13", "cons:23")], by[("prod:12", "cons:21")]
    assert count.verdict == "non-racy" and set(count.rules) == {"C1", "C2"}
    assert item.verdict == "potentially-racy"
    b = Bounds(loop_bound=2)
    assert occurs_in_between(p, sid("cons:21"), sid("prod:12"), b) is not None
    assert occurs_in_between(p, sid("prod:13"), sid("cons:23"), b) is None
    assert occurs_in_between(p, sid("cons:23"), sid("prod:13"), b) is None
    elapsed = time.perf_counter() - t0
    record_property("note", f"{elapsed:.2f} s")
    assert elapsed < 10.0


def _fuzz(seed):
    return fuzz_soundness(seed=seed, n=FUZZ_PER_SEED)


@pytest.mark.criterion(3, "no eliminated direction has an oracle witness")
def test_elimination_sound(corpus_paths, record_property):
    t0 = time.perf_counter()
    assert len(corpus_paths) >= 10
    fired, bad = set(), []
    for cfg in (DetectorConfig(), DetectorConfig("ceiling", False),
                DetectorConfig("inheritance", True)):
        for r in run_corpus(cfg=cfg, jobs=4):
            fired |= set(r.rules)
            bad += [(r.program, v) for v in r.violations]
    assert fired >= set(RULE_ORDER)
    with ProcessPoolExecutor(max_workers=len(FUZZ_SEEDS)) as ex:
        reports = list(ex.map(_fuzz, FUZZ_SEEDS))
    programs = sum(r.programs for r in reports)
    bad += [c for r in reports for c in r.counterexamples]
    elapsed = time.perf_counter() - t0
    record_property("note", f"{len(corpus_paths)} corpus x 3 configs + {programs} fuzzed, "
                            f"{len(bad)} violations, {elapsed:.0f} s")
    assert programs >= 500
    assert bad == []
    assert elapsed < 300


@pytest.mark.criterion(4, "mhp iff occurs-in-between in either order")
def test_mhp_equivalence(corpus_paths, record_property):
    pairs = 0
    for path in corpus_paths:
        p = parse(path.read_text())
        for a, b in itertools.combinations_with_replacement(access_statements(p), 2):
            par = mhp(p, a, b)[0]
            either = (occurs_in_between(p, a, b) is not None
                      or occurs_in_between(p, b, a) is not None)
            assert par == either, (path.name, str(a), str(b))
            pairs += 1
    record_property("note", f"{pairs} pairs")
    assert pairs >= 200


@pytest.mark.criterion(5, "static facts hold in every explored state")
def test_fact_soundness(corpus_paths, record_property):
    states = 0
    for path in corpus_paths:
        p = parse(path.read_text())
        for mode, rr in (("plain", True), ("ceiling", False), ("inheritance", True)):
            g = explore(p, Bounds(), Config(mode, rr), keep_edges=False)
            states += len(g.nodes)
            assert fact_violations(p, analyze(p, mode), g) == [], (path.name, mode)
    record_property("note", f"{states} states")


@pytest.mark.criterion(6, "pingpong 0 potential, counter 0% eliminated, usb_test 0/100")
def test_table_conventions(record_property):
    assert detect_races(load("pingpong.ida"), DetectorConfig("ceiling", False)).potential == 0
    counter = detect_races(load("counter.ida"))
    assert counter.conflicting > 0 and counter.elim_pct == 0.0
    (usb,) = [r for r in run_corpus() if r.program == "usb_test.ida"]
    assert usb.conflicting == 0
    assert (usb.elim_pct, usb.precision_pct) == (0.0, 100.0)


@pytest.mark.criterion(7, "static analysis under 1.5 s per program; overall precision")
def test_performance(corpus_paths, record_property):
    slowest = 0.0
    for path in corpus_paths:
        t0 = time.perf_counter()
        detect_races(parse(path.read_text()))
        slowest = max(slowest, time.perf_counter() - t0)
    res = run_corpus(jobs=4)
    potential = sum(r.potential for r in res)
    confirmed = sum(r.confirmed for r in res)
    prec = 100.0 * confirmed / potential if potential else 100.0
    record_property("note", f"slowest {slowest * 1000:.0f} ms, overall precision {prec:.1f}%")
    assert slowest < 1.5
