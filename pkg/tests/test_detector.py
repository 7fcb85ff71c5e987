import json
import random

import pytest

from idaracer.analyses import analyze
from idaracer.detector import (
    RULE_ORDER, DetectorConfig, DiagnosticError, check_noib, conflicting_pairs, detect_races,
    elim_pct, precision_pct, rules_holding,
)
from idaracer.frontend import parse
from idaracer.harness import random_program

from conftest import load, sid

PRODCONS_PAIRS = {
    ("item", "main:1", "prod:12"), ("item", "main:1", "cons:21"),
    ("count", "main:2", "prod:13"), ("count", "main:2", "cons:23"),
    ("item", "prod:12", "cons:21"), ("count", "prod:13", "cons:23"),
}


def test_prodcons_conflicting_pairs(prodcons):
    pairs = conflicting_pairs(prodcons)
    assert {(c.var, str(c.s1), str(c.s2)) for c in pairs} == PRODCONS_PAIRS
    assert len(pairs) == 6


def test_handles_are_not_shared_data(prodcons):
    assert not any(c.var in ("t1", "t2") for c in conflicting_pairs(prodcons))


def test_read_read_is_no_conflict():
    p = parse("var x, a, b, h1, h2;\nmain { create(r1, 1, h1); create(r2, 1, h2); start; }\n"
              "task r1 { a := x; }\ntask r2 { b := x; }")
    assert conflicting_pairs(p) == []


def test_multi_instance_self_pair():
    p = load("selfpair.ida")
    (c,) = conflicting_pairs(p)
    assert c.s1 == c.s2 and c.kinds == ("write", "write")


def test_single_instance_has_no_self_pair():
    p = parse("var x, h;\nmain { create(a, 1, h); start; }\ntask a { x := x + 1; }")
    assert conflicting_pairs(p) == []


def test_uncreated_function_ignored():
    p = parse("var x, h;\nmain { create(a, 1, h); start; }\ntask a { x := 1; }\ntask b { x := 2; }")
    assert conflicting_pairs(p) == []


def test_pair_invariants(corpus_paths):
    for path in corpus_paths:
        p = parse(path.read_text())
        for c in conflicting_pairs(p):
            assert "write" in c.kinds
            assert c.s1.func != c.s2.func or analyze(p).instances[c.s1.func] >= 2


@pytest.mark.parametrize("s1, s2, rule", [
    ("prod:13", "cons:23", "C1"),
    ("cons:23", "prod:13", "C2"),
    ("cons:21", "prod:12", None),
])
def test_prodcons_directions(prodcons, s1, s2, rule):
    assert check_noib(sid(s1), sid(s2), analyze(prodcons)).rule == rule


def test_prodcons_verdicts(prodcons):
    r = detect_races(prodcons)
    by = {(str(v.pair.s1), str(v.pair.s2)): v for v in r.verdicts}
    assert by[("prod:13", "cons:23")].verdict == "non-racy"
    assert by[("prod:13", "cons:23")].rules == ("C1", "C2")
    assert by[("prod:12", "cons:21")].verdict == "potentially-racy"
    for k, v in by.items():
        if k[0].startswith("main"):
            assert v.verdict == "non-racy" and v.rules[0] == "C5"
    assert r.potential == 1


@pytest.mark.parametrize("cfg", [DetectorConfig(), DetectorConfig("ceiling", False),
                                 DetectorConfig("inheritance", True)])
def test_pingpong_clean(cfg):
    assert detect_races(load("pingpong.ida"), cfg).potential == 0


def test_counter_all_racy():
    r = detect_races(load("counter.ida"))
    assert r.conflicting > 0 and r.potential == r.conflicting
    assert r.elim_pct == 0.0


def test_rule_coverage(corpus_paths):
    fired = set()
    for path in corpus_paths:
        r = detect_races(parse(path.read_text()))
        fired |= {x for v in r.verdicts for x in v.rules if x}
    assert fired == set(RULE_ORDER)


def test_c3_flag_example():
    r = detect_races(load("flag.ida"))
    (v,) = [v for v in r.verdicts if v.pair.var == "data"]
    assert v.rules == ("C3", "C2")


def test_c6_and_c5_examples():
    (v,) = detect_races(load("suspendsched.ida")).verdicts
    assert v.rules == ("C6", "C2")
    r = detect_races(load("disableint.ida"))
    assert all(v.rules == ("C5", "C2") for v in r.verdicts)


def test_c1_fails_with_third_party_resumer():
    (v,) = detect_races(load("blocking.ida")).verdicts
    assert v.racy and v.rules == (None, None)


def test_self_pair_never_eliminated_by_priority():
    (v,) = detect_races(load("selfpair.ida")).verdicts
    assert "C2" not in v.rules


def _programs(corpus_paths, n=60, seed=9):
    rng = random.Random(seed)
    return [parse(p.read_text()) for p in corpus_paths] + \
        [parse(random_program(rng)) for _ in range(n)]


def test_order_only_changes_reported_rule(corpus_paths):
    for p in _programs(corpus_paths):
        for mode in ("plain", "ceiling"):
            for rr in (True, False):
                cfg = DetectorConfig(mode, rr)
                facts = analyze(p, mode)
                for c in conflicting_pairs(p):
                    for a, b in ((c.s1, c.s2), (c.s2, c.s1)):
                        holding = rules_holding(a, b, facts, cfg)
                        got = check_noib(a, b, facts, cfg).rule
                        assert got == (holding[0] if holding else None)


def test_no_round_robin_is_monotone(corpus_paths):
    for p in _programs(corpus_paths):
        for mode in ("plain", "ceiling", "inheritance"):
            rr = detect_races(p, DetectorConfig(mode, True))
            no = detect_races(p, DetectorConfig(mode, False))
            for a, b in zip(rr.verdicts, no.verdicts):
                assert a.pair == b.pair
                if not a.racy:
                    assert not b.racy


def test_detection_is_pure(corpus_paths):
    for p in _programs(corpus_paths, n=10):
        a = json.dumps(detect_races(p).to_json(), sort_keys=True)
        b = json.dumps(detect_races(p).to_json(), sort_keys=True)
        assert a == b


def test_report_schema(prodcons):
    js = detect_races(prodcons, name="prodcons.ida").to_json()
    assert js.keys() == {"program", "config", "pairs", "metrics"}
    assert js["config"] == {"mutex": "plain", "roundRobin": True}
    assert js["metrics"] == {"conflicting": 6, "potential": 1, "elimPct": 83.33}
    assert js["pairs"][0].keys() == {"var", "s1", "s2", "verdict", "rules"}


def test_invalid_program_rejected():
    with pytest.raises(DiagnosticError):
        detect_races(parse("main { skip; }\ntask t { start; }"))


@pytest.mark.parametrize("conf, pot, want", [(6, 1, 100 * 5 / 6), (0, 0, 0.0), (4, 4, 0.0),
                                             (3, 0, 100.0)])
def test_elim_pct(conf, pot, want):
    assert elim_pct(conf, pot) == pytest.approx(want)


@pytest.mark.parametrize("pot, ok, want", [(1, 1, 100.0), (0, 0, 100.0), (4, 3, 75.0)])
def test_precision_pct(pot, ok, want):
    assert precision_pct(pot, ok) == pytest.approx(want)
