import itertools
import random

import pytest

from idaracer.frontend import parse
from idaracer.harness import random_program
from idaracer.lang import Binary, Num, Var
from idaracer.semantics import (
    ERROR_RULE, RULES, Bounds, Config, Machine, access_statements, eval_bool, eval_expr,
    explore, initial_state, instrument, mhp, occurs_in_between, relations, replay,
    successors, well_formed,
)

from conftest import load, sid


def test_initial_state_prodcons(prodcons):
    s = initial_state(prodcons)
    assert s.ready == {0} and s.suspended == set() and s.blocked == set()
    assert s.ss and s.id
    assert s.running == 0 and s.interrupted == 0
    assert set(s.env) == {0}
    assert s.prio == (0,)


def test_initial_state_two_isrs():
    p = parse("var x;\nmain { start; }\nisr a { x := 1; }\nisr b { x := 2; }")
    s = initial_state(p)
    assert s.suspended == {1, 2}
    assert s.prio[1] == 8 and s.prio[2] == 9
    assert s.fun == ("main", "a", "b")


@pytest.mark.parametrize("expr, env, value", [
    (Binary("+", Var("count"), Num(1)), {"count": 0}, 1),
    (Binary("-", Binary("*", Num(5), Var("y")), Num(3)), {"y": 2}, 7),
    (Binary("/", Num(-7), Num(2)), {}, -3),
])
def test_eval(expr, env, value):
    assert eval_expr(expr, env) == value


def test_eval_bool():
    assert eval_bool(Binary(">", Var("x"), Num(0)), {"x": 0}) is False


def test_skip_single_successor():
    p = parse("main { skip; start; }")
    s = initial_state(p)
    (tr,) = successors(p, s)
    assert tr.rule == "SKIP"
    assert tr.target == s._replace(pc=(1,))


def test_interrupt_firing_preempts_task():
    p = parse("var x, h;\nmain { create(t, 1, h); start; }\ntask t { skip; }\nisr i { x := 1; }")
    m = Machine(p)
    s = m.initial_state()
    while not (s.running == 2 and not s.id):
        s = m.successors(s)[0].target
    ints = [tr for tr in m.successors(s) if tr.rule == "ASSIGN-INT"]
    assert len(ints) == 1
    t = ints[0].target
    # the ISR ran to completion and handed control back to the task
    assert t.env[0] == 1 and t.running == 2 and t.pc[1] == p.func["i"].cfg.entry


def test_interrupt_mid_isr_records_interrupted():
    p = parse("var x, h;\nmain { create(t, 1, h); start; }\ntask t { skip; }\n"
              "isr i { x := 1; x := 2; }")
    m = Machine(p)
    s = m.initial_state()
    while not (s.running == 2 and not s.id):
        s = m.successors(s)[0].target
    (tr,) = [tr for tr in m.successors(s) if tr.rule == "ASSIGN-INT"]
    assert tr.target.running == 1 and tr.target.interrupted == 2


def test_after_start_prod_and_tshare(prodcons):
    m = Machine(prodcons)
    s = m.initial_state()
    for _ in range(5):
        trs = m.successors(s)
        s = next(tr for tr in trs if tr.target.running != 2 or tr.rule != "START").target
    assert s.running == 1 and s.ready == {0, 1, 2}
    rules = {(tr.rule, tr.thread) for tr in m.successors(s)}
    assert ("ASSUME", 1) in rules
    assert ("TSHARE", 2) in rules


def test_no_tshare_without_round_robin(prodcons):
    g = explore(prodcons, Bounds(loop_bound=1), Config(round_robin=False))
    assert all(tr.rule != "TSHARE" for _, tr, _ in g.edges)


def test_straight_line_three_states():
    p = parse("var x;\nmain { x := 1; start; }")
    for b in (Bounds(), Bounds(loop_bound=0, isr_bound=0)):
        g = explore(p, b)
        assert len(g.nodes) == 3
        assert not g.stuck and not g.errors


def test_prodcons_loop_bound_one_finite(prodcons):
    g = explore(prodcons, Bounds(loop_bound=1, state_cap=100_000))
    assert not g.truncated
    assert g.hit_loop_bound


def test_loop_bound_zero_never_enters_body():
    p = parse("var x;\nmain { while (x < 5) { x := x + 1; } start; }")
    g = explore(p, Bounds(loop_bound=0))
    assert all(n.state.env[0] == 0 for n in g.nodes)
    assert all(n.state.pc[0] != 1 for n in g.nodes)


def test_state_cap_truncates(prodcons):
    g = explore(prodcons, Bounds(state_cap=10))
    assert g.truncated and len(g.nodes) == 10


def test_division_by_zero_is_reported():
    p = parse("var x, y;\nmain { x := 1 / y; start; }")
    g = explore(p)
    assert len(g.errors) == 1
    assert g.errors[0][1].rule == ERROR_RULE


def test_every_rule_name_known(corpus_paths):
    for path in corpus_paths:
        p = parse(path.read_text())
        g = explore(p, Bounds(loop_bound=1))
        for _, tr, _ in g.edges:
            assert tr.rule in RULES


def test_well_formed_everywhere(corpus_paths):
    for path in corpus_paths:
        p = parse(path.read_text())
        for cfg in (Config(), Config("ceiling", False), Config("inheritance")):
            g = explore(p, Bounds(), cfg, keep_edges=False)
            for n in g.nodes:
                assert well_formed(p, n.state) == [], path.name


def _exclusive(p, cfg, b):
    m = Machine(p, cfg)
    g = explore(p, b, cfg, keep_edges=False)
    for n in g.nodes:
        rules = {}
        for tr in m.successors(n.state):
            if tr.rule.endswith("-INT") or tr.rule.startswith("UNBLK") or tr.rule == "TSHARE":
                continue
            rules.setdefault((tr.thread, tr.sid), set()).add(tr.rule)
        for key, names in rules.items():
            assert len(names) <= 1, (key, names)


def test_rule_exclusivity_corpus(corpus_paths):
    for path in corpus_paths:
        p = parse(path.read_text())
        _exclusive(p, Config(), Bounds(loop_bound=1))
        _exclusive(p, Config("inheritance"), Bounds(loop_bound=1))


def test_rule_exclusivity_random():
    rng = random.Random(5)
    for _ in range(40):
        p = parse(random_program(rng))
        _exclusive(p, Config(rng.choice(["plain", "ceiling", "inheritance"])),
                   Bounds(loop_bound=1, isr_bound=1, state_cap=20_000))


def test_frontier_order_irrelevant(corpus_paths):
    for path in corpus_paths:
        p = parse(path.read_text())
        b = Bounds(loop_bound=1)
        assert explore(p, b, order="bfs").states == explore(p, b, order="dfs").states


def test_oib_witness_item_pair(prodcons):
    w = occurs_in_between(prodcons, sid("cons:21"), sid("prod:12"))
    assert w is not None
    assert replay(prodcons_instrumented(prodcons, "cons:21"), w.transitions)
    assert w.pre < w.occurrence
    assert w.transitions[w.occurrence].sid == sid("prod:12")
    assert w.transitions[w.pre].thread != w.transitions[w.occurrence].thread
    assert w.post is not None and w.occurrence < w.post
    assert any(tr.rule == "TSHARE" for tr in w.transitions[w.pre:w.occurrence])


def prodcons_instrumented(p, at):
    return instrument(p, [sid(at)])[0]


def test_oib_none_count_pair(prodcons):
    assert occurs_in_between(prodcons, sid("prod:13"), sid("cons:23")) is None


def test_oib_single_thread():
    p = parse("var x, y;\nmain { x := 1; y := 2; start; }")
    assert occurs_in_between(p, sid("main:2"), sid("main:2#1")) is None


def test_oib_rejects_non_access(prodcons):
    with pytest.raises(ValueError):
        occurs_in_between(prodcons, sid("prod:11"), sid("cons:21"))


def test_mhp_prodcons(prodcons):
    hit, w = mhp(prodcons, sid("prod:12"), sid("cons:21"))
    assert hit and w is not None
    assert mhp(prodcons, sid("prod:13"), sid("cons:23")) == (False, None)


def test_mhp_self_single_thread():
    p = parse("var x;\nmain { x := 1; start; }")
    assert mhp(p, sid("main:2"), sid("main:2"))[0] is False


def test_mhp_self_two_instances():
    p = load("selfpair.ida")
    s = access_statements(p)[0]
    assert mhp(p, s, s)[0] is True


def test_witness_json_shape(prodcons):
    w = occurs_in_between(prodcons, sid("cons:21"), sid("prod:12"))
    js = w.to_json()
    assert js[0].keys() == {"rule", "stmt", "thread", "stateHash"}
    assert all(len(e["stateHash"]) == 16 for e in js)


def test_witness_deterministic(prodcons):
    a = occurs_in_between(prodcons, sid("cons:21"), sid("prod:12")).to_json()
    b = occurs_in_between(prodcons, sid("cons:21"), sid("prod:12")).to_json()
    assert a == b


def test_batch_relations_match_single_queries(prodcons):
    rel = relations(prodcons)
    stmts = access_statements(prodcons)
    for a, b in itertools.product(stmts, repeat=2):
        assert ((a, b) in rel.oib) == (occurs_in_between(prodcons, a, b) is not None)


def test_mhp_iff_oib_prodcons(prodcons):
    stmts = access_statements(prodcons)
    for a, b in itertools.combinations_with_replacement(stmts, 2):
        par = mhp(prodcons, a, b)[0]
        oib = (occurs_in_between(prodcons, a, b) is not None
               or occurs_in_between(prodcons, b, a) is not None)
        assert par == oib, (a, b)


def test_assume_pre_skip_keeps_guard():
    p = parse("var f, h;\nmain { create(t, 1, h); start; }\ntask t { if (f == 1) { skip; } }")
    q, blocks = instrument(p, [sid("t:3")])
    pre = next(i for i in q.func["t"].cfg.instructions if i.sid.tag == "pre" and i.sid.line == 3
               and i.sid.ordinal == 0)
    assert str(pre.cmd) == "assume(f == 1)"


def test_ceiling_boost_in_states():
    p = load("ceiling.ida")
    low_lock = next(i for i in p.func["low"].cfg.instructions if str(i.cmd) == "lock(m)")
    g = explore(p, Bounds(loop_bound=1), Config("ceiling"), keep_edges=False)
    held = [n.state for n in g.nodes
            if any(f == "low" and pc == low_lock.dst for f, pc in zip(n.state.fun, n.state.pc))]
    assert held
    for s in held:
        t = s.fun.index("low")
        assert s.prio[t] == 3


def test_inheritance_raises_holder():
    p = parse("var h1, h2, x;\nmutex m;\nmain { create(lo, 1, h1); create(hi, 3, h2); start; }\n"
              "task lo { lock(m); x := 1; unlock(m); }\ntask hi { block; lock(m); x := 2; unlock(m); }")
    g = explore(p, Bounds(), Config("inheritance"))
    waits = [tr.target for _, tr, _ in g.edges if tr.rule == "LOCK-CS"]
    assert waits
    assert all(s.prio[1] == 3 and s.running == 1 for s in waits)
    released = [tr.target for _, tr, _ in g.edges if tr.rule == "UNLOCK" and tr.thread == 1]
    assert any(s.prio[1] == 1 for s in released)
