"""Conflicting-access enumeration and the six cannot-occur-in-between rules.

``check_noib(s1, s2, ...)`` asks whether ``s2`` can be shown unable to run
while ``s1`` is executing.  A pair is non-racy when both directions are
eliminated.  The rules, cheapest first:

C5  interrupts disabled around ``s1``, or either statement runs before ``start``
C6  scheduler suspended around ``s1`` and neither statement is in an ISR
C4  a common real lock held at both
C1  ``s1`` lies in a suspend/resume block that keeps ``s2``'s task suspended
C2  ``s1`` always outranks ``s2`` and no one can suspend ``s1``'s task meanwhile
C3  ``s1`` is inside a flag-set block and ``s2`` inside the matching flag check
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .analyses import (
    INT_OFF, SCHED_OFF, AnalysisFacts, FlagChk, SuspBlock, analyze, creates_vars,
    instance_counts,
)
from .frontend import Program, StmtId, iter_instructions, validate
from .lang import Assign, Assume, EnableInt, Num, ResumeSched, reads, writes

RULE_ORDER = ("C5", "C6", "C4", "C1", "C2", "C3")


@dataclass(frozen=True)
class DetectorConfig:
    mutex: str = "plain"
    round_robin: bool = True

    def to_json(self) -> dict:
        return {"mutex": self.mutex, "roundRobin": self.round_robin}


@dataclass(frozen=True, order=True)
class ConflictPair:
    var: str
    s1: StmtId
    s2: StmtId
    kinds: tuple[str, str]


@dataclass(frozen=True)
class NoibVerdict:
    s1: StmtId
    s2: StmtId
    rule: str | None  # eliminating rule, None when unknown

    @property
    def eliminated(self) -> bool:
        return self.rule is not None


@dataclass
class RaceVerdict:
    pair: ConflictPair
    forward: NoibVerdict
    backward: NoibVerdict
    witness: object | None = None  # semantics.Witness when confirmed by the oracle

    @property
    def racy(self) -> bool:
        return not (self.forward.eliminated and self.backward.eliminated)

    @property
    def verdict(self) -> str:
        return "potentially-racy" if self.racy else "non-racy"

    @property
    def rules(self) -> tuple[str | None, str | None]:
        return self.forward.rule, self.backward.rule


class DiagnosticError(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


# ------------------------------------------------------------------ pairs


def accesses(p: Program) -> list[tuple[StmtId, str, str]]:
    """(statement, variable, read|write) for every assign/assume access."""
    out = []
    for _, ins in iter_instructions(p):
        c = ins.cmd
        if not isinstance(c, (Assign, Assume)):
            continue
        w = writes(c)
        for v in sorted(reads(c) | w):
            out.append((ins.sid, v, "write" if v in w else "read"))
    return out


def conflicting_pairs(p: Program, instances: dict[str, int] | None = None) -> list[ConflictPair]:
    if instances is None:
        instances = instance_counts(p)
    assigned = {ins.cmd.var for _, ins in iter_instructions(p) if isinstance(ins.cmd, Assign)}
    plumbing = creates_vars(p) - assigned
    order = {ins.sid: k for k, (_, ins) in enumerate(iter_instructions(p))}
    by_var: dict[str, list[tuple[StmtId, str]]] = {}
    for sid, v, kind in accesses(p):
        if v in plumbing or instances.get(sid.func, 0) == 0:
            continue
        by_var.setdefault(v, []).append((sid, kind))
    out = []
    for v in p.vars:
        acc = by_var.get(v, [])
        for i, (a, ka) in enumerate(acc):
            for b, kb in acc[i:]:
                if "write" not in (ka, kb):
                    continue
                if a.func == b.func and instances[a.func] < 2:
                    continue
                out.append(ConflictPair(v, a, b, (ka, kb)))
    out.sort(key=lambda c: (order[c.s1], order[c.s2], c.var))
    return out


# ------------------------------------------------------------------ rules


@dataclass
class _Ctx:
    facts: AnalysisFacts
    cfg: DetectorConfig

    def hi(self, func: str) -> int | None:
        iv = self.facts.func_prio.get(func)
        return None if iv is None else iv.hi

    def single(self, func: str) -> bool:
        return self.facts.instances.get(func, 0) == 1

    def others(self, funcs, me: str) -> set[str]:
        """``funcs`` without ``me`` when ``me`` is run by exactly one thread."""
        return set(funcs) - ({me} if self.single(me) else set())

    def reaching(self, funcs, level: int, strict: bool = False) -> list[str]:
        """Functions whose maximum priority reaches ``level``."""
        out = []
        for f in funcs:
            h = self.hi(f)
            if h is not None and (h > level if strict else h >= level):
                out.append(f)
        return out

    def nothing_above(self, level: int, me: str) -> bool:
        """No other task can ever outrank ``level`` (so equal-priority peers
        never get the processor while we are ready, absent time slicing)."""
        tasks = [f.name for f in self.facts.program.functions if f.kind != "isr"]
        return not self.reaching(self.others(tasks, me), level, strict=True)


def rule_c5(s1: StmtId, s2: StmtId, x: _Ctx) -> bool:
    # before start nothing else runs; after start main never returns there
    pre = x.facts.prestart
    return INT_OFF in x.facts.locks[s1] or s1 in pre or s2 in pre


def rule_c6(s1: StmtId, s2: StmtId, x: _Ctx) -> bool:
    p = x.facts.program
    return (SCHED_OFF in x.facts.locks[s1] and p.func[s1.func].kind != "isr"
            and p.func[s2.func].kind != "isr")


def rule_c4(s1: StmtId, s2: StmtId, x: _Ctx) -> bool:
    l1 = {l for l in x.facts.locks[s1] if l.kind == "real"}
    return bool(l1 & x.facts.locks[s2])


def rule_c1(s1: StmtId, s2: StmtId, x: _Ctx) -> bool:
    f = x.facts
    a, b = s1.func, s2.func
    lock = SuspBlock(b)
    if lock not in f.locks[s1]:
        return False
    block = f.region_prio(a, lock)
    if block is None:
        return False
    p = block.lo
    strict = (not x.cfg.round_robin and x.nothing_above(p, a)
              and not any(isinstance(i.cmd, (EnableInt, ResumeSched)) for i in f.region(a, lock)))
    others = x.others(f.lists.reslist.get(b, ()), a)
    if x.reaching(others, p, strict):
        return False
    if others and f.blocks_before(s1, lock):
        return False
    if others and x.reaching(x.others(f.lists.susplist.get(a, ()), a), p, strict):
        return False
    return True


def rule_c2(s1: StmtId, s2: StmtId, x: _Ctx) -> bool:
    f = x.facts
    a = s1.func
    i1, i2 = f.prio[s1], f.prio[s2]
    if i1 is None or i2 is None:
        return False
    above = i1.lo > i2.hi
    if not above and not x.cfg.round_robin and i1.lo >= i2.hi:
        above = x.nothing_above(i1.lo, a)
    if not above:
        return False
    return not x.reaching(x.others(f.lists.susplist.get(a, ()), a), i1.lo)


def resetters(p: Program, flag: str) -> set[str]:
    """Functions with an assignment that may clear ``flag``."""
    out = set()
    for fn, ins in iter_instructions(p):
        c = ins.cmd
        if isinstance(c, Assign) and c.var == flag:
            if not (isinstance(c.expr, Num) and c.expr.value != 0):
                out.add(fn.name)
    return out


def rule_c3(s1: StmtId, s2: StmtId, x: _Ctx) -> bool:
    f = x.facts
    p = f.program
    a, b = s1.func, s2.func
    for lock in sorted(l for l in f.locks[s1] if l.kind == "flagset"):
        chk = FlagChk(lock.name)
        if chk not in f.locks[s2]:
            continue
        set_blk, chk_blk = f.region_prio(a, lock), f.region_prio(b, chk)
        if set_blk is None or chk_blk is None or not set_blk.hi < chk_blk.lo:
            continue
        p1 = set_blk.lo
        resets = x.others(resetters(p, lock.name), a)
        sched_off = (all(SCHED_OFF in f.locks[i.sid] for i in f.region(a, lock))
                     and not any(p.func[r].kind == "isr" for r in resets))
        if not sched_off and x.reaching(resets, p1):
            continue
        if resets and f.blocks_before(s1, lock):
            continue
        if resets and x.reaching(x.others(f.lists.susplist.get(a, ()), a), p1):
            continue
        if f.blocks_before(s2, chk):
            continue
        if x.reaching(x.others(f.lists.susplist.get(b, ()), b), chk_blk.lo):
            continue
        return True
    return False


RULES: dict[str, Callable[[StmtId, StmtId, _Ctx], bool]] = {
    "C1": rule_c1, "C2": rule_c2, "C3": rule_c3, "C4": rule_c4, "C5": rule_c5, "C6": rule_c6,
}


def rules_holding(s1: StmtId, s2: StmtId, facts: AnalysisFacts,
                  cfg: DetectorConfig = DetectorConfig()) -> list[str]:
    """Every rule whose predicate holds, in evaluation order."""
    x = _Ctx(facts, cfg)
    return [r for r in RULE_ORDER if RULES[r](s1, s2, x)]


def check_noib(s1: StmtId, s2: StmtId, facts: AnalysisFacts,
               cfg: DetectorConfig = DetectorConfig()) -> NoibVerdict:
    x = _Ctx(facts, cfg)
    for r in RULE_ORDER:
        if RULES[r](s1, s2, x):
            return NoibVerdict(s1, s2, r)
    return NoibVerdict(s1, s2, None)


# ----------------------------------------------------------------- driver


@dataclass
class RaceReport:
    program: str
    config: DetectorConfig
    verdicts: list[RaceVerdict]
    facts: AnalysisFacts
    confirmed: int | None = None  # racy pairs with an oracle witness, when checked

    @property
    def conflicting(self) -> int:
        return len(self.verdicts)

    @property
    def potential(self) -> int:
        return sum(v.racy for v in self.verdicts)

    @property
    def elim_pct(self) -> float:
        return elim_pct(self.conflicting, self.potential)

    def to_json(self) -> dict:
        pairs = []
        for v in self.verdicts:
            entry = {"var": v.pair.var, "s1": str(v.pair.s1), "s2": str(v.pair.s2),
                     "verdict": v.verdict, "rules": list(v.rules)}
            if v.witness is not None:
                entry["witness"] = v.witness.to_json()
            pairs.append(entry)
        metrics = {"conflicting": self.conflicting, "potential": self.potential,
                   "elimPct": round(self.elim_pct, 2)}
        if self.confirmed is not None:
            metrics["precisionPct"] = round(precision_pct(self.potential, self.confirmed), 2)
        return {"program": self.program, "config": self.config.to_json(),
                "pairs": pairs, "metrics": metrics}


def elim_pct(conflicting: int, potential: int) -> float:
    return 0.0 if conflicting == 0 else 100.0 * (conflicting - potential) / conflicting


def precision_pct(potential: int, confirmed: int) -> float:
    return 100.0 if potential == 0 else 100.0 * confirmed / potential


def detect_races(p: Program, cfg: DetectorConfig = DetectorConfig(),
                 name: str = "<program>") -> RaceReport:
    diags = validate(p)
    if diags:
        raise DiagnosticError(diags)
    facts = analyze(p, cfg.mutex)
    out = []
    for pair in conflicting_pairs(p, facts.instances):
        out.append(RaceVerdict(pair, check_noib(pair.s1, pair.s2, facts, cfg),
                               check_noib(pair.s2, pair.s1, facts, cfg)))
    return RaceReport(name, cfg, out, facts)
