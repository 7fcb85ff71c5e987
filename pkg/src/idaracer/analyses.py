"""Static pre-analyses feeding the race rules.

* handle resolution: which thread functions a handle variable may (or must)
  name at a given statement;
* two-pass priority intervals per statement, aware of mutex protocols;
* suspend/resume lists per task function;
* a forward must-lockset over real locks and notional locks that stand for
  suspend-resume blocks, flag blocks, interrupts-off and scheduler-off regions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, TypeVar

from .frontend import (
    Cfg, Function, Instruction, Program, StmtId, inheritance_bounds, iter_instructions,
    mutex_ceilings,
)
from .lang import (
    Assign, Assume, Binary, Block, Create, DisableInt, EnableInt, Lock, Num, Resume,
    ResumeSched, SetPriority, Start, Suspend, SuspendSched, Unlock, Var,
)

F = TypeVar("F")

MANY = 2  # instance counts saturate here


# --------------------------------------------------------------- data types


@dataclass(frozen=True, order=True)
class PrioInterval:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def hull(self, other: "PrioInterval | None") -> "PrioInterval":
        if other is None:
            return self
        return PrioInterval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __contains__(self, p: int) -> bool:
        return self.lo <= p <= self.hi

    def __str__(self) -> str:
        return f"({self.lo},{self.hi})"


@dataclass(frozen=True, order=True)
class NotionalLock:
    kind: str  # real | susp | flagset | flagchk | intoff | schedoff
    name: str = ""

    def __str__(self) -> str:
        labels = {"real": "{}", "susp": "susp:{}", "flagset": "flagset:{}",
                  "flagchk": "flagchk:{}", "intoff": "intoff", "schedoff": "schedoff"}
        return labels[self.kind].format(self.name)


def Real(l: str) -> NotionalLock:
    return NotionalLock("real", l)


def SuspBlock(func: str) -> NotionalLock:
    return NotionalLock("susp", func)


def FlagSet(var: str) -> NotionalLock:
    return NotionalLock("flagset", var)


def FlagChk(var: str) -> NotionalLock:
    return NotionalLock("flagchk", var)


INT_OFF = NotionalLock("intoff")
SCHED_OFF = NotionalLock("schedoff")


@dataclass(frozen=True)
class TaskLists:
    susplist: dict[str, frozenset[str]]
    reslist: dict[str, frozenset[str]]


# ----------------------------------------------------------- CFG utilities


def solve_forward(cfg: Cfg, entry_fact: F, transfer: Callable[[Instruction, F], F | None],
                  join: Callable[[F, F], F]) -> dict[int, F]:
    """Worklist fixpoint; unreached locations are absent from the result."""
    facts: dict[int, F] = {cfg.entry: entry_fact}
    work = deque([cfg.entry])
    queued = {cfg.entry}
    while work:
        loc = work.popleft()
        queued.discard(loc)
        here = facts[loc]
        for ins in cfg.out_edges[loc]:
            out = transfer(ins, here)
            if out is None:
                continue
            old = facts.get(ins.dst)
            new = out if old is None else join(old, out)
            if new != old:
                facts[ins.dst] = new
                if ins.dst not in queued:
                    queued.add(ins.dst)
                    work.append(ins.dst)
    return facts


def reachable_from(cfg: Cfg, starts: Iterable[int]) -> set[int]:
    seen = set(starts)
    work = list(seen)
    while work:
        l = work.pop()
        for ins in cfg.out_edges[l]:
            if ins.dst not in seen:
                seen.add(ins.dst)
                work.append(ins.dst)
    return seen


def cyclic_locations(cfg: Cfg) -> set[int]:
    """Locations lying on some cycle."""
    return {l for l in cfg.locations
            if l in reachable_from(cfg, [i.dst for i in cfg.out_edges[l]])}


def prestart(p: Program) -> set[StmtId]:
    """Main statements that can only execute before the scheduler starts."""
    cfg = p.main.cfg
    after = reachable_from(cfg, [i.dst for i in cfg.instructions if isinstance(i.cmd, Start)])
    return {i.sid for i in cfg.instructions if i.src not in after}


# --------------------------------------------------------- handle resolution


@dataclass
class HandleInfo:
    """Which thread functions a handle variable can name."""

    program: Program
    instances: dict[str, int]  # 0, 1 or MANY threads per function
    creates: dict[str, list[tuple[str, Instruction]]]  # handle -> (creating function, site)
    assigned: set[str]  # variables written by plain assignment
    defined_at_start: frozenset[str]  # handles surely bound before the scheduler starts
    main_defined: dict[int, frozenset[str]]  # per main location, surely bound handles
    prestart_sites: set[StmtId]
    cyclic: dict[str, set[int]]

    def _defined(self, sid: StmtId, var: str) -> bool:
        if sid.func == "main":
            ins = self.program.instruction[sid]
            return var in self.main_defined.get(ins.src, frozenset())
        return var in self.defined_at_start

    def may_run(self, sid: StmtId, target: str | None) -> frozenset[str]:
        if target is None:
            return frozenset((sid.func,))
        if target in self.assigned:
            return frozenset(f.name for f in self.program.functions)
        funcs = {ins.cmd.func for _, ins in self.creates.get(target, ())}
        if not self._defined(sid, target):
            funcs.add("main")  # unbound handles hold zero, the main thread
        return frozenset(funcs)

    def must_run(self, sid: StmtId, target: str | None) -> str | None:
        if target is None:
            return sid.func if self.instances.get(sid.func, 0) == 1 else None
        sites = self.creates.get(target, ())
        if target in self.assigned or len(sites) != 1 or not self._defined(sid, target):
            return None
        creator, ins = sites[0]
        func = ins.cmd.func
        if creator != "main" or ins.src in self.cyclic["main"] or self.instances[func] != 1:
            return None
        if sid.func != "main" and ins.sid not in self.prestart_sites:
            return None
        return func


def instance_counts(p: Program) -> dict[str, int]:
    cyc = {f.name: cyclic_locations(f.cfg) for f in p.functions}
    count = {f.name: (1 if f.kind in ("main", "isr") else 0) for f in p.functions}
    changed = True
    while changed:
        changed = False
        new = {f.name: (1 if f.kind in ("main", "isr") else 0) for f in p.functions}
        for f, ins in iter_instructions(p):
            if isinstance(ins.cmd, Create) and count[f.name] > 0:
                mult = MANY if (ins.src in cyc[f.name] or count[f.name] >= MANY) else 1
                target = ins.cmd.func
                new[target] = min(MANY, new[target] + mult)
        if new != count:
            count, changed = new, True
    return count


def resolve_handles(p: Program) -> HandleInfo:
    creates: dict[str, list[tuple[str, Instruction]]] = {}
    assigned = set()
    for f, ins in iter_instructions(p):
        if isinstance(ins.cmd, Create):
            creates.setdefault(ins.cmd.handle, []).append((f.name, ins))
        elif isinstance(ins.cmd, Assign):
            assigned.add(ins.cmd.var)
    cfg = p.main.cfg

    def transfer(ins: Instruction, fact: frozenset[str]) -> frozenset[str]:
        if isinstance(ins.cmd, Create):
            return fact | {ins.cmd.handle}
        if isinstance(ins.cmd, Assign):
            return fact - {ins.cmd.var}
        return fact

    main_defined = solve_forward(cfg, frozenset(), transfer, frozenset.intersection)
    starts = [i for i in cfg.instructions if isinstance(i.cmd, Start)]
    at_start = frozenset()
    if starts:
        sets = [main_defined.get(i.src) for i in starts]
        sets = [s for s in sets if s is not None]
        at_start = frozenset.intersection(*sets) if sets else frozenset()
    return HandleInfo(
        program=p, instances=instance_counts(p), creates=creates, assigned=assigned,
        defined_at_start=at_start, main_defined=main_defined, prestart_sites=prestart(p),
        cyclic={f.name: cyclic_locations(f.cfg) for f in p.functions},
    )


def creates_vars(p: Program) -> set[str]:
    return {ins.cmd.handle for _, ins in iter_instructions(p) if isinstance(ins.cmd, Create)}


# ----------------------------------------------------------- priority facts


@dataclass(frozen=True)
class _PrioFact:
    lo: int
    hi: int
    must: frozenset[str] = frozenset()  # mutexes surely held
    may: frozenset[str] = frozenset()  # mutexes possibly held

    def join(self, o: "_PrioFact") -> "_PrioFact":
        return _PrioFact(min(self.lo, o.lo), max(self.hi, o.hi), self.must & o.must, self.may | o.may)


def _self_target(h: HandleInfo, sid: StmtId, target: str | None) -> bool:
    if target is None:
        return True
    return h.must_run(sid, target) == sid.func


def priority_analysis(p: Program, h: HandleInfo | None = None,
                      mutex: str = "plain") -> dict[StmtId, PrioInterval | None]:
    """Dynamic priority interval just before each statement (None if it never runs)."""
    h = h or resolve_handles(p)
    has_mutex = any(k == "mutex" for k in p.locks.values())
    mode = mutex if has_mutex else "plain"
    bump = (mutex_ceilings(p) if mode == "ceiling"
            else inheritance_bounds(p) if mode == "inheritance" else {})

    init: dict[str, tuple[int, int] | None] = {}
    for f in p.functions:
        if f.kind == "main":
            init[f.name] = (0, 0)
        elif f.kind == "isr":
            q = p.isr_priority[f.name]
            init[f.name] = (q, q)
        else:
            prios = [ins.cmd.prio for _, ins in iter_instructions(p)
                     if isinstance(ins.cmd, Create) and ins.cmd.func == f.name]
            init[f.name] = (min(prios), max(prios)) if prios else None

    # pass 1: flow-sensitive within each function
    base: dict[str, dict[int, _PrioFact]] = {}
    for f in p.functions:
        if init[f.name] is None:
            base[f.name] = {}
            continue
        tracks = f.kind != "isr" and mode != "plain"

        def transfer(ins: Instruction, fact: _PrioFact, tracks=tracks) -> _PrioFact:
            c = ins.cmd
            if isinstance(c, SetPriority) and _self_target(h, ins.sid, c.target):
                return _PrioFact(c.prio, c.prio, fact.must, fact.may)
            if tracks and isinstance(c, Lock) and c.lock in bump:
                return _PrioFact(fact.lo, fact.hi, fact.must | {c.lock}, fact.may | {c.lock})
            if tracks and isinstance(c, Unlock) and c.lock in bump:
                return _PrioFact(fact.lo, fact.hi, fact.must - {c.lock}, fact.may - {c.lock})
            return fact

        lo, hi = init[f.name]
        base[f.name] = solve_forward(f.cfg, _PrioFact(lo, hi), transfer, _PrioFact.join)

    # pass 2: priority changes made by other threads
    widen: dict[str, list[int]] = {f.name: [] for f in p.functions}
    for f, ins in iter_instructions(p):
        c = ins.cmd
        if isinstance(c, SetPriority) and not _self_target(h, ins.sid, c.target):
            for a in h.may_run(ins.sid, c.target):
                if p.func[a].kind != "isr":
                    widen[a].append(c.prio)

    out: dict[StmtId, PrioInterval | None] = {}
    for f in p.functions:
        facts = base[f.name]
        extra = widen[f.name]
        for ins in f.cfg.instructions:
            fact = facts.get(ins.src)
            if fact is None:
                out[ins.sid] = None
                continue
            lo, hi = fact.lo, fact.hi
            if extra:
                lo, hi = min([lo] + extra), max([hi] + extra)
            if mode == "ceiling":
                lo = max([lo] + [bump[l] for l in fact.must])
                hi = max([hi] + [bump[l] for l in fact.may])
            elif mode == "inheritance":
                hi = max([hi] + [bump[l] for l in fact.may])
            out[ins.sid] = PrioInterval(lo, hi)
    return out


def priority_diagnostics(p: Program) -> list[str]:
    return [f"{ins.sid}: set_priority literal {ins.cmd.prio} outside 1..{p.max_prio}"
            for _, ins in iter_instructions(p)
            if isinstance(ins.cmd, SetPriority) and not 1 <= ins.cmd.prio <= p.max_prio]


# ------------------------------------------------------ suspend/resume lists


def suspend_resume_analysis(p: Program, h: HandleInfo | None = None) -> TaskLists:
    h = h or resolve_handles(p)
    sus: dict[str, set[str]] = {f.name: set() for f in p.functions}
    res: dict[str, set[str]] = {f.name: set() for f in p.functions}
    for f, ins in iter_instructions(p):
        c = ins.cmd
        if isinstance(c, Suspend):
            for a in h.may_run(ins.sid, c.target):
                sus[a].add(f.name)
        elif isinstance(c, Resume):
            for a in h.may_run(ins.sid, c.target):
                res[a].add(f.name)
    return TaskLists({k: frozenset(v) for k, v in sus.items()},
                     {k: frozenset(v) for k, v in res.items()})


# ---------------------------------------------------------------- locksets


def flag_check(c) -> str | None:
    """The flag tested by ``assume(f == 0)`` (either operand order)."""
    if not isinstance(c, Assume) or not isinstance(c.cond, Binary) or c.cond.op != "==":
        return None
    l, r = c.cond.left, c.cond.right
    if isinstance(l, Var) and r == Num(0):
        return l.name
    if isinstance(r, Var) and l == Num(0):
        return r.name
    return None


def is_flag_set(c) -> bool:
    return isinstance(c, Assign) and c.expr == Num(1)


def lockset_analysis(p: Program, h: HandleInfo | None = None) -> dict[StmtId, frozenset[NotionalLock]]:
    """Locks (real and notional) surely held just before each statement."""
    h = h or resolve_handles(p)
    out: dict[StmtId, frozenset[NotionalLock]] = {}
    for f in p.functions:
        cfg = f.cfg

        def transfer(ins: Instruction, held: frozenset, f=f, cfg=cfg) -> frozenset:
            c = ins.cmd
            if isinstance(c, Lock):
                return held | {Real(c.lock)}
            if isinstance(c, Unlock):
                return held - {Real(c.lock)}
            if isinstance(c, Suspend):
                b = h.must_run(ins.sid, c.target)
                if c.target is not None and b is not None and b != f.name:
                    return held | {SuspBlock(b)}
                return held
            if isinstance(c, Resume):
                gone = {SuspBlock(b) for b in h.may_run(ins.sid, c.target)}
                return held - gone
            if isinstance(c, Start):
                return frozenset(l for l in held
                                 if l.kind not in ("susp", "intoff", "schedoff"))
            if isinstance(c, DisableInt):
                return held | {INT_OFF}
            if isinstance(c, EnableInt):
                return held - {INT_OFF}
            if isinstance(c, SuspendSched):
                return held | {SCHED_OFF}
            if isinstance(c, ResumeSched):
                return held - {SCHED_OFF}
            if isinstance(c, Assign):
                held = held - {FlagSet(c.var), FlagChk(c.var)}
                return held | {FlagSet(c.var)} if is_flag_set(c) else held
            flag = flag_check(c)
            if flag is not None and len(cfg.out_edges[ins.src]) > 1:
                return held | {FlagChk(flag)}
            return held

        entry = frozenset((INT_OFF, SCHED_OFF)) if f.kind == "main" else frozenset()
        facts = solve_forward(cfg, entry, transfer, frozenset.intersection)
        for ins in cfg.instructions:
            out[ins.sid] = facts.get(ins.src, frozenset())
    return out


# --------------------------------------------------------------- all facts


BLOCKING = (Block, Lock)


@dataclass
class AnalysisFacts:
    program: Program
    prio: dict[StmtId, PrioInterval | None]
    locks: dict[StmtId, frozenset[NotionalLock]]
    lists: TaskLists
    handles: HandleInfo
    mutex: str = "plain"
    prestart: set[StmtId] = field(default_factory=set)

    @cached_property
    def suspended(self) -> dict[StmtId, frozenset[str]]:
        return {sid: frozenset(l.name for l in ls if l.kind == "susp")
                for sid, ls in self.locks.items()}

    @property
    def instances(self) -> dict[str, int]:
        return self.handles.instances

    @cached_property
    def func_prio(self) -> dict[str, PrioInterval | None]:
        """Hull of statement intervals per function: its dynamic priority."""
        out: dict[str, PrioInterval | None] = {}
        for f in self.program.functions:
            acc = None
            for ins in f.cfg.instructions:
                iv = self.prio[ins.sid]
                if iv is not None:
                    acc = iv if acc is None else iv.hull(acc)
            out[f.name] = acc
        return out

    def region(self, func: str, lock: NotionalLock) -> list[Instruction]:
        """Statements of ``func`` executed while ``lock`` is surely held."""
        return [ins for ins in self.program.func[func].cfg.instructions
                if lock in self.locks[ins.sid]]

    def region_prio(self, func: str, lock: NotionalLock) -> PrioInterval | None:
        acc = None
        for ins in self.region(func, lock):
            iv = self.prio[ins.sid]
            if iv is not None:
                acc = iv if acc is None else iv.hull(acc)
        return acc

    def blocks_before(self, sid: StmtId, lock: NotionalLock) -> bool:
        """Whether some command that can deschedule the thread lies in the
        region and can still be followed by ``sid``."""
        fname = sid.func
        cfg = self.program.func[fname].cfg
        target = self.program.instruction[sid].src
        for ins in self.region(fname, lock):
            if self.may_deschedule(ins) and target in reachable_from(cfg, [ins.dst]):
                return True
        return False

    def may_deschedule(self, ins: Instruction) -> bool:
        c = ins.cmd
        if isinstance(c, BLOCKING):
            return True
        if isinstance(c, Suspend):
            return c.target is None or ins.sid.func in self.handles.may_run(ins.sid, c.target)
        return False

    def to_json(self) -> dict:
        out = {}
        for _, ins in iter_instructions(self.program):
            sid = ins.sid
            iv = self.prio[sid]
            out[str(sid)] = {
                "prio": None if iv is None else [iv.lo, iv.hi],
                "locks": sorted(str(l) for l in self.locks[sid]),
                "suspended": sorted(self.suspended[sid]),
            }
        return out


def analyze(p: Program, mutex: str = "plain") -> AnalysisFacts:
    h = resolve_handles(p)
    return AnalysisFacts(
        program=p, prio=priority_analysis(p, h, mutex), locks=lockset_analysis(p, h),
        lists=suspend_resume_analysis(p, h), handles=h, mutex=mutex, prestart=prestart(p),
    )
