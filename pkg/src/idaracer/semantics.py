"""Labeled transition system for IDA programs and a bounded explorer over it.

The scheduler state follows the formal model: blocked/suspended/ready sets,
per-thread priority, lock owners, thread functions, program counters, the
variable store, the running and interrupted threads, and the
scheduler-suspended / interrupts-disabled flags.  Three fields extend it:
``nested`` (stack of interrupted ISRs, so ISR nesting can unwind), and
``base``/``inherited`` which are only populated when mutexes follow the
ceiling or inheritance protocol.

The explorer bounds loops (iterations started per thread and loop header),
ISR firings, depth and the number of distinct states.  Occurs-in-between and
may-happen-in-parallel are decided on skip-instrumented copies of the program.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence

from . import lang
from .frontend import Cfg, Function, Instruction, Program, StmtId, mutex_ceilings
from .lang import (
    Assign, Assume, Block, Create, DisableInt, EnableInt, Lock, ResumeSched, Resume,
    SetPriority, Skip, Start, Suspend, SuspendSched, Unlock,
)

MUTEX_MODES = ("plain", "inheritance", "ceiling")

RULES = (
    "SKIP", "SKIP-INT", "ASSIGN", "ASSIGN-INT", "ASSUME", "ASSUME-INT",
    "CREATE-NS", "CREATE-CS", "SETP-NS", "SETP-CS", "SUS-NS", "SUS-CS",
    "RES-NS", "RES-CS", "SUSSCH", "RESSCH-NS", "RESSCH-CS", "DISINT",
    "DISINT-INT", "ENINT-NS", "ENINT-CS", "ENINT-INT", "LOCK-AQ", "LOCK-CS",
    "LOCK-AQ-INT", "UNLOCK", "UNLOCK-INT", "BLK-NS", "BLK-CS", "START",
    "UNBLK-NS", "UNBLK-CS", "TSHARE",
)
ERROR_RULE = "ERROR"


class State(NamedTuple):
    blocked: frozenset
    suspended: frozenset
    ready: frozenset
    prio: tuple
    acquired: tuple  # owner per lock (program lock order), None when free
    fun: tuple
    pc: tuple
    env: tuple
    running: int
    interrupted: int
    ss: bool
    id: bool
    nested: tuple = ()
    base: tuple | None = None
    inherited: tuple | None = None

    @property
    def threads(self) -> range:
        return range(len(self.fun))

    def canonical(self) -> tuple:
        return (tuple(sorted(self.blocked)), tuple(sorted(self.suspended)),
                tuple(sorted(self.ready))) + tuple(self[3:])

    def digest(self) -> str:
        return hashlib.sha256(repr(self.canonical()).encode()).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class Transition:
    source: State
    rule: str
    target: State | None  # None for an evaluation error
    thread: int
    sid: StmtId | None = None  # None for UNBLK/TSHARE
    advanced: bool = True  # whether the acting thread's pc moved along `sid`

    @property
    def label(self) -> str:
        if self.sid is not None:
            return str(self.sid)
        return f"{self.rule.split('-')[0]}({self.thread})"


@dataclass(frozen=True)
class Bounds:
    loop_bound: int = 2
    isr_bound: int = 2
    step_bound: int = 10_000
    state_cap: int = 1_000_000

    def __post_init__(self):
        for name in ("loop_bound", "isr_bound", "step_bound", "state_cap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class Config:
    mutex: str = "plain"
    round_robin: bool = True

    def __post_init__(self):
        if self.mutex not in MUTEX_MODES:
            raise ValueError(f"unknown mutex mode {self.mutex!r}")


# ------------------------------------------------------------------- machine


class Machine:
    """Successor computation for one program under one configuration."""

    def __init__(self, p: Program, config: Config = Config()):
        self.p = p
        self.config = config
        self.var_index = {v: k for k, v in enumerate(p.vars)}
        self.lock_index = {l: k for k, l in enumerate(p.locks)}
        self.funcs = p.func
        self.task_like = {f.name: f.kind != "isr" for f in p.functions}
        self.isr_ids = tuple(range(1, len(p.isrs) + 1))
        mutexes = [self.lock_index[l] for l, k in p.locks.items() if k == "mutex"]
        self.mutex_mode = config.mutex if mutexes else "plain"
        ceil = mutex_ceilings(p)
        self.ceiling = tuple(ceil.get(l, 0) if p.locks[l] == "mutex" else 0 for l in p.locks)
        self.is_mutex = tuple(p.locks[l] == "mutex" for l in p.locks)
        # per function, per location: compiled out-edges
        self.out: dict[str, dict[int, tuple]] = {}
        for f in p.functions:
            table: dict[int, list] = {}
            for ins in f.cfg.instructions:
                table.setdefault(ins.src, []).append((ins, self._compile(ins.cmd)))
            self.out[f.name] = {l: tuple(v) for l, v in table.items()}

    def _compile(self, c):
        if isinstance(c, Assign):
            return (self.var_index[c.var], lang.compile_expr(c.expr, self.var_index))
        if isinstance(c, Assume):
            return lang.compile_expr(c.cond, self.var_index)
        if isinstance(c, (Create,)):
            return self.var_index[c.handle]
        if isinstance(c, (SetPriority, Suspend, Resume)):
            return None if c.target is None else self.var_index[c.target]
        if isinstance(c, (Lock, Unlock)):
            return self.lock_index[c.lock]
        return None

    # -- state helpers

    def initial_state(self) -> State:
        p = self.p
        k = len(p.isrs)
        prio = (0,) + tuple(p.isr_priority[f.name] for f in p.isrs)
        fun = ("main",) + tuple(f.name for f in p.isrs)
        pc = tuple(self.funcs[f].cfg.entry for f in fun)
        nlocks = len(p.locks)
        plainish = self.mutex_mode == "plain"
        return State(
            blocked=frozenset(), suspended=frozenset(range(1, k + 1)), ready=frozenset((0,)),
            prio=prio, acquired=(None,) * nlocks, fun=fun, pc=pc,
            env=(0,) * len(p.vars), running=0, interrupted=0, ss=True, id=True,
            nested=(),
            base=None if plainish else prio,
            inherited=(0,) * nlocks if self.mutex_mode == "inheritance" else None,
        )

    def is_task(self, s: State, t: int) -> bool:
        return self.task_like[s.fun[t]]

    def _max_ready(self, s: State, exclude: int | None = None) -> list[int]:
        cands = [u for u in s.ready if u != exclude and self.task_like[s.fun[u]]]
        if not cands:
            return []
        top = max(s.prio[u] for u in cands)
        return sorted(u for u in cands if s.prio[u] == top)

    def _boost(self, s: State, t: int) -> int:
        if self.mutex_mode == "ceiling":
            return max((self.ceiling[m] for m, o in enumerate(s.acquired)
                        if o == t and self.is_mutex[m]), default=0)
        if self.mutex_mode == "inheritance":
            return max((s.inherited[m] for m, o in enumerate(s.acquired) if o == t), default=0)
        return 0

    def _reprioritize(self, s: State, t: int) -> State:
        """Recompute the effective priority of task ``t`` from base and held mutexes."""
        if self.mutex_mode == "plain" or not self.task_like[s.fun[t]]:
            return s
        eff = max(s.base[t], self._boost(s, t))
        if eff == s.prio[t]:
            return s
        return s._replace(prio=_set(s.prio, t, eff))

    def _yield_targets(self, s: State) -> list[int]:
        """Ready tasks that outrank the running thread once its priority dropped."""
        if s.ss or s.id:
            return []
        top = self._max_ready(s, exclude=s.running)
        if top and s.prio[top[0]] > s.prio[s.running]:
            return top
        return []

    # -- successors

    def successors(self, s: State) -> list[Transition]:
        out: list[Transition] = []
        r = s.running
        f = s.fun[r]
        for ins, data in self.out[f].get(s.pc[r], ()):
            out.extend(self._step(s, r, ins, data, interrupt=False))
        if not s.id:
            for t in self.isr_ids:
                if (t in s.ready and t != r and t not in s.nested
                        and s.pc[t] == self.funcs[s.fun[t]].cfg.entry and s.prio[t] > s.prio[r]):
                    for ins, data in self.out[s.fun[t]].get(s.pc[t], ()):
                        out.extend(self._step(s, t, ins, data, interrupt=True))
        if self.task_like[f]:
            sched_off = s.ss or s.id
            for t in sorted(s.blocked):
                ready = s.ready | {t}
                base = s._replace(blocked=s.blocked - {t}, ready=ready)
                if not sched_off and s.prio[t] > s.prio[r]:
                    out.append(Transition(s, "UNBLK-CS", base._replace(running=t), t))
                else:
                    out.append(Transition(s, "UNBLK-NS", base, t))
            if self.config.round_robin and not sched_off:
                for t in sorted(s.ready):
                    if t != r and self.task_like[s.fun[t]] and s.prio[t] == s.prio[r]:
                        out.append(Transition(s, "TSHARE", s._replace(running=t), t))
        seen = set()
        uniq = []
        for tr in out:
            key = (tr.rule, tr.thread, tr.sid, tr.target)
            if key not in seen:
                seen.add(key)
                uniq.append(tr)
        uniq.sort(key=lambda tr: (tr.rule, tr.thread, str(tr.sid),
                                  -1 if tr.target is None else tr.target.running))
        return uniq

    def _advance(self, s: State, t: int, ins: Instruction) -> State:
        return s._replace(pc=_set(s.pc, t, ins.dst))

    def _finish(self, s: State, t: int, ins: Instruction) -> State:
        """Unwind an ISR that just executed its last instruction."""
        fn = self.funcs[s.fun[t]]
        if fn.kind != "isr" or ins.dst != fn.cfg.exit:
            return s
        s = s._replace(pc=_set(s.pc, t, fn.cfg.entry))
        if s.nested:
            return s._replace(running=s.nested[-1], nested=s.nested[:-1])
        return s._replace(running=s.interrupted, interrupted=0)

    def _fire(self, s: State, t: int) -> State:
        """Hand the processor to ISR ``t``, remembering what it interrupted."""
        r = s.running
        if self.task_like[s.fun[r]]:
            return s._replace(running=t, interrupted=r)
        return s._replace(running=t, nested=s.nested + (r,))

    def _step(self, s: State, t: int, ins: Instruction, data, interrupt: bool) -> list[Transition]:
        c = ins.cmd
        task = self.task_like[s.fun[t]]
        res: list[tuple[str, State | None, bool]] = []

        def simple(rule: str, new: State) -> None:
            if interrupt:
                new = self._fire(new, t)
                rule += "-INT"
            res.append((rule, self._finish(self._advance(new, t, ins), t, ins), True))

        try:
            if isinstance(c, Skip):
                simple("SKIP", s)
            elif isinstance(c, Assign):
                k, fn = data
                simple("ASSIGN", s._replace(env=_set(s.env, k, fn(s.env))))
            elif isinstance(c, Assume):
                if data(s.env):
                    simple("ASSUME", s)
            elif isinstance(c, DisableInt):
                simple("DISINT", s._replace(id=True))
            elif isinstance(c, EnableInt):
                if interrupt:
                    simple("ENINT", s._replace(id=False))
                else:
                    self._enableint(s, t, ins, res)
            elif isinstance(c, Lock):
                self._lock(s, t, ins, data, interrupt, res)
            elif isinstance(c, Unlock):
                m = data
                if interrupt:
                    if s.acquired[m] != t:
                        simple("UNLOCK", s)
                elif s.acquired[m] in (None, t):
                    new = s._replace(acquired=_set(s.acquired, m, None))
                    if new.inherited is not None:
                        new = new._replace(inherited=_set(new.inherited, m, 0))
                    new = self._reprioritize(new, t)
                    new = self._finish(self._advance(new, t, ins), t, ins)
                    targets = self._yield_targets(new) if new.prio[t] < s.prio[t] else []
                    if targets:
                        for ts in targets:
                            res.append(("UNLOCK", new._replace(running=ts), True))
                    else:
                        res.append(("UNLOCK", new, True))
            elif interrupt or not task:
                pass  # remaining commands are task-only and never interrupt-fired
            elif isinstance(c, Create):
                self._create(s, t, ins, data, res)
            elif isinstance(c, SetPriority):
                self._set_priority(s, t, ins, data, res)
            elif isinstance(c, Suspend):
                self._suspend(s, t, ins, data, res)
            elif isinstance(c, Resume):
                self._resume(s, t, ins, data, res)
            elif isinstance(c, SuspendSched):
                res.append(("SUSSCH", self._advance(s._replace(ss=True), t, ins), True))
            elif isinstance(c, ResumeSched):
                new = self._advance(s._replace(ss=False), t, ins)
                if s.id or all(s.prio[t] >= s.prio[u] for u in s.ready if self.task_like[s.fun[u]]):
                    res.append(("RESSCH-NS", new, True))
                else:
                    for ts in self._max_ready(s):
                        res.append(("RESSCH-CS", new._replace(running=ts), True))
            elif isinstance(c, Block):
                if s.ss or s.id:
                    res.append(("BLK-NS", self._advance(s, t, ins), True))
                else:
                    for ts in self._max_ready(s, exclude=t):
                        new = s._replace(blocked=s.blocked | {t}, ready=s.ready - {t}, running=ts)
                        res.append(("BLK-CS", self._advance(new, t, ins), True))
            elif isinstance(c, Start):
                if t == 0:
                    new = s._replace(suspended=frozenset(), ready=s.suspended | s.ready,
                                     ss=False, id=False)
                    new = self._advance(new, t, ins)
                    for ts in self._max_ready(new):
                        res.append(("START", new._replace(running=ts), True))
        except lang.EvalError:
            return [Transition(s, ERROR_RULE, None, t, ins.sid, False)]
        return [Transition(s, rule, new, t, ins.sid, adv) for rule, new, adv in res]

    def _target(self, s: State, t: int, slot: int | None) -> int | None:
        ts = t if slot is None else s.env[slot]
        return ts if 0 <= ts < len(s.fun) else None

    def _enableint(self, s, t, ins, res) -> None:
        new = self._advance(s._replace(id=False), t, ins)
        task = self.task_like[s.fun[t]]
        if (not task or s.ss
                or all(s.prio[t] >= s.prio[u] for u in s.ready if self.task_like[s.fun[u]])):
            res.append(("ENINT-NS", self._finish(new, t, ins), True))
        else:
            for ts in self._max_ready(s):
                res.append(("ENINT-CS", new._replace(running=ts), True))

    def _lock(self, s, t, ins, m, interrupt, res) -> None:
        owner = s.acquired[m]
        if interrupt:
            if owner is None:
                new = self._fire(s._replace(acquired=_set(s.acquired, m, t)), t)
                res.append(("LOCK-AQ-INT", self._finish(self._advance(new, t, ins), t, ins), True))
            return
        if owner is None or owner == t:
            new = self._reprioritize(s._replace(acquired=_set(s.acquired, m, t)), t)
            res.append(("LOCK-AQ", self._finish(self._advance(new, t, ins), t, ins), True))
        elif self.task_like[s.fun[t]] and not (s.ss or s.id):
            held = s
            if self.mutex_mode == "inheritance" and self.is_mutex[m] and self.task_like[s.fun[owner]]:
                held = s._replace(inherited=_set(s.inherited, m, max(s.inherited[m], s.prio[t])))
                held = self._reprioritize(held, owner)
            for ts in self._max_ready(held, exclude=t):
                new = held._replace(blocked=s.blocked | {t}, ready=s.ready - {t}, running=ts)
                res.append(("LOCK-CS", new, False))

    def _create(self, s, t, ins, slot, res) -> None:
        c: Create = ins.cmd
        if self.funcs[c.func].kind != "task":
            return
        ts = len(s.fun)
        new = s._replace(
            ready=s.ready | {ts}, prio=s.prio + (c.prio,), fun=s.fun + (c.func,),
            pc=s.pc + (self.funcs[c.func].cfg.entry,), env=_set(s.env, slot, ts),
            base=None if s.base is None else s.base + (c.prio,),
        )
        new = self._advance(new, t, ins)
        if c.prio > s.prio[s.running] and not (s.ss or s.id):
            res.append(("CREATE-CS", new._replace(running=ts), True))
        else:
            res.append(("CREATE-NS", new, True))

    def _set_priority(self, s, t, ins, slot, res) -> None:
        c: SetPriority = ins.cmd
        ts = self._target(s, t, slot)
        if ts is None or not self.task_like[s.fun[ts]]:
            return
        new = s
        if s.base is not None:
            new = new._replace(base=_set(s.base, ts, c.prio))
            eff = max(c.prio, self._boost(s, ts))
        else:
            eff = c.prio
        new = self._advance(new._replace(prio=_set(new.prio, ts, eff)), t, ins)
        r = s.running
        sched_off = s.ss or s.id
        if ts == r and eff < s.prio[r]:
            targets = self._yield_targets(new)
            if targets:
                for u in targets:
                    res.append(("SETP-CS", new._replace(running=u), True))
                return
        if s.prio[r] >= eff or ts in s.blocked or ts in s.suspended or sched_off:
            res.append(("SETP-NS", new, True))
        elif ts in s.ready:
            res.append(("SETP-CS", new._replace(running=ts), True))

    def _suspend(self, s, t, ins, slot, res) -> None:
        ts = self._target(s, t, slot)
        if ts is None:
            return
        if ts != t:
            new = s._replace(blocked=s.blocked - {ts}, suspended=s.suspended | {ts},
                             ready=s.ready - {ts})
            res.append(("SUS-NS", self._advance(new, t, ins), True))
        elif not (s.ss or s.id):
            for u in self._max_ready(s, exclude=t):
                new = s._replace(suspended=s.suspended | {t}, ready=s.ready - {t}, running=u)
                res.append(("SUS-CS", self._advance(new, t, ins), True))

    def _resume(self, s, t, ins, slot, res) -> None:
        ts = self._target(s, t, slot)
        if ts is None or ts == t:
            return
        sched_off = s.ss or s.id
        new = self._advance(s._replace(suspended=s.suspended - {ts}, ready=s.ready | {ts}), t, ins)
        if (ts in s.suspended or ts in s.ready) and (sched_off or s.prio[t] >= s.prio[ts]):
            res.append(("RES-NS", new, True))
        elif ts in s.suspended and not sched_off and s.prio[ts] > s.prio[t]:
            res.append(("RES-CS", new._replace(running=ts), True))


def _set(tup: tuple, k: int, v) -> tuple:
    return tup[:k] + (v,) + tup[k + 1:]


# ------------------------------------------------------ module-level helpers


def initial_state(p: Program, config: Config = Config()) -> State:
    return Machine(p, config).initial_state()


def successors(p: Program, s: State, config: Config = Config()) -> list[Transition]:
    return Machine(p, config).successors(s)


def eval_expr(e: lang.Expr, env: dict[str, int]) -> int:
    return lang.eval_expr(e, env)


def eval_bool(b: lang.Expr, env: dict[str, int]) -> bool:
    return lang.eval_bool(b, env)


def well_formed(p: Program, s: State) -> list[str]:
    """Invariant violations of ``s`` (empty when well formed)."""
    errs = []
    if s.blocked & s.suspended or s.blocked & s.ready or s.suspended & s.ready:
        errs.append("B, S, R not disjoint")
    if s.running not in s.ready:
        errs.append("running thread not ready")
    if s.blocked | s.suspended | s.ready != frozenset(range(len(s.fun))):
        errs.append("created set differs from B u S u R")
    for t, fname in enumerate(s.fun):
        f = p.func[fname]
        if s.pc[t] not in f.cfg.locations:
            errs.append(f"pc of thread {t} outside its CFG")
        if f.kind == "isr" and s.prio[t] != p.isr_priority[fname]:
            errs.append(f"ISR thread {t} changed priority")
    return errs


# --------------------------------------------------------------- exploration


class Node(NamedTuple):
    state: State
    loops: tuple  # sorted ((thread, header), iterations started)
    fires: tuple  # firings per ISR thread, indexed from 0 for thread 1


@dataclass
class Exploration:
    nodes: list[Node]
    parent: list[tuple[int, Transition] | None]
    depth: list[int]
    edges: list[tuple[int, Transition, int]]
    errors: list[tuple[int, Transition]] = field(default_factory=list)
    stuck: list[int] = field(default_factory=list)
    truncated: bool = False
    hit_loop_bound: bool = False
    hit_isr_bound: bool = False
    hit_step_bound: bool = False

    @property
    def states(self) -> set[State]:
        return {n.state for n in self.nodes}

    @property
    def bounds_hit(self) -> bool:
        return self.truncated or self.hit_step_bound

    def path(self, k: int) -> list[Transition]:
        out = []
        while self.parent[k] is not None:
            k, tr = self.parent[k]
            out.append(tr)
        return out[::-1]


def _bump(node: Node, tr: Transition, ins: Instruction | None, m: Machine, b: Bounds,
          flags: dict) -> Node | None:
    """Counter bookkeeping for ``tr``; None when a bound forbids it."""
    loops, fires = node.loops, node.fires
    if tr.rule.endswith("-INT"):
        k = tr.thread - 1
        if fires[k] >= b.isr_bound:
            flags["isr"] = True
            return None
        fires = _set(fires, k, fires[k] + 1)
    if ins is not None and ins.loop is not None and tr.advanced:
        key = (tr.thread, ins.loop)
        d = dict(loops)
        n = d.get(key, 0)
        if n >= b.loop_bound:
            flags["loop"] = True
            return None
        d[key] = n + 1
        loops = tuple(sorted(d.items()))
    return Node(tr.target, loops, fires)


def explore(p: Program, b: Bounds = Bounds(), config: Config = Config(), order: str = "bfs",
            visit: Callable[[int, Transition, int, "Exploration"], bool] | None = None,
            keep_edges: bool = True) -> Exploration:
    """Enumerate the reachable transition graph within ``b``.

    ``visit`` is called for every kept transition (source index, transition,
    target index); returning True stops the search early.
    """
    m = Machine(p, config)
    s0 = m.initial_state()
    root = Node(s0, (), (0,) * len(m.isr_ids))
    g = Exploration([root], [None], [0], [])
    index = {root: 0}
    frontier: deque[int] = deque([0])
    flags = {"loop": False, "isr": False}
    pop = frontier.popleft if order == "bfs" else frontier.pop
    main_exit = p.main.cfg.exit
    while frontier:
        k = pop()
        node = g.nodes[k]
        trs = m.successors(node.state)
        if not trs and node.state.pc[0] != main_exit:
            g.stuck.append(k)
        if g.depth[k] >= b.step_bound:
            if trs:
                g.hit_step_bound = True
            continue
        for tr in trs:
            if tr.target is None:
                g.errors.append((k, tr))
                continue
            ins = p.instruction.get(tr.sid) if tr.sid is not None else None
            nxt = _bump(node, tr, ins, m, b, flags)
            if nxt is None:
                continue
            j = index.get(nxt)
            if j is None:
                if len(g.nodes) >= b.state_cap:
                    g.truncated = True
                    continue
                j = len(g.nodes)
                index[nxt] = j
                g.nodes.append(nxt)
                g.parent.append((k, tr))
                g.depth.append(g.depth[k] + 1)
                frontier.append(j)
            if keep_edges:
                g.edges.append((k, tr, j))
            if visit is not None and visit(k, tr, j, g):
                g.hit_loop_bound, g.hit_isr_bound = flags["loop"], flags["isr"]
                return g
    g.hit_loop_bound, g.hit_isr_bound = flags["loop"], flags["isr"]
    return g


# ----------------------------------------------------------- instrumentation


@dataclass(frozen=True)
class SkipBlock:
    """Locations strictly inside the skip bracket around one statement."""

    sid: StmtId
    func: str
    before: int  # after the pre-skip, about to run the statement
    after: int  # after the statement, about to run the post-skip

    def contains(self, fname: str, pc: int) -> bool:
        return fname == self.func and (pc == self.before or pc == self.after)


def access_statements(p: Program) -> list[StmtId]:
    return [ins.sid for _, ins in _instrs(p) if isinstance(ins.cmd, (Assign, Assume))]


def _instrs(p: Program):
    for f in p.functions:
        for ins in f.cfg.instructions:
            yield f, ins


def instrument(p: Program, sids: Iterable[StmtId]) -> tuple[Program, dict[StmtId, SkipBlock]]:
    """Bracket each statement in ``sids`` with skips by splitting its edge."""
    wanted = set(sids)
    for sid in wanted:
        ins = p.instruction.get(sid)
        if ins is None:
            raise ValueError(f"no statement {sid}")
        if not isinstance(ins.cmd, (Assign, Assume)):
            raise ValueError(f"{sid} is not an assignment or assume statement")
    blocks: dict[StmtId, SkipBlock] = {}
    funcs = []
    for f in p.functions:
        nxt = len(f.cfg.locations)
        instrs = []
        for ins in f.cfg.instructions:
            if ins.sid not in wanted:
                instrs.append(ins)
                continue
            a, b = nxt, nxt + 1
            nxt += 2
            sid = ins.sid
            # an assume's pre-skip carries its guard: the bracket only opens
            # when the statement can run, so it never strands the thread
            pre = ins.cmd if isinstance(ins.cmd, Assume) else Skip()
            instrs.append(Instruction(replace(sid, tag="pre"), ins.src, pre, a, ins.loop))
            instrs.append(Instruction(sid, a, ins.cmd, b))
            instrs.append(Instruction(replace(sid, tag="post"), b, Skip(), ins.dst))
            blocks[sid] = SkipBlock(sid, f.name, a, b)
        cfg = Cfg(f.cfg.entry, f.cfg.exit, tuple(range(nxt)), tuple(instrs))
        funcs.append(Function(f.name, f.kind, cfg, f.body, f.line))
    return Program(p.vars, dict(p.locks), tuple(funcs), p.max_prio), blocks


def _inside(s: State, blocks: Sequence[SkipBlock]) -> list[tuple[int, StmtId]]:
    out = []
    for t, fname in enumerate(s.fun):
        pc = s.pc[t]
        for blk in blocks:
            if blk.contains(fname, pc):
                out.append((t, blk.sid))
    return out


# ------------------------------------------------------------------ witnesses


@dataclass
class Witness:
    transitions: list[Transition]
    pre: int  # index of the pre-skip opening the bracket
    occurrence: int  # index of the event observed inside it
    post: int | None = None  # index of the closing post-skip, when reached within bounds
    kind: str = "oib"

    def to_json(self) -> list[dict]:
        return [{"rule": tr.rule, "stmt": None if tr.sid is None else str(tr.sid),
                 "thread": tr.thread, "stateHash": tr.target.digest()}
                for tr in self.transitions]

    def render(self) -> str:
        lines = []
        for k, tr in enumerate(self.transitions):
            mark = {self.pre: "  <- pre", self.occurrence: "  <- occurrence"}.get(k, "")
            if k == self.post:
                mark = "  <- post"
            lines.append(f"{k:4d}  t{tr.thread:<2d} {tr.rule:<12s} {tr.label}{mark}")
        return "\n".join(lines)


def replay(p: Program, transitions: Sequence[Transition], config: Config = Config()) -> bool:
    """Check that ``transitions`` is an execution from the initial state."""
    m = Machine(p, config)
    s = m.initial_state()
    for tr in transitions:
        if tr.source != s:
            return False
        if not any(c.rule == tr.rule and c.target == tr.target and c.sid == tr.sid
                   for c in m.successors(s)):
            return False
        s = tr.target
    return True


def _continue_until(p: Program, g: Exploration, start: int, b: Bounds, config: Config,
                    done: Callable[[Transition], bool]) -> list[Transition] | None:
    """Shortest continuation from node ``start`` to a transition satisfying ``done``."""
    m = Machine(p, config)
    root = g.nodes[start]
    seen = {root: None}
    queue = deque([root])
    flags = {"loop": False, "isr": False}
    budget = 200_000
    while queue and budget:
        node = queue.popleft()
        for tr in m.successors(node.state):
            if tr.target is None:
                continue
            ins = p.instruction.get(tr.sid) if tr.sid is not None else None
            nxt = _bump(node, tr, ins, m, b, flags)
            if nxt is None or nxt in seen:
                continue
            seen[nxt] = (node, tr)
            if done(tr):
                path = []
                cur = nxt
                while seen[cur] is not None:
                    prev, t = seen[cur]
                    path.append(t)
                    cur = prev
                return path[::-1]
            queue.append(nxt)
            budget -= 1
    return None


def _check_access(p: Program, *sids: StmtId) -> None:
    for sid in sids:
        ins = p.instruction.get(sid)
        if ins is None:
            raise ValueError(f"no statement {sid}")
        if not isinstance(ins.cmd, (Assign, Assume)):
            raise ValueError(f"{sid} is not an assignment or assume statement")


def occurs_in_between(p: Program, s1: StmtId, s2: StmtId, b: Bounds = Bounds(),
                      config: Config = Config()) -> Witness | None:
    """Find an execution where ``s2`` runs strictly inside the skip bracket of ``s1``."""
    _check_access(p, s1, s2)
    q, blocks = instrument(p, [s1])
    blk = blocks[s1]
    found: list = []

    def visit(k, tr, j, g):
        if tr.sid != s2:
            return False
        src = tr.source
        for v, fname in enumerate(src.fun):
            if v != tr.thread and blk.contains(fname, src.pc[v]):
                found.append((j, v))
                return True
        return False

    g = explore(q, b, config, visit=visit, keep_edges=False)
    if not found:
        return None
    j, v = found[0]
    path = g.path(j)
    pre = max(k for k, tr in enumerate(path) if tr.thread == v and tr.sid == replace(s1, tag="pre"))
    occ = len(path) - 1
    post_sid = replace(s1, tag="post")
    tail = _continue_until(q, g, j, b, config, lambda tr: tr.thread == v and tr.sid == post_sid)
    post = None
    if tail is not None:
        path = path + tail
        post = len(path) - 1
    return Witness(path, pre, occ, post, "oib")


def mhp(p: Program, s1: StmtId, s2: StmtId, b: Bounds = Bounds(),
        config: Config = Config()) -> tuple[bool, Witness | None]:
    """Decide whether the skip brackets of ``s1`` and ``s2`` can overlap."""
    _check_access(p, s1, s2)
    q, blocks = instrument(p, {s1, s2})
    blist = [blocks[s1]] if s1 == s2 else [blocks[s1], blocks[s2]]
    found: list = []

    def visit(k, tr, j, g):
        ins = _inside(tr.target, blist)
        hit = _overlap(ins, s1, s2)
        if hit:
            found.append((j, hit))
            return True
        return False

    g = explore(q, b, config, visit=visit, keep_edges=False)
    if not found:
        return False, None
    j, (u, v) = found[0]
    path = g.path(j)
    occ = len(path) - 1
    pres = [k for k, tr in enumerate(path)
            if tr.sid is not None and tr.sid.tag == "pre" and tr.thread in (u, v)
            and replace(tr.sid, tag="") in (s1, s2)]
    pre = pres[-2] if len(pres) >= 2 else pres[0]
    return True, Witness(path, pre, occ, None, "mhp")


def _overlap(inside: list[tuple[int, StmtId]], s1: StmtId, s2: StmtId) -> tuple[int, int] | None:
    for t, x in inside:
        if x != s1:
            continue
        for u, y in inside:
            if u != t and y == s2:
                return t, u
    return None


# --------------------------------------------------------- batch relations


@dataclass
class Relations:
    """Occurs-in-between and MHP over every access statement, from one run."""

    oib: set[tuple[StmtId, StmtId]]
    mhp: set[tuple[StmtId, StmtId]]
    exploration: Exploration
    statements: list[StmtId]

    @property
    def bounds_hit(self) -> bool:
        return self.exploration.bounds_hit


def relations(p: Program, b: Bounds = Bounds(), config: Config = Config(),
              sids: Iterable[StmtId] | None = None) -> Relations:
    """Instrument all statements at once; a single exploration yields both relations.

    An occurrence of ``s2`` inside the bracket of ``s1`` in the fully
    instrumented program projects to one in the program instrumented at ``s1``
    only (the extra skips never change the environment or the scheduler), and
    vice versa, so the batch answer agrees with the per-pair queries.
    """
    sids = list(access_statements(p) if sids is None else sids)
    q, blocks = instrument(p, sids)
    blist = list(blocks.values())
    by_func: dict[str, list[SkipBlock]] = {}
    for blk in blist:
        by_func.setdefault(blk.func, []).append(blk)
    oib: set = set()
    par: set = set()

    def inside(s: State):
        out = []
        for t, fname in enumerate(s.fun):
            for blk in by_func.get(fname, ()):
                if s.pc[t] == blk.before or s.pc[t] == blk.after:
                    out.append((t, blk.sid))
        return out

    seen_states: set = set()

    def visit(k, tr, j, g):
        if tr.sid is not None and not tr.sid.tag and tr.sid in blocks:
            for v, x in inside(tr.source):
                if v != tr.thread:
                    oib.add((x, tr.sid))
        st = tr.target
        if st not in seen_states:
            seen_states.add(st)
            ins = inside(st)
            if len(ins) > 1:
                for t, x in ins:
                    for u, y in ins:
                        if t != u:
                            par.add((x, y))
        return False

    g = explore(q, b, config, visit=visit, keep_edges=False)
    return Relations(oib, par, g, sids)
