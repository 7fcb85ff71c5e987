"""Parsing IDA source text into programs with per-function control-flow graphs.

Concrete syntax::

    maxprio 7;                  // optional, task priorities are 1..maxprio
    var item, count, t1, t2;    // integer globals (handles are globals too)
    lock l;  mutex m;           // plain locks and mutexes
    main { ... }
    task prod { for (;;) { suspend(t2); item := 5; resume(t2); } }
    isr tick { ticks := ticks + 1; }

Declarations may appear anywhere at top level.  ``if``/``while``/``for (;;)``
are lowered to ``assume`` branch edges; the control-flow graphs only ever
contain the fifteen basic commands.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Union

from . import lang
from .lang import (
    Assign, Assume, Binary, Block, Command, Create, DisableInt, EnableInt, Expr,
    Lock, Num, Resume, ResumeSched, SetPriority, Skip, Start, Suspend,
    SuspendSched, Unary, Unlock, Var,
)

DEFAULT_MAX_PRIO = 7


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message, self.line, self.col = message, line, col
        where = f"{line}:{col}: " if line else ""
        super().__init__(f"{where}{message}")


# ----------------------------------------------------------------- program IR


@dataclass(frozen=True, order=True)
class StmtId:
    """Source address of an instruction: ``func:line`` (``func:line#k`` when a
    line holds several instructions)."""

    func: str
    line: int
    ordinal: int = 0
    tag: str = ""  # "pre"/"post" for instrumentation skips

    def __str__(self) -> str:
        s = f"{self.func}:{self.line}"
        if self.ordinal:
            s += f"#{self.ordinal}"
        if self.tag:
            s += f".{self.tag}"
        return s

    @classmethod
    def parse(cls, text: str) -> "StmtId":
        m = re.fullmatch(r"(\w+):(\d+)(?:#(\d+))?", text.strip())
        if not m:
            raise ValueError(f"bad statement address {text!r}; expected func:line")
        return cls(m.group(1), int(m.group(2)), int(m.group(3) or 0))


@dataclass(frozen=True)
class Instruction:
    sid: StmtId
    src: int
    cmd: Command
    dst: int
    loop: int | None = None  # header location when this edge starts a loop iteration

    def __str__(self) -> str:
        return f"{self.sid}: {self.src} --{self.cmd}--> {self.dst}"


@dataclass(frozen=True)
class Cfg:
    entry: int
    exit: int
    locations: tuple[int, ...]
    instructions: tuple[Instruction, ...]

    @cached_property
    def out_edges(self) -> dict[int, tuple[Instruction, ...]]:
        out: dict[int, list[Instruction]] = {l: [] for l in self.locations}
        for ins in self.instructions:
            out[ins.src].append(ins)
        return {l: tuple(v) for l, v in out.items()}

    @cached_property
    def in_edges(self) -> dict[int, tuple[Instruction, ...]]:
        inc: dict[int, list[Instruction]] = {l: [] for l in self.locations}
        for ins in self.instructions:
            inc[ins.dst].append(ins)
        return {l: tuple(v) for l, v in inc.items()}

    @cached_property
    def loop_headers(self) -> tuple[int, ...]:
        return tuple(sorted({i.loop for i in self.instructions if i.loop is not None}))


# surface syntax, kept so programs can be printed back


@dataclass(frozen=True)
class SimpleStmt:
    cmd: Command
    line: int


@dataclass(frozen=True)
class IfStmt:
    cond: Expr
    then: tuple["Stmt", ...]
    orelse: tuple["Stmt", ...] | None
    line: int


@dataclass(frozen=True)
class WhileStmt:
    cond: Expr | None  # None is ``for (;;)``
    body: tuple["Stmt", ...]
    line: int


Stmt = Union[SimpleStmt, IfStmt, WhileStmt]

KINDS = ("main", "task", "isr")


@dataclass(frozen=True)
class Function:
    name: str
    kind: str  # main | task | isr
    cfg: Cfg
    body: tuple[Stmt, ...] = ()
    line: int = 0

    @property
    def is_isr(self) -> bool:
        return self.kind == "isr"


@dataclass(frozen=True)
class Program:
    vars: tuple[str, ...]
    locks: dict[str, str]  # name -> "plain" | "mutex"
    functions: tuple[Function, ...]
    max_prio: int = DEFAULT_MAX_PRIO

    @cached_property
    def func(self) -> dict[str, Function]:
        return {f.name: f for f in self.functions}

    @property
    def main(self) -> Function:
        return self.func["main"]

    @cached_property
    def isrs(self) -> tuple[Function, ...]:
        return tuple(f for f in self.functions if f.kind == "isr")

    @cached_property
    def isr_priority(self) -> dict[str, int]:
        return {f.name: self.max_prio + j for j, f in enumerate(self.isrs, start=1)}

    @cached_property
    def instruction(self) -> dict[StmtId, Instruction]:
        return {ins.sid: ins for _, ins in iter_instructions(self)}

    def function_of(self, sid: StmtId) -> Function:
        return self.func[sid.func]


def iter_instructions(p: Program) -> Iterator[tuple[Function, Instruction]]:
    for f in p.functions:
        for ins in f.cfg.instructions:
            yield f, ins


def statements(p: Program) -> list[tuple[StmtId, Command]]:
    """All instructions, in declaration order then location order."""
    return [(ins.sid, ins.cmd) for _, ins in iter_instructions(p)]


# ------------------------------------------------------------------- lexing

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>//[^\n]*)
  | (?P<num>\d+)
  | (?P<id>[A-Za-z_]\w*)
  | (?P<op>:=|==|!=|<=|>=|&&|\|\||[-+*/%<>!(){};,])
""", re.VERBOSE)

KEYWORDS = {
    "maxprio", "var", "lock", "mutex", "main", "task", "isr", "if", "else",
    "while", "for", "skip", "assume", "create", "set_priority", "suspend",
    "resume", "suspendsched", "resumesched", "disableint", "enableint",
    "unlock", "block", "start", "NULL", "true", "false",
}


@dataclass(frozen=True)
class Token:
    kind: str  # num | id | op | eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind in ("num", "id", "op"):
            toks.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


# ------------------------------------------------------------------ parsing


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def accept(self, text: str) -> Token | None:
        if self.tok.text == text and self.tok.kind != "eof":
            self.i += 1
            return self.toks[self.i - 1]
        return None

    def expect(self, text: str) -> Token:
        tok = self.accept(text)
        if tok is None:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return tok

    def ident(self) -> str:
        tok = self.tok
        if tok.kind != "id" or tok.text in KEYWORDS:
            raise self.error(f"expected identifier, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok.text

    def number(self) -> int:
        tok = self.tok
        neg = False
        if tok.text == "-":
            neg, self.i = True, self.i + 1
            tok = self.tok
        if tok.kind != "num":
            raise self.error(f"expected integer, found {tok.text or 'end of input'!r}")
        self.i += 1
        return -int(tok.text) if neg else int(tok.text)

    # top level

    def program(self) -> "_RawProgram":
        raw = _RawProgram()
        while self.tok.kind != "eof":
            tok = self.tok
            if self.accept("maxprio"):
                raw.max_prio = self.number()
                if raw.max_prio < 1:
                    raise self.error("maxprio must be at least 1", tok)
                self.expect(";")
            elif self.accept("var"):
                for name in self.ident_list():
                    raw.declare(name, "var", tok)
            elif self.tok.text in ("lock", "mutex"):
                kind = "plain" if self.tok.text == "lock" else "mutex"
                self.i += 1
                for name in self.ident_list():
                    raw.declare(name, kind, tok)
            elif self.accept("main"):
                raw.add_function("main", "main", self.block(), tok)
            elif self.tok.text in ("task", "isr"):
                kind = self.tok.text
                self.i += 1
                name = self.ident()
                raw.add_function(name, kind, self.block(), tok)
            else:
                raise self.error(f"unexpected {tok.text!r} at top level")
        return raw

    def ident_list(self) -> list[str]:
        names = [self.ident()]
        while self.accept(","):
            names.append(self.ident())
        self.expect(";")
        return names

    def block(self) -> tuple[Stmt, ...]:
        self.expect("{")
        body = []
        while not self.accept("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block")
            body.append(self.statement())
        return tuple(body)

    def statement(self) -> Stmt:
        tok = self.tok
        if self.accept("if"):
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.block()
            orelse = None
            if self.accept("else"):
                orelse = (self.statement(),) if self.tok.text == "if" else self.block()
            return IfStmt(cond, then, orelse, tok.line)
        if self.accept("while"):
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            return WhileStmt(cond, self.block(), tok.line)
        if self.accept("for"):
            self.expect("(")
            self.expect(";")
            self.expect(";")
            self.expect(")")
            return WhileStmt(None, self.block(), tok.line)
        cmd = self.command()
        self.expect(";")
        return SimpleStmt(cmd, tok.line)

    def target(self) -> str | None:
        return None if self.accept("NULL") else self.ident()

    def command(self) -> Command:
        t = self.tok.text
        if self.tok.kind == "id" and t not in KEYWORDS:
            var = self.ident()
            self.expect(":=")
            return Assign(var, self.expr())
        self.i += 1
        nullary = {"skip": Skip, "suspendsched": SuspendSched, "resumesched": ResumeSched,
                   "disableint": DisableInt, "enableint": EnableInt, "block": Block,
                   "start": Start}
        if t in nullary:
            return nullary[t]()
        if t not in ("assume", "create", "set_priority", "suspend", "resume", "lock", "unlock"):
            self.i -= 1
            raise self.error(f"unknown statement {t or 'end of input'!r}")
        self.expect("(")
        if t == "assume":
            cmd: Command = Assume(self.expr())
        elif t == "create":
            func = self.ident()
            self.expect(",")
            prio = self.number()
            self.expect(",")
            cmd = Create(func, prio, self.ident())
        elif t == "set_priority":
            target = self.target()
            self.expect(",")
            cmd = SetPriority(target, self.number())
        elif t == "suspend":
            cmd = Suspend(self.target())
        elif t == "resume":
            cmd = Resume(self.ident())
        elif t == "lock":
            cmd = Lock(self.ident())
        else:
            cmd = Unlock(self.ident())
        self.expect(")")
        return cmd

    # expressions, by precedence climbing

    _LEVELS = (("||",), ("&&",), ("==", "!="), ("<", "<=", ">", ">="), ("+", "-"), ("*", "/", "%"))

    def expr(self, level: int = 0) -> Expr:
        if level == len(self._LEVELS):
            return self.unary()
        left = self.expr(level + 1)
        while self.tok.kind == "op" and self.tok.text in self._LEVELS[level]:
            op = self.tok.text
            self.i += 1
            left = Binary(op, left, self.expr(level + 1))
        return left

    def unary(self) -> Expr:
        if self.tok.text in ("!", "-") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            return Unary(op, self.unary())
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.tok.kind == "num":
            return Num(self.number())
        if self.accept("true"):
            return Num(1)
        if self.accept("false"):
            return Num(0)
        return Var(self.ident())


@dataclass
class _RawProgram:
    max_prio: int = DEFAULT_MAX_PRIO
    vars: list[str] = field(default_factory=list)
    locks: dict[str, str] = field(default_factory=dict)
    funcs: list[tuple[str, str, tuple[Stmt, ...], int]] = field(default_factory=list)

    def declare(self, name: str, kind: str, tok: Token) -> None:
        if name in self.vars or name in self.locks:
            raise ParseError(f"duplicate declaration of {name!r}", tok.line, tok.col)
        if kind == "var":
            self.vars.append(name)
        else:
            self.locks[name] = kind

    def add_function(self, name: str, kind: str, body: tuple[Stmt, ...], tok: Token) -> None:
        if any(f[0] == name for f in self.funcs):
            what = "main function" if name == "main" else f"function {name!r}"
            raise ParseError(f"duplicate {what}", tok.line, tok.col)
        self.funcs.append((name, kind, body, tok.line))


def parse(text: str) -> Program:
    """Parse IDA source text; raises :class:`ParseError` on malformed input."""
    raw = _Parser(text).program()
    if not any(f[0] == "main" for f in raw.funcs):
        raise ParseError("program has no main function")
    return build_program(raw.vars, raw.locks, raw.funcs, raw.max_prio)


def build_program(vars_, locks, funcs, max_prio=DEFAULT_MAX_PRIO) -> Program:
    """Resolve names and lower each function body to a CFG."""
    names = {f[0] for f in funcs}
    for fname, _, body, _ in funcs:
        for stmt in _walk(body):
            _check_names(stmt, set(vars_), locks, names)
    functions = tuple(
        Function(name, kind, lower(name, body), body, line) for name, kind, body, line in funcs
    )
    return Program(tuple(vars_), dict(locks), functions, max_prio)


def _walk(body):
    for s in body:
        yield s
        if isinstance(s, IfStmt):
            yield from _walk(s.then)
            if s.orelse:
                yield from _walk(s.orelse)
        elif isinstance(s, WhileStmt):
            yield from _walk(s.body)


def _check_names(stmt: Stmt, vars_: set[str], locks: dict[str, str], funcs: set[str]) -> None:
    def need_var(name: str | None) -> None:
        if name is not None and name not in vars_:
            raise ParseError(f"unknown identifier {name!r}", stmt.line)

    if isinstance(stmt, (IfStmt, WhileStmt)):
        if stmt.cond is not None:
            for v in lang.expr_vars(stmt.cond):
                need_var(v)
        return
    c = stmt.cmd
    for v in lang.reads(c) | lang.writes(c):
        need_var(v)
    if isinstance(c, Create):
        need_var(c.handle)
        if c.func not in funcs:
            raise ParseError(f"unknown function {c.func!r}", stmt.line)
    elif isinstance(c, (SetPriority, Suspend, Resume)):
        need_var(c.target)
    elif isinstance(c, (Lock, Unlock)) and c.lock not in locks:
        raise ParseError(f"unknown lock {c.lock!r}", stmt.line)


# ----------------------------------------------------------------- lowering


class _Builder:
    def __init__(self, func: str):
        self.func = func
        self.n = 0
        self.edges: list[tuple[int, Command | None, int, int]] = []  # None is epsilon

    def loc(self) -> int:
        self.n += 1
        return self.n - 1

    def edge(self, src: int, cmd: Command | None, dst: int, line: int = 0) -> None:
        self.edges.append((src, cmd, dst, line))

    def block(self, body, src: int, dst: int) -> None:
        cur = src
        for k, stmt in enumerate(body):
            nxt = dst if k == len(body) - 1 else self.loc()
            self.stmt(stmt, cur, nxt)
            cur = nxt
        if not body:
            self.edge(src, None, dst)

    def stmt(self, s: Stmt, src: int, dst: int) -> None:
        if isinstance(s, SimpleStmt):
            self.edge(src, s.cmd, dst, s.line)
        elif isinstance(s, IfStmt):
            then_src, else_src = self.loc(), self.loc()
            self.edge(src, Assume(s.cond), then_src, s.line)
            self.edge(src, Assume(lang.negate(s.cond)), else_src, s.line)
            self.block(s.then, then_src, dst)
            self.block(s.orelse or (), else_src, dst)
        else:
            cond = s.cond if s.cond is not None else Num(1)
            body_src = self.loc()
            self.edge(src, Assume(cond), body_src, s.line)
            self.edge(src, Assume(lang.negate(cond)), dst, s.line)
            self.block(s.body, body_src, src)


def lower(func: str, body: tuple[Stmt, ...]) -> Cfg:
    b = _Builder(func)
    entry, exit_ = b.loc(), b.loc()
    b.block(body, entry, exit_)

    # contract epsilon edges
    parent = list(range(b.n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for src, cmd, dst, _ in b.edges:
        if cmd is None:
            parent[find(src)] = find(dst)
    real = [(find(s), c, find(d), line) for s, c, d, line in b.edges if c is not None]

    # renumber in BFS order from the entry, ties broken by emission order
    succ: dict[int, list[int]] = {}
    for s, _, d, _ in real:
        succ.setdefault(s, []).append(d)
    order = {find(entry): 0}
    queue = deque([find(entry)])
    while queue:
        u = queue.popleft()
        for v in succ.get(u, ()):
            if v not in order:
                order[v] = len(order)
                queue.append(v)
    if find(exit_) not in order:
        order[find(exit_)] = len(order)

    edges = sorted(((order[s], c, order[d], line) for s, c, d, line in real),
                   key=lambda e: (e[0], e[3]))
    counts: dict[int, int] = {}
    instrs = []
    for s, c, d, line in edges:
        k = counts.get(line, 0)
        counts[line] = k + 1
        instrs.append(Instruction(StmtId(func, line, k), s, c, d))
    instrs = _mark_loops(instrs, 0)
    return Cfg(0, order[find(exit_)], tuple(range(len(order))), tuple(instrs))


def _mark_loops(instrs: list[Instruction], entry: int) -> list[Instruction]:
    """Tag the edges that start an iteration of a natural loop with its header."""
    succ: dict[int, list[Instruction]] = {}
    pred: dict[int, list[int]] = {}
    for ins in instrs:
        succ.setdefault(ins.src, []).append(ins)
        pred.setdefault(ins.dst, []).append(ins.src)
    back: list[Instruction] = []
    state: dict[int, int] = {}  # 1 on stack, 2 done
    stack = [(entry, iter(succ.get(entry, ())))]
    state[entry] = 1
    while stack:
        u, it = stack[-1]
        ins = next(it, None)
        if ins is None:
            state[u] = 2
            stack.pop()
            continue
        v = ins.dst
        if state.get(v) == 1:
            back.append(ins)
        elif v not in state:
            state[v] = 1
            stack.append((v, iter(succ.get(v, ()))))
    body_of: dict[int, set[int]] = {}
    for ins in back:
        h = ins.dst
        body = body_of.setdefault(h, {h})
        work = [ins.src]
        while work:
            n = work.pop()
            if n not in body:
                body.add(n)
                work.extend(pred.get(n, ()))
    out = []
    for ins in instrs:
        body = body_of.get(ins.src)
        if body is not None and ins.dst in body:
            ins = Instruction(ins.sid, ins.src, ins.cmd, ins.dst, ins.src)
        out.append(ins)
    return out


# --------------------------------------------------------------- validation


@dataclass(frozen=True)
class Diagnostic:
    sid: StmtId | None
    message: str

    def __str__(self) -> str:
        return f"{self.sid}: {self.message}" if self.sid else self.message


def validate(p: Program) -> list[Diagnostic]:
    """Check command-placement constraints; an empty list means valid."""
    diags: list[Diagnostic] = []
    mains = [f for f in p.functions if f.kind == "main"]
    if len(mains) != 1:
        diags.append(Diagnostic(None, "program must have exactly one main function"))
    for f, ins in iter_instructions(p):
        c = ins.cmd
        if f.kind == "isr" and not isinstance(c, lang.ISR_COMMANDS):
            diags.append(Diagnostic(ins.sid, f"{c} not permitted in ISR"))
        if isinstance(c, Start) and f.kind != "main":
            diags.append(Diagnostic(ins.sid, "start may only be called by main"))
        if isinstance(c, Create):
            target = p.func.get(c.func)
            if target is None or target.kind != "task":
                diags.append(Diagnostic(ins.sid, f"create target {c.func!r} is not a task function"))
            if not 1 <= c.prio <= p.max_prio:
                diags.append(Diagnostic(ins.sid, f"create priority {c.prio} outside 1..{p.max_prio}"))
        if isinstance(c, SetPriority) and not 1 <= c.prio <= p.max_prio:
            diags.append(Diagnostic(ins.sid, f"set_priority literal {c.prio} outside 1..{p.max_prio}"))
    return diags


# ------------------------------------------------------------ pretty-printing


def pretty(p: Program) -> str:
    """Render a program back to concrete syntax."""
    out = [f"maxprio {p.max_prio};"]
    if p.vars:
        out.append(f"var {', '.join(p.vars)};")
    plain = [l for l, k in p.locks.items() if k == "plain"]
    mutex = [l for l, k in p.locks.items() if k == "mutex"]
    if plain:
        out.append(f"lock {', '.join(plain)};")
    if mutex:
        out.append(f"mutex {', '.join(mutex)};")
    for f in p.functions:
        head = "main" if f.kind == "main" else f"{f.kind} {f.name}"
        out.append(f"{head} {{")
        out.extend(_fmt_body(f.body, 1))
        out.append("}")
    return "\n".join(out) + "\n"


def _fmt_body(body, depth: int) -> list[str]:
    pad = "    " * depth
    lines: list[str] = []
    for s in body:
        if isinstance(s, SimpleStmt):
            lines.append(f"{pad}{s.cmd};")
        elif isinstance(s, IfStmt):
            lines.append(f"{pad}if ({lang.fmt_expr(s.cond)}) {{")
            lines.extend(_fmt_body(s.then, depth + 1))
            if s.orelse is not None:
                lines.append(f"{pad}}} else {{")
                lines.extend(_fmt_body(s.orelse, depth + 1))
            lines.append(f"{pad}}}")
        else:
            head = "for (;;)" if s.cond is None else f"while ({lang.fmt_expr(s.cond)})"
            lines.append(f"{pad}{head} {{")
            lines.extend(_fmt_body(s.body, depth + 1))
            lines.append(f"{pad}}}")
    return lines


def shape(p: Program) -> tuple:
    """Line-number-free structural fingerprint, used to compare reparsed programs."""
    return (
        p.vars, tuple(sorted(p.locks.items())), p.max_prio,
        tuple((f.name, f.kind, f.cfg.entry, f.cfg.exit,
               tuple((i.src, i.cmd, i.dst, i.loop) for i in f.cfg.instructions))
              for f in p.functions),
    )


# ------------------------------------------------------- mutex priorities


def _handle_targets(p: Program) -> dict[str, set[str]]:
    """Functions a handle variable may name, judged syntactically."""
    targets: dict[str, set[str]] = {v: {"main"} for v in p.vars}  # zero names main
    everything = {f.name for f in p.functions}
    for _, ins in iter_instructions(p):
        c = ins.cmd
        if isinstance(c, Create):
            targets[c.handle].add(c.func)
        elif isinstance(c, Assign):
            targets[c.var] |= everything
    return targets


def max_base_priority(p: Program) -> dict[str, int]:
    """Largest base priority any thread running each task function can be given."""
    best: dict[str, int] = {f.name: 0 for f in p.functions if f.kind != "isr"}
    targets = _handle_targets(p)
    for f, ins in iter_instructions(p):
        c = ins.cmd
        if isinstance(c, Create) and c.func in best:
            best[c.func] = max(best[c.func], c.prio)
        elif isinstance(c, SetPriority):
            names = {f.name} if c.target is None else targets[c.target]
            for name in names:
                if name in best:
                    best[name] = max(best[name], c.prio)
    return best


def _lockers(p: Program) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {l: set() for l in p.locks}
    for f, ins in iter_instructions(p):
        if isinstance(ins.cmd, Lock) and f.kind != "isr":
            out[ins.cmd.lock].add(f.name)
    return out


def mutex_ceilings(p: Program) -> dict[str, int]:
    """Ceiling of each mutex: the highest base priority of any task that locks it."""
    best = max_base_priority(p)
    return {l: max((best[f] for f in users), default=0)
            for l, users in _lockers(p).items() if p.locks[l] == "mutex"}


def inheritance_bounds(p: Program) -> dict[str, int]:
    """Upper bound on the priority a mutex holder can inherit from waiters.

    A waiter may itself run boosted by mutexes it holds, so bounds are closed
    over the mutexes each locking function touches.
    """
    best = max_base_priority(p)
    lockers = _lockers(p)
    locked_in: dict[str, set[str]] = {}
    for l, users in lockers.items():
        for f in users:
            locked_in.setdefault(f, set()).add(l)
    bound = {l: max((best[f] for f in users), default=0)
             for l, users in lockers.items() if p.locks[l] == "mutex"}
    changed = True
    while changed:
        changed = False
        for l in bound:
            for f in lockers[l]:
                for other in locked_in.get(f, ()):
                    if other in bound and bound[other] > bound[l]:
                        bound[l] = bound[other]
                        changed = True
    return bound
