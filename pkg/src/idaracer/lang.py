"""Expression and command vocabulary of the IDA language."""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union


class EvalError(Exception):
    """Raised when an expression cannot be evaluated (division by zero)."""


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class Num:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Unary:
    op: str  # '!' or '-'
    arg: "Expr"

    def __str__(self) -> str:
        return f"{self.op}({self.arg})"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __str__(self) -> str:
        return f"({self.left} {self.op} {self.right})"


Expr = Union[Num, Var, Unary, Binary]


def _cdiv(a: int, b: int) -> int:
    if b == 0:
        raise EvalError("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _cmod(a: int, b: int) -> int:
    if b == 0:
        raise EvalError("modulo by zero")
    return a - b * _cdiv(a, b)


BINOPS: dict[str, Callable[[int, int], int]] = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": _cdiv,
    "%": _cmod,
    "<": lambda a, b: int(a < b),
    "<=": lambda a, b: int(a <= b),
    ">": lambda a, b: int(a > b),
    ">=": lambda a, b: int(a >= b),
    "==": lambda a, b: int(a == b),
    "!=": lambda a, b: int(a != b),
}


def eval_expr(e: Expr, env: Mapping[str, int]) -> int:
    """Evaluate ``e`` with C-like integer semantics (truncating division)."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Unary):
        v = eval_expr(e.arg, env)
        return int(not v) if e.op == "!" else -v
    if e.op == "&&":
        return int(bool(eval_expr(e.left, env)) and bool(eval_expr(e.right, env)))
    if e.op == "||":
        return int(bool(eval_expr(e.left, env)) or bool(eval_expr(e.right, env)))
    return BINOPS[e.op](eval_expr(e.left, env), eval_expr(e.right, env))


def eval_bool(b: Expr, env: Mapping[str, int]) -> bool:
    return eval_expr(b, env) != 0


def compile_expr(e: Expr, index: Mapping[str, int]) -> Callable[[Sequence[int]], int]:
    """Compile ``e`` into a closure over a positional environment tuple."""
    if isinstance(e, Num):
        v = e.value
        return lambda env: v
    if isinstance(e, Var):
        i = index[e.name]
        return lambda env: env[i]
    if isinstance(e, Unary):
        f = compile_expr(e.arg, index)
        if e.op == "!":
            return lambda env: int(not f(env))
        return lambda env: -f(env)
    lf, rf = compile_expr(e.left, index), compile_expr(e.right, index)
    if e.op == "&&":
        return lambda env: int(bool(lf(env)) and bool(rf(env)))
    if e.op == "||":
        return lambda env: int(bool(lf(env)) or bool(rf(env)))
    op = BINOPS[e.op]
    return lambda env: op(lf(env), rf(env))


def expr_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Unary):
        return expr_vars(e.arg)
    return expr_vars(e.left) | expr_vars(e.right)


def negate(b: Expr) -> Expr:
    return Unary("!", b)


# ------------------------------------------------------------------- commands


@dataclass(frozen=True)
class Skip:
    def __str__(self) -> str:
        return "skip"


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr

    def __str__(self) -> str:
        return f"{self.var} := {fmt_expr(self.expr)}"


@dataclass(frozen=True)
class Assume:
    cond: Expr

    def __str__(self) -> str:
        return f"assume({fmt_expr(self.cond)})"


@dataclass(frozen=True)
class Create:
    func: str
    prio: int
    handle: str

    def __str__(self) -> str:
        return f"create({self.func}, {self.prio}, {self.handle})"


@dataclass(frozen=True)
class SetPriority:
    target: str | None  # None is NULL: the current thread
    prio: int

    def __str__(self) -> str:
        return f"set_priority({self.target or 'NULL'}, {self.prio})"


@dataclass(frozen=True)
class Suspend:
    target: str | None

    def __str__(self) -> str:
        return f"suspend({self.target or 'NULL'})"


@dataclass(frozen=True)
class Resume:
    target: str

    def __str__(self) -> str:
        return f"resume({self.target})"


@dataclass(frozen=True)
class SuspendSched:
    def __str__(self) -> str:
        return "suspendsched"


@dataclass(frozen=True)
class ResumeSched:
    def __str__(self) -> str:
        return "resumesched"


@dataclass(frozen=True)
class DisableInt:
    def __str__(self) -> str:
        return "disableint"


@dataclass(frozen=True)
class EnableInt:
    def __str__(self) -> str:
        return "enableint"


@dataclass(frozen=True)
class Lock:
    lock: str

    def __str__(self) -> str:
        return f"lock({self.lock})"


@dataclass(frozen=True)
class Unlock:
    lock: str

    def __str__(self) -> str:
        return f"unlock({self.lock})"


@dataclass(frozen=True)
class Block:
    def __str__(self) -> str:
        return "block"


@dataclass(frozen=True)
class Start:
    def __str__(self) -> str:
        return "start"


Command = Union[
    Skip, Assign, Assume, Create, SetPriority, Suspend, Resume, SuspendSched,
    ResumeSched, DisableInt, EnableInt, Lock, Unlock, Block, Start,
]

# commands an ISR body may contain
ISR_COMMANDS = (Skip, Assign, Assume, DisableInt, EnableInt, Lock, Unlock)
TASK_ONLY_COMMANDS = (SetPriority, Suspend, Resume, SuspendSched, ResumeSched, Block)


def reads(cmd: Command) -> frozenset[str]:
    """Variables read by an access command (assign or assume)."""
    if isinstance(cmd, Assign):
        return expr_vars(cmd.expr)
    if isinstance(cmd, Assume):
        return expr_vars(cmd.cond)
    return frozenset()


def writes(cmd: Command) -> frozenset[str]:
    if isinstance(cmd, Assign):
        return frozenset((cmd.var,))
    return frozenset()


# ------------------------------------------------------------ pretty printing

_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6, "%": 6}


def fmt_expr(e: Expr, parent: int = 0) -> str:
    """Render ``e`` in concrete syntax with minimal parentheses."""
    if isinstance(e, Num):
        return str(e.value) if e.value >= 0 else f"({e.value})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        return f"{e.op}{fmt_expr(e.arg, 7)}"
    p = _PREC[e.op]
    # left-associative: the right operand needs parens at equal precedence
    s = f"{fmt_expr(e.left, p)} {e.op} {fmt_expr(e.right, p + 1)}"
    return f"({s})" if p < parent else s
