"""Corpus runner, soundness audit and random-program fuzzer.

Detector verdicts are compared against the bounded oracle: every direction a
rule eliminates must have no occurs-in-between witness, and every non-racy
pair must have no may-happen-in-parallel witness.
"""

from __future__ import annotations

import csv
import io
import json
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .analyses import INT_OFF, SCHED_OFF, AnalysisFacts
from .detector import DetectorConfig, RaceReport, detect_races, elim_pct, precision_pct
from .frontend import Program, StmtId, iter_instructions, parse, validate
from .semantics import Bounds, Config, Exploration, Relations, relations


@dataclass(frozen=True)
class Violation:
    s1: StmtId
    s2: StmtId
    rule: str  # eliminating rule, or "non-racy" for a pair-level miss

    def to_json(self) -> dict:
        return {"s1": str(self.s1), "s2": str(self.s2), "rule": self.rule}


@dataclass
class Audit:
    """Detector facts cross-checked against one oracle exploration."""

    report: RaceReport
    rel: Relations
    violations: list[Violation]
    true_races: int
    confirmed: int
    eliminated: dict[str, int]  # rule -> directions it eliminated


def audit(p: Program, cfg: DetectorConfig = DetectorConfig(), b: Bounds = Bounds(),
          name: str = "<program>") -> Audit:
    report = detect_races(p, cfg, name)
    rel = relations(p, b, Config(cfg.mutex, cfg.round_robin))
    violations = []
    fired: dict[str, int] = {}
    true_races = confirmed = 0
    for v in report.verdicts:
        for d in (v.forward, v.backward):
            if d.eliminated:
                fired[d.rule] = fired.get(d.rule, 0) + 1
                if (d.s1, d.s2) in rel.oib:
                    violations.append(Violation(d.s1, d.s2, d.rule))
        par = (v.pair.s1, v.pair.s2) in rel.mhp
        true_races += par
        if v.racy:
            confirmed += par
        elif par:
            violations.append(Violation(v.pair.s1, v.pair.s2, "non-racy"))
    report.confirmed = confirmed
    return Audit(report, rel, violations, true_races, confirmed, fired)


def fact_violations(p: Program, facts: AnalysisFacts, g: Exploration) -> list[str]:
    """Facts contradicted by some explored state.

    For each thread sitting before a statement, its priority must lie in the
    statement's interval and each must-held lock's condition must hold.  A
    suspend block only guarantees its target stays suspended when no other
    function can resume it, so that check is limited to such blocks.
    """
    lock_index = {l: k for k, l in enumerate(p.locks)}
    at: dict[str, dict[int, list]] = {}
    for fn, ins in iter_instructions(p):
        at.setdefault(fn.name, {}).setdefault(ins.src, []).append(ins.sid)
    out = []
    for node in g.nodes:
        s = node.state
        live = s.blocked | s.suspended | s.ready
        for t in sorted(live):
            for sid in at[s.fun[t]].get(s.pc[t], ()):
                iv = facts.prio[sid]
                if iv is None or s.prio[t] not in iv:
                    out.append(f"{sid}: thread {t} at priority {s.prio[t]}, interval {iv}")
                for lk in facts.locks[sid]:
                    if not _lock_holds(lk, sid, t, s, facts, lock_index):
                        out.append(f"{sid}: thread {t} holds {lk} but the state disagrees")
    return out


def _lock_holds(lk, sid: StmtId, t: int, s, facts: AnalysisFacts, lock_index) -> bool:
    if lk.kind == "real":
        return s.acquired[lock_index[lk.name]] == t
    if lk == INT_OFF:
        return s.id
    if lk == SCHED_OFF:
        return s.ss
    if lk.kind == "susp":
        if facts.lists.reslist.get(lk.name, set()) - {sid.func}:
            return True
        return all(u in s.suspended for u in s.threads if s.fun[u] == lk.name)
    return True  # flag locks are protocol facts, not state facts


# ------------------------------------------------------------------ corpus


@dataclass
class CorpusResult:
    program: str
    conflicting: int
    true_races: int
    potential: int
    confirmed: int
    elim_pct: float
    precision_pct: float
    detector_ms: float
    oracle_ms: float
    bounds_hit: bool  # precision is then only a lower bound
    states: int
    violations: list[Violation] = field(default_factory=list)
    rules: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["violations"] = [v.to_json() for v in self.violations]
        return d


def corpus_dir() -> Path:
    """The directory of example programs shipped with the package."""
    return Path(str(resources.files("idaracer") / "corpus"))


def corpus_files(where: str | Path | None = None) -> list[Path]:
    root = corpus_dir() if where is None else Path(where)
    if root.is_file():
        return [root]
    return sorted(root.glob("*.ida"))


def run_program(path: str | Path, cfg: DetectorConfig = DetectorConfig(),
                b: Bounds = Bounds()) -> CorpusResult:
    path = Path(path)
    p = parse(path.read_text())
    t0 = time.perf_counter()
    detect_races(p, cfg, path.name)
    t1 = time.perf_counter()
    a = audit(p, cfg, b, path.name)
    t2 = time.perf_counter()
    r = a.report
    # the audit reruns the detector; oracle time is what remains
    oracle_ms = max(0.0, (t2 - t1) - (t1 - t0)) * 1000
    return CorpusResult(
        program=path.name, conflicting=r.conflicting, true_races=a.true_races,
        potential=r.potential, confirmed=a.confirmed, elim_pct=r.elim_pct,
        precision_pct=precision_pct(r.potential, a.confirmed),
        detector_ms=(t1 - t0) * 1000, oracle_ms=oracle_ms, bounds_hit=a.rel.bounds_hit,
        states=len(a.rel.exploration.nodes), violations=a.violations, rules=a.eliminated)


def _run_one(args):
    return run_program(*args)


def run_corpus(where: str | Path | None = None, cfg: DetectorConfig = DetectorConfig(),
               b: Bounds = Bounds(), jobs: int = 1) -> list[CorpusResult]:
    """Detector plus oracle on every ``.ida`` file, ordered by file name."""
    work = [(f, cfg, b) for f in corpus_files(where)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_run_one, work))
    return [_run_one(w) for w in work]


COLUMNS = ("Program", "Conf. acc.", "True Races", "Pot. Races", "%Elim.", "%Prec.",
           "Det. ms", "Oracle ms", "Bounds hit")


def _rows(results: list[CorpusResult]) -> list[tuple]:
    rows = []
    for r in results:
        prec = f"{r.precision_pct:.2f}" + ("+" if r.bounds_hit else "")
        rows.append((r.program, r.conflicting, r.true_races, r.potential, f"{r.elim_pct:.2f}",
                     prec, f"{r.detector_ms:.1f}", f"{r.oracle_ms:.1f}",
                     "yes" if r.bounds_hit else "no"))
    conf = sum(r.conflicting for r in results)
    pot = sum(r.potential for r in results)
    ok = sum(r.confirmed for r in results)
    rows.append(("Overall", conf, sum(r.true_races for r in results), pot,
                 f"{elim_pct(conf, pot):.2f}", f"{precision_pct(pot, ok):.2f}",
                 f"{sum(r.detector_ms for r in results):.1f}",
                 f"{sum(r.oracle_ms for r in results):.1f}",
                 "yes" if any(r.bounds_hit for r in results) else "no"))
    return rows


def markdown_table(results: list[CorpusResult]) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    for row in _rows(results):
        lines.append("| " + " | ".join(str(c) for c in row) + " |")
    return "\n".join(lines)


def csv_table(results: list[CorpusResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    w.writerows(_rows(results))
    return buf.getvalue()


# ------------------------------------------------------------------ fuzzing


@dataclass(frozen=True)
class FuzzConfig:
    max_tasks: int = 3
    max_isrs: int = 1
    max_stmts: int = 6
    max_prio: int = 3
    suspend_resume: bool = True
    vary_config: bool = True  # also draw mutex mode and round-robin per program


class _Gen:
    """Random well-formed programs over a small fixed vocabulary."""

    DATA = ("x", "y")

    def __init__(self, rng: random.Random, sc: FuzzConfig):
        self.rng, self.sc = rng, sc

    def prio(self) -> int:
        return self.rng.randint(1, self.sc.max_prio)

    def handle(self) -> str:
        return self.rng.choice(self.handles)

    def access(self) -> str:
        r = self.rng
        v, w = r.choice(self.DATA), r.choice(self.DATA)
        return r.choice([f"{v} := {w} + 1;", f"{v} := {r.randint(0, 2)};", f"{v} := {w};",
                         f"if ({w} > 0) {{ {v} := 0; }}"])

    def chunk(self, isr: bool, budget: int) -> tuple[str, int]:
        """One template instance and the number of primitive statements it uses."""
        r = self.rng
        opts = ["acc", "acc", "lock", "intoff", "flagset", "flagchk"]
        if not isr:
            opts += ["sched", "setp", "setp_other", "block_", "loop"]
            if self.sc.suspend_resume:
                opts += ["suspblock", "suspblock", "suspself", "resume"]
        kind = r.choice(opts)
        a = self.access()
        if kind == "lock" and budget >= 3:
            return f"lock(m); {a} unlock(m);", 3
        if kind == "intoff" and budget >= 3:
            return f"disableint; {a} enableint;", 3
        if kind == "sched" and budget >= 3:
            return f"suspendsched; {a} resumesched;", 3
        if kind == "flagset" and budget >= 3:
            return f"f := 1; {a} f := 0;", 3
        if kind == "flagchk" and budget >= 2:
            return f"if (f == 0) {{ {a} }}", 2
        if kind == "suspblock" and budget >= 3:
            h = self.handle()
            return f"suspend({h}); {a} resume({h});", 3
        if kind == "suspself":
            return "suspend(NULL);", 1
        if kind == "resume":
            return f"resume({self.handle()});", 1
        if kind == "setp":
            return f"set_priority(NULL, {self.prio()});", 1
        if kind == "setp_other":
            return f"set_priority({self.handle()}, {self.prio()});", 1
        if kind == "block_":
            return "block;", 1
        if kind == "loop" and budget >= 2:
            v = r.choice(self.DATA)
            return f"while ({v} < 2) {{ {v} := {v} + 1; }}", 2
        return a, 1

    def body(self, isr: bool) -> str:
        n = self.rng.randint(1, self.sc.max_stmts)
        parts = []
        while n > 0:
            text, used = self.chunk(isr, n)
            parts.append(text)
            n -= used
        return " ".join(parts)

    def program(self) -> str:
        r, sc = self.rng, self.sc
        ntasks = r.randint(1, sc.max_tasks)
        nisrs = r.randint(0, sc.max_isrs)
        tasks = [f"T{k}" for k in range(1, ntasks + 1)]
        creates = [(t, f"h{k}") for k, t in enumerate(tasks, 1)]
        if r.random() < 0.25:  # a second instance of some task
            creates.append((r.choice(tasks), f"h{len(creates) + 1}"))
        self.handles = [h for _, h in creates]
        lines = [f"maxprio {sc.max_prio};",
                 f"var x, y, f, {', '.join(self.handles)};",
                 "mutex m;" if r.random() < 0.5 else "lock m;"]
        main = []
        if r.random() < 0.5:
            main.append(self.access())
        main += [f"create({t}, {self.prio()}, {h});" for t, h in creates]
        main.append("start;")
        if r.random() < 0.3:
            main.append(self.access())
        lines.append("main { " + " ".join(main) + " }")
        for t in tasks:
            body = self.body(False)
            if r.random() < 0.3:
                body = f"for (;;) {{ {body} }}"
            lines.append(f"task {t} {{ {body} }}")
        for k in range(1, nisrs + 1):
            lines.append(f"isr I{k} {{ {self.body(True)} }}")
        return "\n".join(lines) + "\n"


def random_program(rng: random.Random, sc: FuzzConfig = FuzzConfig()) -> str:
    return _Gen(rng, sc).program()


@dataclass
class Counterexample:
    seed: int
    index: int
    source: str
    config: DetectorConfig
    bounds: Bounds
    violations: list[Violation]

    def to_json(self) -> dict:
        return {"seed": self.seed, "index": self.index, "program": self.source,
                "config": self.config.to_json(), "bounds": asdict(self.bounds),
                "violations": [v.to_json() for v in self.violations]}


@dataclass
class FuzzReport:
    seed: int
    programs: int
    directions: int  # eliminated directions checked against the oracle
    rules: dict[str, int]
    counterexamples: list[Counterexample]
    truncated: int  # programs whose exploration hit the state cap

    def to_json(self) -> dict:
        return {"seed": self.seed, "programs": self.programs, "directions": self.directions,
                "rules": dict(sorted(self.rules.items())), "truncated": self.truncated,
                "counterexamples": [c.to_json() for c in self.counterexamples]}


def _draw_config(rng: random.Random, sc: FuzzConfig) -> DetectorConfig:
    if not sc.vary_config:
        return DetectorConfig()
    return DetectorConfig(rng.choice(("plain", "inheritance", "ceiling")), rng.random() < 0.5)


def fuzz_soundness(seed: int = 1, n: int = 100, sc: FuzzConfig = FuzzConfig(),
                   b: Bounds = Bounds(state_cap=200_000)) -> FuzzReport:
    """Audit ``n`` random programs; any eliminated direction with a witness is reported."""
    rng = random.Random(seed)
    rules: dict[str, int] = {}
    found = []
    directions = truncated = 0
    for k in range(n):
        src = random_program(rng, sc)
        cfg = _draw_config(rng, sc)
        p = parse(src)
        if validate(p):
            continue
        a = audit(p, cfg, b, f"fuzz-{seed}-{k}")
        truncated += a.rel.exploration.truncated
        for r, c in a.eliminated.items():
            rules[r] = rules.get(r, 0) + c
            directions += c
        if a.violations:
            found.append(Counterexample(seed, k, src, cfg, b, a.violations))
    return FuzzReport(seed, n, directions, rules, found, truncated)


def replay_counterexample(data: dict | str | Path) -> list[Violation]:
    """Rerun the audit recorded in a counterexample (dict, JSON text or file)."""
    if isinstance(data, Path) or (isinstance(data, str) and not data.lstrip().startswith("{")):
        data = json.loads(Path(data).read_text())
    elif isinstance(data, str):
        data = json.loads(data)
    c = data["config"]
    cfg = DetectorConfig(c["mutex"], c["roundRobin"])
    b = Bounds(**data["bounds"])
    return audit(parse(data["program"]), cfg, b).violations
