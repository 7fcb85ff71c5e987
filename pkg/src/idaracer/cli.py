"""Command-line front end: ``idaracer <subcommand> ...``.

Exit status is 0 when nothing racy (or no witness) was found, 1 when races,
witnesses or soundness violations were reported, and 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness
from .analyses import analyze as analyze_facts
from .detector import DetectorConfig, DiagnosticError, RaceReport, detect_races
from .frontend import ParseError, Program, StmtId, parse, validate
from .semantics import Bounds, Config, Exploration, explore, mhp, occurs_in_between

EXIT_CLEAN, EXIT_FOUND, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _color(text: str, code: str) -> str:
    if os.environ.get("IDARACER_COLOR", "1") == "0" or not sys.stdout.isatty():
        return text
    return f"\x1b[{code}m{text}\x1b[0m"


def _load(path: str) -> Program:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"{path}: {e.strerror}") from e
    try:
        p = parse(text)
    except ParseError as e:
        raise UsageError(f"{path}:{e}") from e
    diags = validate(p)
    if diags:
        raise UsageError("\n".join(f"{path}: {d}" for d in diags))
    return p


def _bounds(a) -> Bounds:
    return Bounds(loop_bound=a.loop_bound, isr_bound=a.isr_bound, state_cap=a.state_cap)


def _detector_cfg(a) -> DetectorConfig:
    return DetectorConfig(a.mutex, not a.no_round_robin)


def _oracle_cfg(a) -> Config:
    return Config(a.mutex, not a.no_round_robin)


def _stmt(p: Program, text: str | None, flag: str) -> StmtId:
    if text is None:
        raise UsageError(f"{flag} is required")
    try:
        sid = StmtId.parse(text)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if sid not in p.instruction:
        raise UsageError(f"no statement {sid}")
    return sid


def _emit(a, obj: dict, text: str) -> None:
    if a.format == "json":
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(text)


# ------------------------------------------------------------- subcommands


def _report_text(r: RaceReport) -> str:
    mode = "round-robin" if r.config.round_robin else "no round-robin"
    lines = [f"{r.program}  (mutex={r.config.mutex}, {mode})"]
    for v in r.verdicts:
        rules = " / ".join(x or "-" for x in v.rules)
        verdict = _color(v.verdict, "31" if v.racy else "32")
        lines.append(f"  {v.pair.var:<10} {str(v.pair.s1):<12} {str(v.pair.s2):<12} "
                     f"{verdict:<16}  {rules}")
        if v.witness is not None:
            lines.append("\n".join("      " + ln for ln in v.witness.render().splitlines()))
    lines.append(f"{r.conflicting} conflicting, {r.potential} potentially racy, "
                 f"{r.elim_pct:.2f}% eliminated")
    return "\n".join(lines)


def cmd_analyze(a) -> int:
    p = _load(a.file)
    r = detect_races(p, _detector_cfg(a), Path(a.file).name)
    if a.confirm:
        confirmed = 0
        for v in r.verdicts:
            if v.racy:
                hit, w = mhp(p, v.pair.s1, v.pair.s2, _bounds(a), _oracle_cfg(a))
                if hit:
                    v.witness = w if a.trace or a.format == "json" else None
                    confirmed += 1
        r.confirmed = confirmed
    obj = r.to_json()
    if a.dump_facts:
        obj["facts"] = r.facts.to_json()
    text = _report_text(r)
    if a.dump_facts:
        text += "\n\n" + _facts_text(r.facts)
    _emit(a, obj, text)
    return EXIT_FOUND if r.potential else EXIT_CLEAN


def _facts_text(facts) -> str:
    lines = []
    for sid, d in facts.to_json().items():
        prio = "-" if d["prio"] is None else f"({d['prio'][0]},{d['prio'][1]})"
        locks = ",".join(d["locks"]) or "-"
        susp = ",".join(d["suspended"]) or "-"
        ins = facts.program.instruction[StmtId.parse(sid)]
        lines.append(f"{sid:<12} {str(ins.cmd):<28} prio={prio:<7} susp={susp:<10} locks={locks}")
    return "\n".join(lines)


def cmd_facts(a) -> int:
    p = _load(a.file)
    facts = analyze_facts(p, a.mutex)
    lists = {k: sorted(v) for k, v in facts.lists.susplist.items()}
    res = {k: sorted(v) for k, v in facts.lists.reslist.items()}
    obj = {"statements": facts.to_json(), "susplist": lists, "reslist": res,
           "instances": dict(sorted(facts.instances.items()))}
    _emit(a, obj, _facts_text(facts))
    return EXIT_CLEAN


def _exploration_json(g: Exploration) -> dict:
    return {"states": len(g.nodes), "edges": len(g.edges), "stuck": len(g.stuck),
            "errors": [{"stmt": str(tr.sid), "thread": tr.thread} for _, tr in g.errors],
            "truncated": g.truncated, "loopBoundHit": g.hit_loop_bound,
            "isrBoundHit": g.hit_isr_bound, "stepBoundHit": g.hit_step_bound}


def cmd_explore(a) -> int:
    p = _load(a.file)
    g = explore(p, _bounds(a), _oracle_cfg(a))
    obj = _exploration_json(g)
    text = "\n".join(f"{k}: {v}" for k, v in obj.items())
    if a.trace and g.errors:
        text += "\nfirst error trace:\n" + "\n".join(
            f"  t{tr.thread} {tr.rule} {tr.label}" for tr in g.path(g.errors[0][0]))
    _emit(a, obj, text)
    return EXIT_FOUND if g.errors else EXIT_CLEAN


def _witness_out(a, found: bool, w, what: str) -> int:
    obj = {"result": found, "witness": None if w is None else w.to_json()}
    text = f"{what}: {'yes' if found else 'no'}"
    if w is not None and a.trace:
        text += "\n" + w.render()
    _emit(a, obj, text)
    return EXIT_FOUND if found else EXIT_CLEAN


def cmd_check_oib(a) -> int:
    p = _load(a.file)
    s1, s2 = _stmt(p, a.s1, "--s1"), _stmt(p, a.s2, "--s2")
    w = occurs_in_between(p, s1, s2, _bounds(a), _oracle_cfg(a))
    return _witness_out(a, w is not None, w, f"{s2} occurs in between {s1}")


def cmd_mhp(a) -> int:
    p = _load(a.file)
    s1, s2 = _stmt(p, a.s1, "--s1"), _stmt(p, a.s2, "--s2")
    hit, w = mhp(p, s1, s2, _bounds(a), _oracle_cfg(a))
    return _witness_out(a, hit, w, f"{s1} and {s2} may happen in parallel")


def cmd_corpus(a) -> int:
    res = harness.run_corpus(a.dir, _detector_cfg(a), _bounds(a), a.jobs)
    if a.csv:
        Path(a.csv).write_text(harness.csv_table(res))
    obj = {"config": _detector_cfg(a).to_json(), "results": [r.to_json() for r in res]}
    bad = [(r.program, v) for r in res for v in r.violations]
    text = harness.markdown_table(res)
    for prog, v in bad:
        text += "\n" + _color(f"UNSOUND {prog}: {v.s1} -> {v.s2} eliminated by {v.rule}", "31")
    _emit(a, obj, text)
    return EXIT_FOUND if bad else EXIT_CLEAN


def cmd_fuzz(a) -> int:
    if a.replay:
        viol = harness.replay_counterexample(Path(a.replay))
        obj = {"violations": [v.to_json() for v in viol]}
        text = "\n".join(f"{v.s1} -> {v.s2} eliminated by {v.rule}" for v in viol) or "no violations"
        _emit(a, obj, text)
        return EXIT_FOUND if viol else EXIT_CLEAN
    sc = harness.FuzzConfig(suspend_resume=not a.no_suspend)
    rep = harness.fuzz_soundness(a.seed, a.n, sc, _bounds(a))
    if a.save:
        out = Path(a.save)
        out.mkdir(parents=True, exist_ok=True)
        for c in rep.counterexamples:
            (out / f"cex-{c.seed}-{c.index}.json").write_text(json.dumps(c.to_json(), indent=2))
    rules = ", ".join(f"{k}={v}" for k, v in sorted(rep.rules.items()))
    text = (f"seed {rep.seed}: {rep.programs} programs, {rep.directions} eliminated directions "
            f"checked ({rules}); {len(rep.counterexamples)} counterexamples")
    for c in rep.counterexamples:
        text += f"\n--- program {c.index} ({c.config})\n{c.source}"
        text += "\n".join(f"  {v.s1} -> {v.s2} eliminated by {v.rule}" for v in c.violations)
    _emit(a, rep.to_json(), text)
    return EXIT_FOUND if rep.counterexamples else EXIT_CLEAN


# ------------------------------------------------------------------ parser


def _common() -> argparse.ArgumentParser:
    c = argparse.ArgumentParser(add_help=False)
    c.add_argument("--mutex", choices=("plain", "inheritance", "ceiling"), default="plain")
    c.add_argument("--no-round-robin", action="store_true",
                   help="disable time slicing between equal-priority tasks")
    c.add_argument("--loop-bound", type=int, default=2)
    c.add_argument("--isr-bound", type=int, default=2)
    c.add_argument("--state-cap", type=int, default=1_000_000)
    c.add_argument("--format", choices=("text", "json"), default="text")
    c.add_argument("--trace", action="store_true", help="print witness traces")
    return c


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="idaracer",
                                  description="Data race detection for interrupt-driven programs.")
    sub = top.add_subparsers(dest="command", required=True)
    c = _common()

    s = sub.add_parser("analyze", parents=[c], help="report potentially racy access pairs")
    s.add_argument("file")
    s.add_argument("--dump-facts", action="store_true", help="include per-statement facts")
    s.add_argument("--confirm", action="store_true",
                   help="search for an oracle witness for each racy pair")
    s.set_defaults(run=cmd_analyze)

    s = sub.add_parser("explore", parents=[c], help="enumerate reachable states")
    s.add_argument("file")
    s.set_defaults(run=cmd_explore)

    for name, fn, text in (("check-oib", cmd_check_oib, "does s2 occur in between s1?"),
                           ("mhp", cmd_mhp, "may s1 and s2 happen in parallel?")):
        s = sub.add_parser(name, parents=[c], help=text)
        s.add_argument("file")
        s.add_argument("--s1", metavar="FUNC:LINE")
        s.add_argument("--s2", metavar="FUNC:LINE")
        s.set_defaults(run=fn)

    s = sub.add_parser("facts", parents=[c], help="print analysis facts")
    s.add_argument("file")
    s.set_defaults(run=cmd_facts)

    s = sub.add_parser("corpus", parents=[c], help="detector vs oracle over a directory")
    s.add_argument("dir", nargs="?", default=None,
                   help="directory of .ida files (default: the bundled examples)")
    s.add_argument("--csv", metavar="PATH", help="also write the table as CSV")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(run=cmd_corpus)

    s = sub.add_parser("fuzz", parents=[c], help="soundness audit on random programs")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--no-suspend", action="store_true", help="omit suspend/resume templates")
    s.add_argument("--save", metavar="DIR", help="write counterexamples as JSON files")
    s.add_argument("--replay", metavar="FILE", help="rerun a saved counterexample")
    s.set_defaults(run=cmd_fuzz)
    return top


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_CLEAN
    try:
        return a.run(a)
    except (UsageError, DiagnosticError, ValueError) as e:
        print(f"idaracer: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
