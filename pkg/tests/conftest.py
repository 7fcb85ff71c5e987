from pathlib import Path

import pytest

from idaracer.frontend import Program, StmtId, parse
from idaracer.harness import corpus_dir


def load(name: str) -> Program:
    return parse((corpus_dir() / name).read_text())


def sid(text: str) -> StmtId:
    return StmtId.parse(text)


@pytest.fixture(scope="session")
def prodcons() -> Program:
    return load("prodcons.ida")


@pytest.fixture(scope="session")
def corpus_paths() -> list[Path]:
    return sorted(corpus_dir().glob("*.ida"))


_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    if rep.when == "setup" and rep.passed:
        return
    note = dict(item.user_properties).get("note", "")
    _criteria[n] = ("PASS" if rep.passed else "FAIL", title, note)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, title, note = _criteria[n]
        terminalreporter.write_line(f"[{status}] {n}. {title}" + (f" ({note})" if note else ""))
