"""Acceptance bookkeeping.

Tests carrying ``@pytest.mark.criterion(n, ...)`` count towards the numbered
acceptance criteria.  Acceptance tests may also attach measured figures via
the ``acceptance`` fixture.  After the run one line per criterion is printed
and everything is written to ``acceptance_report.json`` in the project root.
"""

import json
import time
from collections import defaultdict
from pathlib import Path

import pytest

REPORT_PATH = Path(__file__).resolve().parent.parent / "acceptance_report.json"

_outcomes: dict = defaultdict(list)  # criterion -> [(nodeid, passed)]
_details: dict = defaultdict(list)  # criterion -> [(nodeid, text)]
_figures: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(*numbers): acceptance criteria a test covers")


class Acceptance:
    def __init__(self, nodeid):
        self.nodeid = nodeid

    def note(self, criterion: int, text: str) -> None:
        _details[criterion].append((self.nodeid, text))

    def figure(self, key: str, value) -> None:
        _figures[key] = value


@pytest.fixture
def acceptance(request):
    return Acceptance(request.node.nodeid)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        passed = rep.passed and not hasattr(rep, "wasxfail")
        for number in marker.args:
            _outcomes[number].append((item.nodeid, passed))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    report = {"generated": time.strftime("%Y-%m-%d %H:%M:%S"), "criteria": {},
              "figures": _figures}
    for number in sorted(_outcomes):
        runs = _outcomes[number]
        failed = [nodeid for nodeid, ok in runs if not ok]
        verdict = "PASS" if not failed else "FAIL"
        line = f"criterion {number}: {verdict} ({len(runs) - len(failed)}/{len(runs)} checks)"
        if failed:
            line += " failing: " + ", ".join(n.split("::")[-1] for n in failed)
        terminalreporter.write_line(line)
        for nodeid, text in _details[number]:
            terminalreporter.write_line(f"    {nodeid.split('::')[-1]}: {text}")
        report["criteria"][str(number)] = {
            "verdict": verdict, "checks": len(runs), "failed": failed,
            "notes": [f"{n.split('::')[-1]}: {t}" for n, t in _details[number]],
        }
    if len(_outcomes) >= 8:
        REPORT_PATH.write_text(json.dumps(report, indent=2) + "\n")
