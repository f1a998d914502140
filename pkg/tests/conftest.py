from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parent.parent
FETCH_WATER = ROOT / "scenarios" / "fetch_water" / "scenario.yaml"
GOLDEN = Path(__file__).parent / "golden" / "fetch_water.jsonl"

_criteria: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion check")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            label, title = m.args
            _criteria.setdefault(label, {"title": title, "outcomes": []})


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    label = _labels.get(report.nodeid)
    if label is not None:
        _criteria[label]["outcomes"].append(report.outcome)


_labels: dict[str, str] = {}


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        _labels[item.nodeid] = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")

    def order(label):
        return int(label[2:]) if label[2:].isdigit() else 999

    for label in sorted(_criteria, key=order):
        info = _criteria[label]
        outcomes = info["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"{status} {label}: {info['title']} ({len(outcomes)} checks)")
