"""Pytest hooks: one-line verdict per end-to-end acceptance check."""
from __future__ import annotations

_verdicts: list[tuple[str, bool]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    if report.when == "call":
        _verdicts.append((name, report.outcome == "passed"))
    elif report.when == "setup" and report.outcome == "failed":
        _verdicts.append((name, False))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _verdicts:
        return
    terminalreporter.write_sep("=", "acceptance checks")
    for name, ok in _verdicts:
        number, _, words = name.removeprefix("test_").partition("_")
        label = words.replace("_", " ") if words else name
        terminalreporter.write_line(
            f"{int(number)}. {label}: {'PASS' if ok else 'FAIL'}"
        )
