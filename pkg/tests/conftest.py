"""Acceptance reporting: one pass/fail line per criterion at the end of the run."""
import pytest

_OUTCOMES = {}
_DETAILS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n = mark.args[0]
    ok = rep.passed and _OUTCOMES.get(n, True)
    if rep.skipped:
        ok = False
    _OUTCOMES[n] = ok
    for key, value in item.user_properties:
        if key == "detail":
            _DETAILS.setdefault(n, []).append(value)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        detail = "; ".join(dict.fromkeys(_DETAILS.get(n, [])))
        status = "PASS" if _OUTCOMES[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}" + (f" ({detail})" if detail else ""))
