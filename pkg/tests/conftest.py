from collections import defaultdict

import pytest

# criterion number -> outcomes of every test (or parameter case) marked with it
_criteria: dict[int, list[str]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    # one outcome per test: the call phase, or an earlier failing phase
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[m.args[0]].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcomes = _criteria[n]
        failed = sum(o != "passed" for o in outcomes)
        status = "PASS" if failed == 0 else f"FAIL ({failed} of {len(outcomes)} checks failed)"
        terminalreporter.write_line(f"criterion {n}: {status}")
