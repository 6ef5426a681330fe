import pytest

_CRITERIA = {}   # nodeid -> (number, title)
_OUTCOMES = {}   # number -> list of bool


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            _CRITERIA[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    number = _CRITERIA[report.nodeid][0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _OUTCOMES.setdefault(number, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    titles = {num: title for num, title in _CRITERIA.values()}
    for number in sorted(_OUTCOMES):
        verdict = "PASS" if all(_OUTCOMES[number]) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {titles[number]}")
