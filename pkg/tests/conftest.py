import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        note = getattr(item, "criterion_note", "")
        _criteria[number] = (title, report.outcome, note)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome, note = _criteria[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"{status} criterion {number:2d}: {title}"
        terminalreporter.write_line(f"{line} ({note})" if note else line)
