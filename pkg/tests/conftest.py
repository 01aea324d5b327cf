import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _RESULTS[n] = ("PASS" if report.passed else "FAIL", item.name, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, name, detail = _RESULTS[n]
        line = f"criterion {n:>2}: {status}  {name}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
