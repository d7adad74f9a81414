import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown":
        return
    number, title = mark.args
    passed, _, elapsed, details = _RESULTS.get(number, (True, title, 0.0, []))
    # fixture time (shared sweeps) counts toward the criterion that first needs it
    elapsed += rep.duration
    if rep.when == "call":
        details = details + [v for k, v in item.user_properties if k == "detail"]
    _RESULTS[number] = (passed and not rep.failed, title, elapsed, details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        passed, title, elapsed, details = _RESULTS[number]
        terminalreporter.write_line(
            f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}  ({elapsed:.1f} s)")
        for line in details:
            terminalreporter.write_line(f"               {line}")
