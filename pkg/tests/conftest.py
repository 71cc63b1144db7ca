import pytest

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.fixture
def report(request):
    """Attach a one-line detail string to the current acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0]

    def note(text):
        _results.setdefault(number, {})["detail"] = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _results.setdefault(marker.args[0], {})
    entry["title"] = marker.args[1]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        entry["status"] = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        r = _results[number]
        line = f"criterion {number:2d}: {r.get('status', 'NOT RUN'):4s}  {r.get('title', '')}"
        if r.get("detail"):
            line += f"  [{r['detail']}]"
        terminalreporter.write_line(line)
