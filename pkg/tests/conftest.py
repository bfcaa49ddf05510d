import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): primary acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed:
        message = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        detail = (detail + "; " if detail else "") + message.splitlines()[0][:160]
    _RESULTS[number] = (title, rep.passed and rep.when == "call", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, detail = _RESULTS[number]
        terminalreporter.write_line(f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
