"""Collects one verdict line per acceptance criterion and prints them at the end."""

import pytest

VERDICTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return report
    n = marker.args[0]
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.when == "setup" and report.skipped:
        VERDICTS[n] = ("SKIP", str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else "")
    elif report.when == "setup" and report.failed:
        VERDICTS[n] = ("FAIL", "setup error")
    elif report.when == "call":
        if report.skipped:
            VERDICTS[n] = ("SKIP", str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else detail)
        else:
            VERDICTS[n] = ("PASS" if report.passed else "FAIL", detail)
    return report


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        status, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}" + (f"  ({detail})" if detail else ""))
