import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance(request):
    """Attach a one-line summary to an acceptance test; printed after the run."""
    def note(number, text):
        request.node.user_properties.append(("acceptance", (number, text)))
    return note


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    for key, value in report.user_properties:
        if key == "acceptance":
            _ACCEPTANCE.append((value[0], report.outcome, value[1]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, outcome, text in sorted(_ACCEPTANCE):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {number:2d}: {text}")
