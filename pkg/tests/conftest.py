import test_acceptance


def pytest_terminal_summary(terminalreporter):
    lines = test_acceptance.RESULTS
    if not lines:
        return
    terminalreporter.section("acceptance")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
