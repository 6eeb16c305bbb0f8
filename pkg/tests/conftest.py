import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs for minutes (oracle integrations, large samples)")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
