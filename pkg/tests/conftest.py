import pytest

_ACCEPTANCE = {}


@pytest.fixture
def acceptance_log():
    """Collects one summary line per acceptance criterion."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[key])
