"""Suite-wide plumbing: acceptance verdict lines.

Acceptance tests record one ``[ACCEPT] criterion N ...`` line each via the
``accept`` fixture; the lines are echoed immediately and replayed as a block
in the terminal summary so a full run ends with a compact scoreboard.
"""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def accept():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    del exitstatus, config
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
