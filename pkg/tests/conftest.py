from __future__ import annotations

from hypothesis import settings

settings.register_profile("default", derandomize=True, deadline=None)
# randomized soak runs: pytest --hypothesis-profile=soak
settings.register_profile("soak", deadline=None, max_examples=500)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
