import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# (number, title, verdict, detail) lines filled in by test_acceptance
ACCEPTANCE: list[tuple[int, str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{verdict} criterion {num:>2} {title}: {detail}")
