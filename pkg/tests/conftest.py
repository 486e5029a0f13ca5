import time

import pytest

ACCEPTANCE_LINES: list[str] = []


class AcceptanceLog:
    """Collects one PASS/FAIL line per criterion; lines are echoed in the terminal summary."""

    def __init__(self):
        self.start = time.perf_counter()

    def record(self, number: int, ok: bool, detail: str, budget_s: float | None = None,
               setup_s: float = 0.0) -> bool:
        elapsed = time.perf_counter() - self.start + setup_s
        timing = f" [{elapsed:.1f}s" + (f" / budget {budget_s:.0f}s]" if budget_s else "]")
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}{timing}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok


@pytest.fixture
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
