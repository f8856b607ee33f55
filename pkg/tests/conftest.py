import pytest

from acceptance_log import LINES


def pytest_terminal_summary(terminalreporter):
    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(LINES, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(LINES[key])


@pytest.fixture
def record_criterion():
    def record(number, title, ok, detail):
        LINES[f"{number} {title}"] = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
        print(LINES[f"{number} {title}"])
    return record
