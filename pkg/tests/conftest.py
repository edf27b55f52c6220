import pytest

# acceptance lines, keyed by criterion number
ACCEPTANCE = {}


def record(number, name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
