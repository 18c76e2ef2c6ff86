import pytest

#: (number, name, passed, detail) lines recorded by the acceptance tests
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion():
    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE.append((number, name, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {name}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {name}: {detail}")
