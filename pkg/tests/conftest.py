import pytest

#: criterion number -> (passed, one-line detail, extra report lines); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def record_acceptance(number: int, passed: bool, detail: str, extra=()) -> None:
    ACCEPTANCE[number] = (bool(passed), detail, list(extra))
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    for line in extra:
        print(f"    {line}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail, extra = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        for line in extra:
            terminalreporter.write_line(f"    {line}")


@pytest.fixture
def acceptance():
    return record_acceptance
