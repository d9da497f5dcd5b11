import pytest

# (number, title, passed, detail) appended by the acceptance suite
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{num:2d}] {title}: {detail}")


@pytest.fixture
def record():
    def _record(num: int, title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} [{num:2d}] {title}: {detail}"
        print(line)
        ACCEPTANCE.append((num, title, bool(ok), detail))

    return _record
