import pytest

# one line per acceptance criterion, echoed in the terminal summary
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    def record(criterion: str, ok: bool, detail: str, soft: bool = False) -> bool:
        tag = "PASS" if ok else ("FAIL (soft)" if soft else "FAIL")
        line = f"[{criterion}] {tag}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok
    return record
