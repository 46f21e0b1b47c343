import pytest

# criterion -> (title, passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}
CRITERIA = {
    1: "Ito-identity residual",
    2: "parameter recovery and tightness",
    3: "GL oracle inequality",
    4: "KDE correctness",
    5: "Bernstein tail shape",
    6: "moment budget",
    7: "scheme order",
    8: "determinism",
}


@pytest.fixture
def report():
    def record(criterion, passed, detail):
        ACCEPTANCE[criterion] = (CRITERIA[criterion], bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(CRITERIA):
        if c in ACCEPTANCE:
            title, ok, detail = ACCEPTANCE[c]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {c}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[----] {c}. {CRITERIA[c]}: not run")
