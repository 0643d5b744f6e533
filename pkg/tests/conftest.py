import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

FIXTURE = HERE / "data" / "fixture"
GOLDEN = HERE / "golden"


@pytest.fixture
def fixture_dir():
    return FIXTURE


@pytest.fixture
def crime_question():
    from misalign.survey import QuestionSpec

    return QuestionSpec(
        "SAFECRIME_W26",
        ("Very safe", "Somewhat safe", "Not too safe", "Not at all safe", "Refused"),
        "How safe, if at all, would you say your local community is from crime? Would you say it is",
        refused_index=4,
    )


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, after the normal report."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when == "call" and "criterion" in props:
                lines.append((props["criterion"], outcome, props.get("detail", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(lines):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
