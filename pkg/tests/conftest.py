import sys
from pathlib import Path

# lets test modules share helpers via ``from conftest import ...``
sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS = []


def record(line: str):
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
