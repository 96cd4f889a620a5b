import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or report.failed:
        _CRITERIA[key] = "PASS" if report.passed and not _CRITERIA.get(key) == "FAIL" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), verdict in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"CRITERION {num:2d} {verdict}  {name.replace('_', ' ')}")
