import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if not match:
        return
    if report.when == "call" or report.outcome != "passed":
        key = (int(match.group(1)), match.group(2).replace("_", " "))
        if report.skipped:
            status = "SKIP"
        else:
            status = "PASS" if report.passed else "FAIL"
        detail = dict(report.user_properties).get("detail", "")
        if status == "SKIP" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _CRITERIA[key] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), (status, detail) in sorted(_CRITERIA.items()):
        line = f"criterion {num:2d} {name}: {status}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
