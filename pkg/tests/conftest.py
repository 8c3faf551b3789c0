import re

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if m is None:
        return
    detail = dict(report.user_properties).get("detail", "")
    verdict = "PASS" if report.outcome == "passed" else "FAIL"
    _CRITERIA[int(m.group(1))] = (m.group(2).replace("_", " "), verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, verdict, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} {verdict}: {name}" + (f" ({detail})" if detail else ""))
