import re

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_results: dict = {}


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    details = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    if report.when == "call" or report.outcome != "passed":
        previous = _results.get(number)
        # a setup/teardown failure overrides a passing call
        if previous is None or previous[1] == "PASS":
            status = "PASS" if report.outcome == "passed" else ("SKIP" if report.outcome == "skipped" else "FAIL")
            _results[number] = (match.group(2).replace("_", " "), status, details or (previous or ("", "", ""))[2])


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        name, status, details = _results[number]
        line = f"criterion {number}: {status}  {name}"
        terminalreporter.write_line(line + (f"  [{details}]" if details else ""))
