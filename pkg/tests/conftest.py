import json

ACCEPTANCE_LINES = []


def _summary(r):
    skip = {"id", "name", "passed", "runtime_s", "budget_s"}
    return json.dumps({k: v for k, v in r.items() if k not in skip}, default=str, sort_keys=True)


def record_acceptance(r, line):
    ACCEPTANCE_LINES.append((line, _summary(r)))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line, values in sorted(ACCEPTANCE_LINES, key=lambda x: int(x[0].split("]")[1].split()[0])):
        terminalreporter.write_line(line)
        terminalreporter.write_line(f"       {values}")
