from pathlib import Path

from powercap.telemetry import JobRecord, StatSummary

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"


def flat_summary(value: float) -> StatSummary:
    return StatSummary(value, 0.0, value, value, value, value, value, value, value)


def make_record(job_id, capped, y, x=(), runtime=60.0, outcome="power"):
    """A record whose outcome mean is ``y`` and whose covariates are ``x``.

    ``x`` fills ``utilization.mean`` first, then ``runtime``; everything else
    is flat so matching on those fields sees exactly the values given.
    """
    x = tuple(x)
    util = x[0] if len(x) > 0 else 50.0
    runtime = x[1] if len(x) > 1 else runtime
    fields = {"utilization": flat_summary(util), "temperature": flat_summary(40.0), "power": flat_summary(100.0)}
    fields[outcome] = flat_summary(y)
    return JobRecord(job_id, bool(capped), runtime, **fields)


ACCEPTANCE_LINES: list[str] = []


def acceptance_line(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} :: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
