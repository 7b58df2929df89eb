import re

import pytest

_DETAILS: dict = {}
_OUTCOMES: dict = {}


@pytest.fixture
def criterion(request):
    """Callable recording the measured values of an acceptance criterion."""
    name = request.node.name

    def record(**values):
        _DETAILS.setdefault(name, {}).update(values)

    return record


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _OUTCOMES[report.nodeid.split("::")[-1]] = report.outcome


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_OUTCOMES):
        m = re.match(r"test_criterion_(\d+)_(\w+)", name)
        label = f"criterion {int(m.group(1)):2d} ({m.group(2)})" if m else name
        status = "PASS" if _OUTCOMES[name] == "passed" else "FAIL"
        extra = "  ".join(f"{k}={_fmt(v)}" for k, v in _DETAILS.get(name, {}).items())
        terminalreporter.write_line(f"{status}  {label}  {extra}")
