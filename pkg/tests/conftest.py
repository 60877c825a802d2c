import time

import pytest

ACCEPTANCE_RESULTS: dict[str, tuple[str, float]] = {}


@pytest.fixture
def record_criterion(request):
    """Record one acceptance criterion's outcome for the terminal summary."""
    label = {"value": None}
    start = time.time()

    def _set(name: str):
        label["value"] = name

    yield _set
    if label["value"] is not None:
        rep = getattr(request.node, "_acceptance_failed", False)
        ACCEPTANCE_RESULTS[label["value"]] = (
            "FAIL" if rep else "PASS",
            time.time() - start,
        )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and rep.failed:
        item._acceptance_failed = True


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, (status, seconds) in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{status}  {name}  ({seconds:.1f}s)")
