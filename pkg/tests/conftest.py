import contextlib

import pytest
from hypothesis import settings

# timings are irrelevant here and the single-CPU box is often busy
settings.register_profile("default", deadline=None)
settings.load_profile("default")

_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    """``with criterion(n, title) as note:`` records PASS unless the body raises."""

    @contextlib.contextmanager
    def _ctx(number: int, title: str):
        details: list = []
        try:
            yield details.append
        except BaseException:
            _record(number, title, False, details)
            raise
        _record(number, title, True, details)

    return _ctx


def _record(number, title, ok, details):
    line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
    if details:
        line += "  [" + "; ".join(details) + "]"
    _ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
