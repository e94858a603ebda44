import contextlib
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


class _Record:
    detail = ""


@pytest.fixture
def criterion():
    """Context manager recording a PASS/FAIL line for one acceptance criterion."""

    @contextlib.contextmanager
    def run(number, title):
        rec = _Record()
        try:
            yield rec
        except BaseException as exc:
            _RESULTS[number] = ("FAIL", title, rec.detail or repr(exc))
            print(f"criterion {number:2d} FAIL  {title} | {rec.detail or exc!r}")
            raise
        _RESULTS[number] = ("PASS", title, rec.detail)
        print(f"criterion {number:2d} PASS  {title} | {rec.detail}")

    return run


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, title, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title} | {detail}")
