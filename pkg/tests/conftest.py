import contextlib

import pytest

_CRITERIA = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.details = []
        self.ok = True

    def check(self, ok, detail):
        """Record one sub-check; the criterion passes only if all do."""
        self.ok = self.ok and bool(ok)
        self.details.append(detail)
        return bool(ok)

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        return f"{status}  criterion {self.number:>2}  {self.title}: {'; '.join(self.details)}"


@pytest.fixture
def criterion():
    """Context manager that records a PASS/FAIL line for an acceptance criterion."""

    @contextlib.contextmanager
    def record(number, title):
        c = _Criterion(number, title)
        try:
            yield c
        except Exception as err:
            c.check(False, f"error: {type(err).__name__}: {err}")
            raise
        finally:
            _CRITERIA[number] = c
            print(c.line())
        assert c.ok, c.line()

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number].line())
