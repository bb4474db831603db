import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion.

    Usage: ``with criterion(3, "Markov limit"): ...``; the line is printed at
    the end of the run whatever the outcome.
    """
    results = request.config.stash[_KEY]

    class _Recorder:
        def __call__(self, number, title):
            self.number, self.title = number, title
            return self

        def __enter__(self):
            self.notes = []
            return self

        def note(self, text):
            self.notes.append(text)

        def __exit__(self, exc_type, exc, tb):
            ok = exc_type is None
            detail = "; ".join(self.notes)
            if not ok:
                detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {exc}".splitlines()[0]
            results[self.number] = (ok, self.title, detail)
            print(f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}  {self.title}  [{detail}]")
            return False

    return _Recorder()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
