import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record a criterion outcome; the lines are echoed in the terminal summary."""
    store = request.config.stash.setdefault(_RESULTS, [])

    def record(number, title, ok, detail=""):
        line = f"acceptance #{number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        store.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(results):
        terminalreporter.write_line(line)
