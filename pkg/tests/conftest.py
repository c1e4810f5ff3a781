import pytest

_outcomes: dict[int, tuple[str, list[bool]]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    passed = call.excinfo is None
    if call.when == "setup" and passed:
        return
    if call.when == "teardown" and passed:
        return
    _outcomes.setdefault(number, (text, []))[1].append(passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        text, results = _outcomes[number]
        verdict = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {text}")


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path
