import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "duration": 0.0, "measured": ""})
    entry["ok"] &= rep.passed
    entry["duration"] += rep.duration
    entry["measured"] = "; ".join(str(v) for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] else "FAIL"
        tr.write_line(f"{status} {number:2d} {e['title']} [{e['duration']:.1f}s] {e['measured']}")
    passed = sum(e["ok"] for e in _CRITERIA.values())
    tr.write_line(f"{passed}/{len(_CRITERIA)} criteria passed")
