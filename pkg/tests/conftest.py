from pathlib import Path

import pytest

from memevilt.model import profile_config

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def mimic_manifest():
    return FIXTURES / "mimic_like.jsonl"


@pytest.fixture
def desk_cfg():
    return profile_config("desk", vocab_size=1000)


@pytest.fixture
def tiny_cfg():
    """A very small config for fast model-level tests."""
    return profile_config("desk", vocab_size=50, hidden_dim=16, num_layers=1, num_heads=2,
                          patch_size=8, image_size=16, max_text_len=6)


# acceptance criteria report: one pass/fail line per criterion

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "seconds": 0.0, "ran": False})
    item.user_properties.append(("criterion", number))
    entry["seconds"] += call.duration
    if call.when == "call":
        entry["ran"] = True
    if call.excinfo is not None:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']}  ({e['seconds']:.1f}s)")
