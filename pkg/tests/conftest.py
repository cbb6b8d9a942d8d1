import pytest

from sepconv.model import ModelConfig
from sepconv.synthetic import write_blob_dataset

# the reduced network used by the end-to-end tests
TINY = dict(alpha=0.25, resolution=32, head="binary_head")


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY, seed=0)


@pytest.fixture(scope="session")
def blob_data(tmp_path_factory):
    """200 / 40 / 50 generated images (both classes) with a manifest file outside the data directory."""
    base = tmp_path_factory.mktemp("blobs")
    manifest = write_blob_dataset(base / "data", counts=(100, 20, 25), size=32, seed=0)
    manifest.write(base / "manifest.csv")
    return base / "data", manifest, base / "manifest.csv"


# ---------------------------------------------------------------------------
# acceptance criteria: one PASS/FAIL line each in the terminal summary
# ---------------------------------------------------------------------------

_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "seconds": 0.0, "detail": ""})
    entry["seconds"] += report.duration
    if report.failed:
        entry["passed"] = False
        entry["detail"] = str(call.excinfo.value).splitlines()[0] if call.excinfo else report.when


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["passed"] else "FAIL"
        line = f"criterion {number}: {status}  {e['title']}  ({e['seconds']:.1f}s)"
        if e["detail"]:
            line += f"  -- {e['detail']}"
        terminalreporter.write_line(line)
