import sys
from pathlib import Path

import pytest

from edgesched.workload import ModelProfile

sys.path.insert(0, str(Path(__file__).parent))

_node_criterion: dict[str, int] = {}
_status: dict[int, bool] = {}
_details: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by a test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _node_criterion[item.nodeid] = int(mark.args[0])


def pytest_runtest_logreport(report):
    n = _node_criterion.get(report.nodeid)
    if n is None:
        return
    if report.when == "call" or report.failed:
        _status[n] = _status.get(n, True) and report.passed


@pytest.fixture
def note(request):
    """Attach a one-line measurement to the test's criterion summary line."""
    mark = request.node.get_closest_marker("criterion")

    def add(text: str):
        if mark is not None:
            _details.setdefault(int(mark.args[0]), []).append(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if not _status:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_status):
        detail = "; ".join(_details.get(n, []))
        line = f"criterion {n}: {'PASS' if _status[n] else 'FAIL'}"
        terminalreporter.write_line(f"{line}  {detail}" if detail else line)


@pytest.fixture
def res_profile():
    return ModelProfile("res", slo=58.0, base_latency=9.0, per_item_cost=2.5, weight_mem=90.0,
                        act_mem_per_item=12.0, input_dim=150528)


@pytest.fixture
def small_profile():
    return ModelProfile("m", slo=100.0, base_latency=10.0, per_item_cost=2.0, weight_mem=200.0,
                        act_mem_per_item=10.0, input_dim=16, input_type="text")
