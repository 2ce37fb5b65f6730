import numpy as np
import pytest

from ascnet.data import SyntheticSpec, generate_synthetic
from ascnet.model import ModelConfig, build

TINY = ModelConfig(n_levels=4, feat_dim=8, hidden=6, n_classes=3, precision="float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_net(rng):
    return build(TINY, rng)


@pytest.fixture(scope="session")
def small_data():
    spec = SyntheticSpec(n_classes=3, n_levels=4, feat_dim=8, samples_per_class=10,
                         ambiguity_pairs=((0, 1),), seed=7)
    return generate_synthetic(spec)


_criteria: dict[int, tuple[str, bool, str]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or (report.when != "call" and report.passed):
        return
    number, text = marker
    detail = dict(report.user_properties).get("detail", "")
    _criteria[number] = (text, report.passed, detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        text, passed, detail = _criteria[number]
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {text}{suffix}")
