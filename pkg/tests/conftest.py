import numpy as np
import pytest

from rirforge.scene import Scene, SurfaceMaterial


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def uniform_scene(dims, src, rcv, alpha, scattering=0.1, **kw):
    return Scene(dims, src, rcv, (SurfaceMaterial.uniform(alpha, scattering),) * 6, **kw)


# one PASS/FAIL line per acceptance criterion, collected from test outcomes
ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")
    config.stash[ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when == "teardown" or (report.when == "setup" and report.passed):
        return
    number, title = mark.args
    detail = dict(report.user_properties).get("detail", "")
    if report.failed:
        detail = (detail + "; " if detail else "") + str(call.excinfo.value).splitlines()[0][:120]
    verdict = "PASS" if report.passed else "FAIL"
    line = f"{verdict}  {number:2d}. {title}" + (f" ({detail})" if detail else "")
    item.config.stash[ACCEPTANCE][number] = line


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
