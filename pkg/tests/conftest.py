import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dgsqp.track import bundled_track  # noqa: E402
from dgsqp.vehicle import VehicleParams  # noqa: E402


@pytest.fixture(scope="session")
def l_track():
    return bundled_track("l_track")


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
