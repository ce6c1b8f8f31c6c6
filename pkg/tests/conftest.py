import numpy as np
import pytest

from advview.scenarios import WedgeScenario, wedge_scenario

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def record_acceptance(number: int, name: str, passed: bool):
    ACCEPTANCE_RESULTS[number] = (name, "PASS" if passed else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, outcome = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number} ({name}): {outcome}")


@pytest.fixture(scope="session")
def toy() -> WedgeScenario:
    """Full-size wedge scenario used by the acceptance suite."""
    return wedge_scenario()


@pytest.fixture(scope="session")
def mini() -> WedgeScenario:
    """Cheap variant of the wedge scenario for unit tests."""
    return wedge_scenario(resolution=24, image_size=16, samples_per_ray=6)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
