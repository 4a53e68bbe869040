import numpy as np
import pytest

from acoustic_screen.audio import DatasetManifest
from acoustic_screen.synth import synth_data


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """30 synthetic clips (10 per task, balanced labels)."""
    out = tmp_path_factory.mktemp("small")
    synth_data(30, 5, out)
    return DatasetManifest.from_csv(out / "manifest.csv")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
