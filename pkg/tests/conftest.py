import numpy as np
import pytest

from dmmg.graph import build_skeleton_graph
from dmmg.skeleton import SyntheticConfig, default_bones, generate_synthetic_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def body_graph():
    return build_skeleton_graph(11, default_bones(11))


@pytest.fixture(scope="session")
def tiny_data():
    """3 classes, 6 sequences each (4 train / 2 test), 11 joints, 8 frames."""
    return generate_synthetic_dataset(SyntheticConfig(num_classes=3, sequences_per_class=6, frames=8))


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def verdicts(request):
    """criterion number -> PASS/FAIL line, printed at the end of the run."""
    return request.config.stash.setdefault(_VERDICTS, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
