import numpy as np
import pytest

from coarse_loftr.dataio import scan_dataset
from coarse_loftr.synthetic import generate_synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Three scenes of 64x64 views; returns (root, scenes, descriptors)."""
    root = tmp_path_factory.mktemp("synth")
    scenes = generate_synthetic_dataset(root, 3, (64, 64), seed=3)
    return root, scenes, scan_dataset(root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
