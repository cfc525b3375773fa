import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lrwbins.data_files import load_named
from lrwbins.dataset import split
from lrwbins.gbdt import GbdtParams, train_gbdt
from lrwbins.synthetic import make_dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def synth():
    """Small synthetic dataset split 70/15/15."""
    return split(make_dataset(6000, seed=3), seed=0)


@pytest.fixture(scope="session")
def synth_gbdt(synth):
    tr, _, _ = synth
    return train_gbdt(tr, GbdtParams(num_trees=30, max_depth=4))


@pytest.fixture(scope="session")
def aci():
    d = load_named("adult")
    if d is None:
        pytest.skip("adult.csv not available")
    return d


def write_csv(path, header, rows):
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, echoed after the run whatever the outcome
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
