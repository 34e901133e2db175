import numpy as np
import pytest

from poirec.config import RunConfig
from poirec.data import CheckIn, Trajectory


def make_traj(poi_ids, user="u1", categories=None, t0=0.0, step=3600.0,
              coords=None):
    """Trajectory fixture: synthetic timestamps, grid coordinates."""
    checkins = []
    for i, p in enumerate(poi_ids):
        cat = categories[p] if categories else f"cat_{p}"
        lat, lon = coords[p] if coords else (10.0 + 0.01 * (hash(p) % 7), 20.0)
        checkins.append(CheckIn(user, p, cat, t0 + i * step, lat, lon))
    return Trajectory(user, checkins)


@pytest.fixture
def tiny_config():
    return RunConfig(d=8, t_max=20, m_bins=4, spd_cap=5, degree_buckets=4,
                     batch_size=8, epochs=2, n_neighbors=5, walks_per_node=2,
                     walk_len=8, n2v_epochs=1, correlation_top=10, patience=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one "CRITERION n: PASS/FAIL" line per acceptance test, printed after the
# run so pytest's output capture cannot swallow them
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
