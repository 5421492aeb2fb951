import numpy as np
import pytest
import scipy.io

from sdalr.signals import JNU_DOMAINS, JNU_STATES, PU_CODES, PU_DOMAINS


def write_pu_mat(path, n_points, seed, channel="vibration_1"):
    """Write a file shaped like a Paderborn measurement: struct with a Y channel array."""
    rng = np.random.default_rng(seed)
    dt = [("Name", "O"), ("Type", "O"), ("Data", "O")]
    Y = np.zeros((1, 3), dtype=dt)
    Y[0, 0] = ("force", "raw", rng.normal(size=(1, 50)))
    Y[0, 1] = ("phase_current_1", "raw", "not numeric")
    Y[0, 2] = (channel, "raw", rng.normal(size=(1, n_points)))
    rec = np.zeros((1, 1), dtype=[("Y", "O"), ("Info", "O")])
    rec[0, 0] = (Y, "synthetic")
    scipy.io.savemat(path, {path.stem: rec})


@pytest.fixture
def pu_root(tmp_path):
    """Two measurements per bearing for every PU domain; 3 windows of 64 per file."""
    root = tmp_path / "pu"
    for i, code in enumerate(PU_CODES):
        d = root / code
        d.mkdir(parents=True)
        for j, cond in enumerate(PU_DOMAINS.values()):
            for k in (1, 2):
                write_pu_mat(d / f"{cond}_{code}_{k}.mat", 3 * 64 + 10, seed=100 * i + 10 * j + k)
    return root


@pytest.fixture
def jnu_root(tmp_path):
    root = tmp_path / "jnu"
    root.mkdir()
    rng = np.random.default_rng(0)
    for state in JNU_STATES:
        for speed in JNU_DOMAINS.values():
            np.savetxt(root / f"{state}_{speed}.csv", rng.normal(size=500))
    return root


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
