import numpy as np
import pytest

from xbarmap.tech import TECHNOLOGIES, CrossbarGeometry


@pytest.fixture
def taox():
    return TECHNOLOGIES["TaOx"]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_geom(rows, cols, r_line=2.0, r_access=1e3):
    return CrossbarGeometry(rows, cols, r_line, r_access, 0.5)


@pytest.fixture(scope="session")
def digits():
    from xbarmap.nn import load_digits_splits

    return load_digits_splits(0)


@pytest.fixture(scope="session")
def desk_net(digits):
    from xbarmap.nn import desk_network, train

    return train(desk_network().init(0), digits[0], 0.05, 30, 16, 0).network


def synthetic_model(tech, geom, m_first=0.8, m_last=0.7, sigma=3e-6):
    """A column model shaped like a fitted one, without running a campaign."""
    from xbarmap.errormodel import ColumnErrorModel, Fingerprint

    cols = geom.cols
    return ColumnErrorModel(np.linspace(m_first, m_last, cols), np.full(cols, 1e-5),
                            np.full(cols, sigma), Fingerprint.of(tech, geom, 0, 1))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
