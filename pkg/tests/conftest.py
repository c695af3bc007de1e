import numpy as np
import pytest

from mpnet_ofdm.signal_core import (
    AntennaGains,
    ImpairmentSpec,
    SystemConfig,
    build_delay_grid,
    build_dictionary,
    build_nominal_grid,
    impaired_system,
)

XI_PPM = 40.0
SIGMA2_G = 0.09


@pytest.fixture(scope="session")
def cfg():
    return SystemConfig()


@pytest.fixture(scope="session")
def delays(cfg):
    return build_delay_grid(cfg, 990, 4)


@pytest.fixture(scope="session")
def nominal_dict(cfg, delays):
    return build_dictionary(build_nominal_grid(cfg), AntennaGains.flat(cfg.n_subcarriers), delays)


@pytest.fixture(scope="session")
def real_system(cfg):
    rng = np.random.default_rng(1234)
    return impaired_system(cfg, ImpairmentSpec(XI_PPM, 0.0, SIGMA2_G), rng)


@pytest.fixture(scope="session")
def real_dict(real_system, delays):
    grid, gains = real_system
    return build_dictionary(grid, gains, delays)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
