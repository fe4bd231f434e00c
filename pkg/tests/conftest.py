import numpy as np
import pytest

from dscatter.spectral import Grid, SpectralField

ACCEPTANCE_LINES = []


def record_criterion(name: str, passed: bool, detail: str) -> str:
    line = f"{name} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid1():
    return Grid(1, 256, 40.0)


@pytest.fixture
def grid2():
    return Grid(2, 32, 16.0)


@pytest.fixture
def grid3():
    return Grid(3, 16, 12.0)


def smooth_random_field(grid, rng, components=1, width=1.0):
    noise = rng.normal(size=(components,) + grid.shape) + 1j * rng.normal(size=(components,) + grid.shape)
    data = grid.ifft(grid.fft(noise) * np.exp(-width * grid.xi2))
    return SpectralField(grid, data)
