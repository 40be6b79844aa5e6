import numpy as np
import pytest

from anra.field import FrameStack, GridSpec
from anra.simulator import FWHM_TO_SIGMA, ScenarioConfig, simulate

REF_H = 10.0 / 224
REF_DT = 1.0 / 27


def heat_kernel(grid, a, t, amplitude=3.8, sigma0=None, center=None):
    """Closed-form free-space solution for a Gaussian initial field."""
    if sigma0 is None:
        sigma0 = 50 * grid.dx * FWHM_TO_SIGMA
    ci, cj = center if center is not None else ((grid.height - 1) / 2, (grid.width - 1) / 2)
    y = (np.arange(grid.height) - ci) * grid.dy
    x = (np.arange(grid.width) - cj) * grid.dx
    r2 = y[:, None] ** 2 + x[None, :] ** 2
    s2 = sigma0**2 + 2 * a * t
    return amplitude * sigma0**2 / s2 * np.exp(-r2 / (2 * s2))


def analytic_stack(grid=None, a=0.2, n_frames=28, **kw):
    grid = grid or GridSpec(224, 224, REF_H, REF_H, REF_DT)
    vals = np.stack([heat_kernel(grid, a, k * grid.dt, **kw) for k in range(n_frames)])
    return FrameStack(grid, vals)


@pytest.fixture(scope="session")
def analytic():
    return analytic_stack()


@pytest.fixture(scope="session")
def ref_noisy():
    return simulate(ScenarioConfig.reference(seed=0))


@pytest.fixture(scope="session")
def ref_clean():
    return simulate(ScenarioConfig.reference(seed=0, noise_sigma=0.0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
