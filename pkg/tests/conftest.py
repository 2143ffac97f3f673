import numpy as np
import pytest

from tvbeta.network import DynamicNetwork


def random_network(rng, n, N, window=(0.0, 1.0), density=0.5):
    A = (rng.random((N, n, n)) < density).astype(np.uint8)
    A[:, np.arange(n), np.arange(n)] = 0
    times = np.sort(rng.uniform(*window, size=N))
    return DynamicNetwork(A, times, window)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def planted_bundles(n_per=10, K=4, spread=0.05, seed=0, grid_size=41):
    """Trajectory whose sender curves form ``K`` bundles around distinct shapes.

    Each curve is its bundle's shape plus independent noise at every grid
    time, so members of a bundle are roughly equidistant from each other.
    """
    from tvbeta.network import ParamTrajectory

    r = np.random.default_rng(seed)
    grid = np.linspace(0.1, 0.9, grid_size)
    shapes = [np.sin(2 * np.pi * grid), 2 * grid, -1.5 + 0 * grid, np.cos(3 * grid) + 1.5][:K]
    n = n_per * K
    alpha = np.empty((grid.size, n))
    labels = np.repeat(np.arange(K), n_per)
    for i in range(n):
        alpha[:, i] = shapes[labels[i]] + spread * r.normal(size=grid.size)
    beta = alpha[:, : n - 1] - alpha[:, [n - 1]]
    return ParamTrajectory(grid, np.hstack([alpha, beta])), labels


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
