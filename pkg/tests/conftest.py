import numpy as np
import pytest

from qlsch.field_core import GridSpec, SpaceTimeField, SpatialField, fft, ifft


def band_limited(grid: GridSpec, rng, frac: float = 0.5, m: int | None = None) -> np.ndarray:
    """Random complex array with spectrum inside |xi|_inf <= frac * Nyquist."""
    m = grid.m if m is None else m
    shape = (m, *grid.shape)
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mask = np.ones(grid.shape, dtype=bool)
    for k in grid.wavenumbers():
        mask &= np.abs(k) <= frac * grid.nyquist
    return ifft(fft(raw, grid.d) * mask, grid.d)


def random_spatial(grid, seed=0, frac=0.5) -> SpatialField:
    return SpatialField(grid, band_limited(grid, np.random.default_rng(seed), frac))


def random_spacetime(grid, seed=0, frac=0.5) -> SpaceTimeField:
    rng = np.random.default_rng(seed)
    return SpaceTimeField(grid, np.stack([band_limited(grid, rng, frac) for _ in range(grid.M)]))


def rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria record one line each; printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
