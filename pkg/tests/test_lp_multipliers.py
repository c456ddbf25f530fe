import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlsch.dyadic_spaces import cube_partition
from qlsch.errors import BandOverflowError, ValidationError
from qlsch.field_core import GridSpec, SpatialField, fft, ifft, l2_norm
from qlsch.lp_multipliers import (
    BumpProfile,
    DyadicBand,
    WedgeSystem,
    band,
    band_symbol,
    dump_profiles,
    freq_localized_cutoff,
    phi,
    phi0,
    project,
    smooth_step,
    wedge_project,
    widened_symbol,
)

from conftest import random_spacetime, random_spatial, rel

G1 = GridSpec(d=1, N=1024, L=32.0, M=3)
G2 = GridSpec(d=2, N=128, L=16.0, M=3)


def test_phi0_plateaus_and_monotone():
    r = np.linspace(0, 3, 3001)
    p = phi0(r)
    assert np.all(p[r <= 1] == 1.0)
    assert np.all(p[r >= 2] == 0.0)
    assert np.all(np.diff(p) <= 0)
    prof = BumpProfile()
    assert (prof.enter, prof.leave) == (1.0, 2.0)


def test_smooth_step_symmetry():
    t = np.linspace(-0.5, 1.5, 401)
    assert np.max(np.abs(smooth_step(t) + smooth_step(1 - t) - 1)) < 1e-15


def test_partition_of_unity_on_radial_samples():
    r = np.linspace(0, 2.0**12, 200001)
    total = sum(phi(r, j) for j in range(14))
    assert np.max(np.abs(total - 1)) <= 1e-14
    assert all(np.all(phi(r, j) >= 0) for j in range(14))


@pytest.mark.parametrize("j", range(1, 6))
def test_band_profile_support_and_peak(j):
    r = np.linspace(0, 2.0 ** (j + 2), 40001)
    p = phi(r, j)
    assert np.all(p[(r <= 2.0 ** (j - 1)) | (r >= 2.0 ** (j + 1))] == 0)
    assert phi(2.0**j, j) == 1.0


def test_plane_wave_at_band_center_unchanged():
    # L = 8 pi puts |xi| = 2^j on the lattice for j >= 0
    g = GridSpec(d=1, N=1024, L=8 * np.pi, M=2)
    x = g.coords()[0]
    for j in range(g.j_max + 1):
        f = SpatialField(g, np.exp(1j * 2.0**j * x)[None])
        assert np.max(np.abs(band(f, j).values - f.values)) < 1e-13


@pytest.mark.parametrize("grid", [G1, G2])
def test_reconstruction_and_disjointness(grid):
    # spectrum inside the resolvable bands
    f = random_spatial(grid, 11, frac=2.0**grid.j_max / grid.nyquist / np.sqrt(grid.d))
    total = sum(band(f, j).values for j in range(grid.j_max + 1))
    assert rel(total, f.values) <= 1e-12
    for j in range(grid.j_max - 2):
        assert l2_norm(band(band(f, j + 3), j)) <= 1e-12 * l2_norm(f)


def test_band_overflow():
    with pytest.raises(BandOverflowError):
        band(random_spatial(G1), G1.j_max + 1)


def test_band_mass_outside_annulus():
    f = random_spatial(G1, 3, frac=1.0)
    for j in range(G1.j_max + 1):
        b = project(f, "band", j)
        assert isinstance(b, DyadicBand)
        spec = np.abs(fft(b.values, 1)) ** 2
        k = G1.kabs()
        lo = 0.0 if j == 0 else 2.0 ** (j - 1)
        out = spec[..., (k < lo) | (k > 2.0 ** (j + 1))].sum()
        assert out <= 1e-12 * spec.sum()


def test_leq_geq_split():
    f = random_spatial(G1, 4)
    for n in range(G1.j_max + 1):
        lo = project(f, "leq", n).values
        hi = project(f, "geq", n + 1).values
        assert rel(lo + hi, f.values) <= 1e-13
    with pytest.raises(ValidationError):
        project(f, "sideways", 0)


def test_idempotence_defect_against_widened_band():
    f = random_spatial(G1, 5)
    for j in range(G1.j_max + 1):
        sj = band(f, j).values
        tilde = ifft(fft(f.values, 1) * widened_symbol(G1, j), 1)
        back = ifft(fft(tilde, 1) * band_symbol(G1, j), 1)
        assert np.linalg.norm(back - sj) <= 1e-12 * np.linalg.norm(f.values)


def test_translation_commutes():
    f = random_spatial(G1, 6)
    shifted = f.with_values(np.roll(f.values, 37, axis=-1))
    for j in range(G1.j_max + 1):
        a = np.roll(band(f, j).values, 37, axis=-1)
        assert np.allclose(band(shifted, j).values, a, atol=1e-14)


def test_space_time_bands_act_per_slice():
    u = random_spacetime(G1.with_(M=4), 7)
    b = band(u, 2)
    for n in range(4):
        assert np.allclose(b.values[n], band(u.slice(n), 2).values[0], atol=1e-14)


# wedges


def test_wedge_partition_of_unity():
    ws = WedgeSystem(2)
    th = np.linspace(0, 2 * np.pi, 3601)
    ks = (np.cos(th), np.sin(th))
    assert np.max(np.abs(ws.theta(ks, 1) + ws.theta(ks, 2) - 1)) < 1e-15
    # cone half-angle at most 60 degrees
    assert np.all(ws.theta(ks, 1)[np.abs(np.cos(th)) <= np.cos(np.radians(60))] == 0)


def test_wedge_plane_wave_along_axis():
    g = GridSpec(d=2, N=256, L=2 * np.pi * 4, M=2)
    x1, _ = g.coords()
    f = SpatialField(g, np.exp(1j * 8.0 * x1)[None])  # |xi| = 8 = 2^3
    b = project(f, "band", 3)
    w1 = wedge_project(b, 1).values
    w2 = wedge_project(b, 2).values
    assert np.max(np.abs(w1 - f.values)) < 1e-12
    assert np.sum(np.abs(w2) ** 2) <= 1e-10 * np.sum(np.abs(f.values) ** 2)


def test_wedge_reconstruction_and_energy():
    f = random_spatial(G2, 8)
    for j in range(G2.j_max + 1):
        b = project(f, "band", j)
        parts = [wedge_project(b, k) for k in (1, 2)]
        assert rel(sum(p.values for p in parts), b.values) <= 1e-12
        nbhd = ifft(fft(f.values, 2) * widened_symbol(G2, j), 2)
        assert sum(np.sum(np.abs(p.values) ** 2) for p in parts) <= 2 * np.sum(np.abs(nbhd) ** 2)


def test_wedge_d1_half_lines():
    f = random_spatial(G1, 9)
    b = project(f, "band", 3)
    pos = wedge_project(b, 1).values
    spec = fft(pos, 1)
    k = G1.wavenumbers()[0]
    assert np.max(np.abs(spec[..., k < 0])) < 1e-10
    with pytest.raises(ValidationError):
        WedgeSystem(2, half_angle=75.0)


# frequency-localized cube cutoffs


def test_freq_cutoffs_sum_to_one():
    for j in (0, 2, 4):
        part = cube_partition(G1, j)
        assert np.max(np.abs(part.chi_freq.sum(axis=0) - 1)) <= 1e-12


@pytest.mark.parametrize("j", [3, 4, 5])
def test_cutoff_keeps_band_within_two_octaves(j):
    g = GridSpec(d=1, N=2048, L=32.0, M=2)
    f = band(random_spatial(g, j, frac=1.0), j)
    out = freq_localized_cutoff(cube_partition(g, 3), 2, project(f, "band", j))
    spec = np.abs(fft(out.values, 1)) ** 2
    k = g.kabs()
    outside = spec[..., (k < 2.0 ** (j - 2)) | (k > 2.0 ** (j + 2))].sum()
    assert outside <= 1e-10 * spec.sum()


def _tail(grid, j, r):
    part = cube_partition(grid, j)
    q = part.count // 2
    x = grid.coords()[0]
    lo, hi = q * part.side, (q + 1) * part.side
    dist = np.maximum(np.maximum(lo - x, x - hi), 0.0)
    return float(np.max(np.abs(part.chi_freq[q][dist >= r])))


@pytest.mark.xfail(strict=True, reason="the prescribed phi_0 gives an S_0 kernel tail near 2e-3 at distance 12; see notes")
def test_cutoff_tail_below_1e8_at_distance_12():
    assert _tail(GridSpec(d=1, N=8192, L=512.0, M=2), 0, 12) <= 1e-8


def test_cutoff_tail_regression():
    g = GridSpec(d=1, N=8192, L=512.0, M=2)
    # measured: 1.711e-3, 2.381e-4, 6.463e-6, 7.473e-8
    pins = {12: 1.711e-3, 24: 2.381e-4, 48: 6.463e-6, 96: 7.473e-8}
    for r, v in pins.items():
        assert _tail(g, 0, r) == pytest.approx(v, rel=1e-3)


def test_dump_profiles_rows():
    r = np.linspace(0, 100, 501)
    header, rows = dump_profiles(r, 5)
    assert header[0] == "r" and header[-1] == "sum" and len(header) == 8
    assert np.max(np.abs(rows[r <= 32, -1] - 1)) < 1e-15


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1e4, allow_nan=False), st.integers(0, 12))
def test_phi_nonnegative_and_bounded(r, j):
    v = float(phi(r, j))
    assert 0.0 <= v <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 1023))
def test_projection_commutes_with_grid_shifts(seed, shift):
    f = random_spatial(G1, seed)
    j = seed % (G1.j_max + 1)
    a = band(f.with_values(np.roll(f.values, shift, axis=-1)), j).values
    b = np.roll(band(f, j).values, shift, axis=-1)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(np.max(np.abs(f.values)), 1.0)
