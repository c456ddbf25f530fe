import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlsch.errors import ConfigurationError, DimensionError, HeaderError, TruncatedPayloadError
from qlsch.field_core import (
    HEADER_SIZE,
    GridSpec,
    SpaceTimeField,
    SpatialField,
    coefficient_norm,
    derivative,
    field_io,
    inner_product,
    l2_norm,
    parse_field,
    product,
    read_field,
    spectral_transform,
    write_field,
)
from qlsch.linear_prop import apply_A

from conftest import band_limited, random_spacetime, random_spatial, rel

G1 = GridSpec(d=1, N=256, L=32.0, M=3)
G2 = GridSpec(d=2, N=32, L=8.0, M=3)


@pytest.mark.parametrize("kw", [dict(N=100), dict(N=8), dict(M=1), dict(L=0.0), dict(d=3), dict(m=0)])
def test_grid_rejects_bad_parameters(kw):
    with pytest.raises(ConfigurationError):
        GridSpec(**kw)


def test_j_max_keeps_two_band_margin():
    g = GridSpec(d=1, N=1024, L=32.0)
    # nyquist = 100.5, log2 = 6.65
    assert g.j_max == 4
    assert GridSpec(d=1, N=512, L=8.0).j_max == 5


def test_constant_transforms_to_unit_zero_mode():
    c = spectral_transform(SpatialField(G1, np.ones((1, 256))))
    assert c.values[0, 0] == pytest.approx(1.0)
    assert np.max(np.abs(c.values[0, 1:])) < 1e-15


@pytest.mark.parametrize("grid", [G1, G2])
def test_plane_wave_is_single_coefficient(grid):
    n = 3
    xi = 2 * np.pi * n / grid.L
    vals = np.exp(1j * xi * grid.coords()[0])
    c = spectral_transform(SpatialField(grid, vals[None])).values[0].copy()
    idx = (n,) + (0,) * (grid.d - 1)
    assert abs(c[idx] - 1.0) < 1e-13
    c[idx] = 0
    assert np.max(np.abs(c)) < 1e-13


@pytest.mark.parametrize("grid", [G1, G2])
def test_round_trip_and_parseval(grid):
    f = random_spatial(grid, seed=5, frac=1.0)
    c = spectral_transform(f)
    back = spectral_transform(c, "inverse")
    assert rel(back.values, f.values) <= 1e-13
    assert coefficient_norm(c) == pytest.approx(l2_norm(f), rel=1e-12)


def test_derivative_of_constant_and_plane_wave():
    assert np.max(np.abs(derivative(SpatialField(G1, np.ones((1, 256)))).values)) < 1e-14
    xi = 2 * np.pi * 5 / G1.L
    f = SpatialField(G1, np.exp(1j * xi * G1.coords()[0])[None])
    assert np.max(np.abs(derivative(f).values - 1j * xi * f.values)) < 1e-12


def test_derivative_symbol_on_every_mode():
    g = GridSpec(d=2, N=16, L=4.0, M=2)
    k1, k2 = g.wavenumbers()
    x1, x2 = g.coords()
    for a in range(g.N):
        for b in range(g.N):
            if abs(k1[a, b]) == g.nyquist or abs(k2[a, b]) == g.nyquist:
                continue
            e = np.exp(1j * (k1[a, b] * x1 + k2[a, b] * x2))[None]
            d2 = derivative(SpatialField(g, e), 2).values
            assert np.max(np.abs(d2 - 1j * k2[a, b] * e)) < 1e-11


def test_leibniz_on_band_limited_products(rng):
    f = band_limited(G1, rng, 0.3)
    g = band_limited(G1, rng, 0.3)
    lhs = derivative(SpatialField(G1, f * g)).values
    rhs = f * derivative(SpatialField(G1, g)).values + g * derivative(SpatialField(G1, f)).values
    assert rel(lhs, rhs) <= 1e-10


@pytest.mark.parametrize("grid", [G1, G2])
def test_integration_by_parts(grid):
    f, g = random_spatial(grid, 1), random_spatial(grid, 2)
    for ax in range(1, grid.d + 1):
        a = inner_product(f, derivative(g, ax))
        b = -inner_product(derivative(f, ax), g)
        assert abs(a - b) <= 1e-10 * abs(a)


def test_inner_product_orthogonality_and_positivity():
    x = G1.coords()[0]
    e3 = SpatialField(G1, np.exp(1j * 2 * np.pi * 3 * x / G1.L)[None])
    e4 = SpatialField(G1, np.exp(1j * 2 * np.pi * 4 * x / G1.L)[None])
    assert abs(inner_product(e3, e4)) < 1e-12
    assert inner_product(e3, e3).real == pytest.approx(G1.L)
    f = random_spatial(G1, 3)
    assert inner_product(f, 2j * f) == pytest.approx(2j * l2_norm(f) ** 2)


def test_inner_product_grid_mismatch():
    with pytest.raises(DimensionError):
        inner_product(random_spatial(G1), random_spatial(G1.with_(N=128)))


def test_A_self_adjoint_with_variable_metric():
    x = G1.coords()[0]
    g = (1.0 + 0.3 * np.cos(2 * np.pi * x / G1.L))[None, None]
    f, h = random_spatial(G1, 1), random_spatial(G1, 2)
    a = inner_product(apply_A(g, f), h)
    b = inner_product(f, apply_A(g, h))
    assert abs(a - b) <= 1e-10 * abs(a)


def test_product_is_dealiased(rng):
    f = band_limited(G1, rng, 1.0)
    p = product(G1, f, f)
    spec = np.fft.fft(p[0])
    assert np.max(np.abs(spec[~G1.dealias_mask()])) < 1e-12


def test_fields_reject_non_finite_and_bad_shape():
    with pytest.raises(DimensionError):
        SpatialField(G1, np.full((1, 256), np.nan))
    with pytest.raises(DimensionError):
        SpatialField(G1, np.zeros((2, 256)))
    with pytest.raises(DimensionError):
        SpaceTimeField(G1, np.zeros((2, 1, 256)))


def test_space_time_slices_share_grid():
    u = random_spacetime(G1, 4)
    assert len(u.slices) == G1.M
    assert all(s.grid == G1 for s in u.slices)
    assert np.array_equal(SpaceTimeField.from_slices(u.slices).values, u.values)


@pytest.mark.parametrize("grid", [G1, G2, G1.with_(m=2)])
def test_dff1_round_trip_is_bitwise(tmp_path, grid):
    f = random_spatial(grid, 7)
    u = random_spacetime(grid, 8)
    for obj in (f, u):
        p = tmp_path / "x.dff"
        field_io(p, obj, "write")
        back = field_io(p)
        assert type(back) is type(obj)
        assert back.values.tobytes() == obj.values.tobytes()


def test_dff1_file_size(tmp_path):
    g = GridSpec(d=2, N=128, L=32.0, M=2)
    p = tmp_path / "f.dff"
    write_field(p, SpatialField(g, np.zeros((1, 128, 128))))
    assert os.path.getsize(p) == 44 + 16 * 128**2
    assert HEADER_SIZE == 44


def test_dff1_payload_is_x_fastest(tmp_path):
    g = GridSpec(d=2, N=16, L=4.0, M=2)
    v = np.zeros((1, 16, 16), dtype=complex)
    v[0, 1, 0] = 1.0  # x1 index 1
    p = tmp_path / "f.dff"
    write_field(p, SpatialField(g, v))
    raw = np.frombuffer(p.read_bytes()[HEADER_SIZE:], dtype="<c16")
    assert raw[1] == 1.0


def test_dff1_errors(tmp_path):
    p = tmp_path / "f.dff"
    write_field(p, random_spatial(G1))
    data = p.read_bytes()
    with pytest.raises(HeaderError):
        parse_field(b"XFF1" + data[4:])
    with pytest.raises(TruncatedPayloadError):
        parse_field(data[:-16])
    with pytest.raises(HeaderError):
        parse_field(data[:10])
    p.write_bytes(b"DFF2" + data[4:])
    with pytest.raises(HeaderError):
        read_field(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 9), st.sampled_from([1, 2]), st.integers(0, 2**32 - 1))
def test_parseval_property(p, d, seed):
    if d == 2 and p > 6:
        p = 6
    grid = GridSpec(d=d, N=2**p, L=float(2**p) / 4, M=2)
    f = random_spatial(grid, seed, frac=1.0)
    assert coefficient_norm(spectral_transform(f)) == pytest.approx(l2_norm(f), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_inner_product_sesquilinear(seed, c):
    f, g = random_spatial(G1, seed), random_spatial(G1, seed + 1)
    assert inner_product(c * f, g) == pytest.approx(np.conj(c) * inner_product(f, g), rel=1e-9, abs=1e-9)
    assert inner_product(f, c * g) == pytest.approx(c * inner_product(f, g), rel=1e-9, abs=1e-9)
