import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlsch.errors import ParameterError, ValidationError
from qlsch.estimate_lab import (
    ESTIMATES,
    EnsembleSpec,
    Sample,
    random_field,
    regression_slope,
    smoothing_scan,
    verify,
)
from qlsch.estimate_lab import _report
from qlsch.expr_dsl import NonlinearitySpec
from qlsch.field_core import GridSpec, SpaceTimeField, SpatialField, fft, l2_norm
from qlsch.lp_multipliers import band

G = GridSpec(d=1, N=256, L=32.0, M=17)
SMALL = EnsembleSpec(seed=3, count=2, grid=G)


# ensembles


def test_random_field_is_deterministic():
    a = random_field(SMALL, "spatial", index=1)
    b = random_field(SMALL, "spatial", index=1)
    assert a.values.tobytes() == b.values.tobytes()
    c = random_field(EnsembleSpec(seed=4, count=2, grid=G), "spatial", index=1)
    assert not np.array_equal(a.values, c.values)
    u = random_field(SMALL, index=1)
    assert isinstance(u, SpaceTimeField)
    assert np.allclose(u.values[0], a.values, atol=1e-13)


def test_spectrum_tracks_the_power_law():
    spec = EnsembleSpec(seed=3, count=1, s=1.0, grid=GridSpec(d=1, N=1024, L=32.0, M=3))
    for i in range(3):
        u = random_field(spec, "spatial", index=i)
        for j in range(spec.grid.j_max + 1):
            # measured 0.87 .. 0.99
            assert l2_norm(band(u, j)) / 2.0 ** (-j) == pytest.approx(1.0, rel=0.3)


def test_one_window_one_band_is_a_packet():
    spec = EnsembleSpec(seed=1, count=1, bump_centers=1, bands=(3,), grid=GridSpec(d=1, N=1024, L=32.0, M=2))
    u = random_field(spec, "spatial")
    dens = np.abs(u.values[0]) ** 2
    x = spec.grid.coords()[0]
    c = x[np.argmax(dens)]
    y = np.abs(np.mod(x - c + 16, 32) - 16)
    assert dens[y > 6].sum() <= 1e-6 * dens.sum()
    k = spec.grid.kabs()
    p = np.abs(fft(u.values, 1)[0]) ** 2
    assert p[(k < 4) | (k > 16)].sum() <= 1e-3 * p.sum()


def test_ensemble_validation():
    with pytest.raises(ValidationError):
        EnsembleSpec(count=0)
    with pytest.raises(ValidationError):
        EnsembleSpec(amplitude=0)
    with pytest.raises(ValidationError):
        random_field(SMALL, "surface")


# reports


@pytest.mark.parametrize("name", ESTIMATES)
def test_small_reports(name):
    rep = verify(name, SMALL)
    assert rep.name == name
    assert all(s.rhs > 0 and math.isfinite(s.ratio) for s in rep.samples)
    assert rep.max_ratio >= rep.mean_ratio > 0
    assert {s.index for s in rep.samples} == {0, 1}
    summary = rep.summary()
    assert set(summary) == {"name", "max", "mean", "slope", "baseline", "lhs_bound", "flags", "pass"}
    if name == "duality":
        assert rep.log2_slope is None and rep.flags["violation"] is False
    else:
        assert rep.log2_slope is not None


def test_reports_are_deterministic():
    a = verify("bilinear2", SMALL)
    b = verify("bilinear2", SMALL)
    assert a.samples == b.samples


def test_lhs_bound_labels():
    assert verify("algebra", SMALL).lhs_bound == "exact"
    assert verify("bilinear1", SMALL).lhs_bound == "Y_upper"


def test_unknown_estimate():
    with pytest.raises(ValidationError, match="unknown estimate"):
        verify("bogus", SMALL)


@pytest.mark.parametrize(
    "name, sigma",
    [("bilinear1", -0.1), ("bilinear1", 1.76), ("bilinear2", 2.8), ("bilinear3", -1.0)],
)
def test_sigma_out_of_range(name, sigma):
    with pytest.raises(ParameterError):
        verify(name, SMALL, {"sigma": sigma})


def test_sigma_edges_accepted():
    verify("bilinear1", SMALL, {"sigma": 1.75})
    verify("bilinear2", SMALL, {"sigma": 0.0})


def test_bernstein_needs_s_above_half_dimension():
    with pytest.raises(ParameterError):
        verify("bernstein", SMALL, {"s": 0.5})


def test_unknown_symbol():
    with pytest.raises(ParameterError):
        verify("commutator", SMALL, {"symbol": "laplace"})


def test_moser_linear_F_ratio_one():
    spec = EnsembleSpec(count=2, grid=G, amplitude=1e-6)
    rep = verify("moser", spec, {"nonlinearity": NonlinearitySpec.from_strings(["u"])})
    for s in rep.samples:
        if s.band == -1:
            assert s.ratio == pytest.approx(1.0, abs=1e-4)


def test_commutator_identity_symbol_vanishes():
    rep = verify("commutator", SMALL, {"symbol": "identity"})
    assert max(s.lhs for s in rep.samples) <= 1e-12 * max(s.rhs for s in rep.samples)


def test_baseline_gates_the_pass_flag():
    rep = verify("algebra", SMALL, {"baseline": 1e-6})
    assert rep.baseline == 1e-6 and not rep.baseline_ok and not rep.passed
    assert verify("algebra", SMALL, {"baseline": 1e3}).baseline_ok


def test_report_rejects_nonpositive_rhs():
    with pytest.raises(ValidationError):
        _report("x", [Sample(0, 0, 1.0, 0.0, math.inf)])


def test_regression_slope():
    assert regression_slope([0, 1, 2], [1, 2, 4]) == pytest.approx(1.0)
    assert regression_slope([3], [1.0]) is None
    assert regression_slope([0, 1], [0.0, 1.0]) is None


# smoothing scans


def test_single_band_scan_has_no_slope():
    rep = smoothing_scan([3])
    assert rep.log2_slope is None
    assert rep.flags["insufficient_points"]


def test_scan_validation():
    with pytest.raises(ValidationError):
        smoothing_scan([0, 40])
    with pytest.raises(ValidationError):
        smoothing_scan([1, 2], metric="hyperbolic")
    with pytest.raises(ValidationError):
        smoothing_scan([1, 2], mode="sideways")
    with pytest.raises(ValidationError):
        smoothing_scan([1, 2], metric="conformal", mode="inhomogeneous")


def test_identity_and_perturbed_scans_agree():
    a = smoothing_scan(range(1, 5))
    b = smoothing_scan(range(1, 5), metric="conformal", amplitude=1e-3)
    assert b.log2_slope == pytest.approx(a.log2_slope, abs=0.05)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 50))
def test_random_field_reproducible_property(seed, index):
    spec = EnsembleSpec(seed=seed, count=1, grid=G)
    a = random_field(spec, "spatial", index=index)
    b = random_field(spec, "spatial", index=index)
    assert a.values.tobytes() == b.values.tobytes()
    assert isinstance(a, SpatialField)
