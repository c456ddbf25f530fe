import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlsch.dyadic_spaces import l1_sobolev_norm
from qlsch.errors import DivergenceError, SmallnessError, ValidationError
from qlsch.expr_dsl import NonlinearitySpec, metric_preset, nonlinearity_preset
from qlsch.field_core import GridSpec, SpaceTimeField, SpatialField
from qlsch.quasilinear import (
    IterationConfig,
    QuasilinearProblem,
    compute_fj,
    continuous_dependence,
    envelope_persistence,
    higher_regularity_probe,
    initial_data,
    iterate,
    lipschitz_probe,
    para_decompose,
    para_residual,
)

from conftest import random_spacetime

G = GridSpec(d=1, N=256, L=32.0, M=33)
CONF = metric_preset("conformal", 1)
IDENT = metric_preset("identity", 1)
CUBIC = nonlinearity_preset("cubic")
ZERO = nonlinearity_preset("zero")


def _problem(target=1e-3, metric=CONF, F=CUBIC, kind="gaussian", grid=G, **kw):
    return QuasilinearProblem(metric, F, initial_data(grid, kind, target=target, s=2.75, **kw), s=2.75)


@pytest.fixture(scope="module")
def cubic_run():
    p = _problem()
    return p, iterate(p)


# setup


def test_initial_data_hits_target():
    u0 = initial_data(G, target=2e-3, s=2.75)
    assert l1_sobolev_norm(u0, 2.75, "H") == pytest.approx(2e-3, rel=1e-12)
    with pytest.raises(ValidationError):
        initial_data(G, kind="noise")


def test_problem_invariants():
    u0 = initial_data(G, target=1e-3, s=2.75)
    with pytest.raises(ValidationError, match="must exceed"):
        QuasilinearProblem(CONF, CUBIC, u0, s=2.5)
    with pytest.raises(SmallnessError):
        QuasilinearProblem(CONF, CUBIC, initial_data(G, target=0.1, s=2.75), s=2.75)
    with pytest.raises(ValidationError):
        QuasilinearProblem(metric_preset("conformal", 2), CUBIC, u0, s=2.75)
    with pytest.raises(ValidationError):
        QuasilinearProblem(CONF, NonlinearitySpec.from_strings(["u"]), u0, s=2.75)
    assert QuasilinearProblem(CONF, CUBIC, u0).s == 2.75


# paradifferential layer


@pytest.mark.parametrize("F", ["cubic", "deriv-quadratic"])
def test_para_residual_on_random_fields(F):
    for seed in range(4):
        u = random_spacetime(G, seed, frac=0.5)
        assert para_residual(u, CONF, nonlinearity_preset(F)) <= 1e-10


def test_para_residual_of_zero():
    z = SpaceTimeField(G, np.zeros((G.M, 1, G.N)))
    assert para_residual(z, CONF, CUBIC) == 0.0
    assert np.all(compute_fj(z, CONF, CUBIC, 2).f_j.values == 0)


def test_identity_metric_leaves_only_the_source():
    u = random_spacetime(G, 5, frac=0.5)
    for j in range(G.j_max + 1):
        t = compute_fj(u, IDENT, CUBIC, j)
        assert t.norms["high_coefficient"] <= 1e-12 * t.norms["source"]
        assert t.norms["commutator"] <= 1e-12 * t.norms["source"]


def test_para_decompose_covers_all_bands():
    dec = para_decompose(random_spacetime(G, 6, frac=0.5), CONF, CUBIC)
    assert sorted(dec.bands) == list(range(G.j_max + 1))
    assert set(dec[1].norms) == {"source", "high_coefficient", "commutator"}


def test_para_residual_on_a_solution(cubic_run):
    p, tr = cubic_run
    assert para_residual(tr.solution, p.metric, p.F) <= 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.8))
def test_para_identity_property(seed, frac):
    assert para_residual(random_spacetime(G, seed, frac), CONF, CUBIC) <= 1e-10


# iteration


def test_zero_data_one_step():
    p = QuasilinearProblem(CONF, CUBIC, SpatialField(G, np.zeros((1, G.N))), s=2.75)
    tr = iterate(p)
    assert tr.converged and len(tr.diffs) == 1
    assert np.all(tr.solution.values == 0)
    assert tr.final_ratio == 0.0


def test_cubic_contracts(cubic_run):
    _, tr = cubic_run
    assert tr.converged and len(tr.diffs) <= 8
    assert tr.diffs[-1] <= 1e-9
    assert all(r <= 0.5 for r in tr.contraction_ratios)
    rows = tr.rows()
    assert [r[0] for r in rows] == list(range(1, len(tr.diffs) + 1))
    assert np.isnan(rows[0][3])


def test_uniform_bound_stable_under_doubling_amplitude(cubic_run):
    _, tr = cubic_run
    tr2 = iterate(_problem(target=2e-3))
    # measured 2.2345 at both amplitudes
    assert tr2.final_ratio == pytest.approx(tr.final_ratio, rel=0.2)


def test_large_data_diverges():
    p = QuasilinearProblem(CONF, CUBIC, initial_data(G, target=20.0, s=2.75), s=2.75, eps0=1e9)
    with pytest.raises(DivergenceError) as exc, np.errstate(all="ignore"):
        iterate(p)
    assert len(exc.value.trace.diffs) >= 2


def test_max_iters_caps_the_run():
    p = QuasilinearProblem(IDENT, nonlinearity_preset("deriv-quadratic"), initial_data(G, target=0.5, s=2.75), s=2.75, eps0=1.0)
    tr = iterate(p, IterationConfig(max_iters=3))
    assert not tr.converged and len(tr.diffs) == 3


# diagnostics


def test_lipschitz_identical_data():
    p = _problem()
    r = lipschitz_probe(p, p)
    assert r.ratio == 0.0 and r.identical


def test_lipschitz_ratio_stable_under_gap_refinement():
    p = _problem()
    x = G.coords()[0]
    bump = SpatialField(G, np.exp(-((x - 16) ** 2))[None])
    ratios = [lipschitz_probe(p, p.with_data(p.u0 + bump * (gap * 1e-3))).ratio for gap in (1e-4, 1e-5)]
    # measured 2.4972 at both gaps
    assert np.isfinite(ratios[0])
    assert ratios[1] == pytest.approx(ratios[0], rel=0.25)


def test_lipschitz_grid_mismatch():
    with pytest.raises(ValidationError):
        lipschitz_probe(_problem(), _problem(grid=G.with_(N=128)))


def test_envelope_persistence_cubic(cubic_run):
    p, tr = cubic_run
    ep = envelope_persistence(p, tr)
    # measured 1.027
    assert ep.C <= 10


def test_free_flow_envelope_and_scaling():
    p = _problem(metric=IDENT, F=ZERO, kind="band", j0=2)
    ep = envelope_persistence(p, iterate(p))
    assert ep.C <= 1.2
    assert int(np.argmax(ep.b.band_norms)) == 2
    half = p.with_data(p.u0 * 0.5)
    eh = envelope_persistence(half, iterate(half))
    assert np.allclose(eh.a.a, ep.a.a, rtol=1e-12)
    assert np.allclose(eh.b.a, ep.b.a, rtol=1e-12)


def test_single_band_data_tails():
    p = _problem(kind="band", j0=2)
    ep = envelope_persistence(p, iterate(p))
    assert int(np.argmax(ep.b.band_norms)) == 2
    tails = [j for j in range(len(ep.a.a)) if j != 2]
    assert all(ep.b.a[j] <= ep.C * ep.a.a[j] * (1 + 1e-12) for j in tails)


@pytest.mark.xfail(strict=True, reason="X_j adds sup_t L^2 to 2^{j/2} X, so free flow alone gives about 3.4; see notes")
def test_higher_regularity_free_flow():
    p = _problem(metric=IDENT, F=ZERO, kind="band", j0=2)
    assert higher_regularity_probe(p, iterate(p)) <= 1.2


def test_higher_regularity_finite(cubic_run):
    p, tr = cubic_run
    # measured 2.3932
    assert higher_regularity_probe(p, tr) == pytest.approx(2.3932490281897962, rel=1e-6)


def test_continuous_dependence_decays():
    g = GridSpec(d=1, N=1024, L=32.0, M=33)
    p = _problem(grid=g)
    levels, errs = continuous_dependence(p)
    assert levels == [0, 1, 2, 3]
    assert all(b <= 2 * a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < errs[0]
