"""Picard iteration for ``i u_t + d_j g^{jk}(u) d_k u = F(u, grad u)`` and the
diagnostics built on it: the paradifferential decomposition per band,
contraction, envelope persistence, weak Lipschitz dependence, higher
regularity and continuous dependence on the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dyadic_spaces import FrequencyEnvelope, default_delta, frequency_envelope, l1_sobolev_norm
from .errors import DimensionError, DivergenceError, SmallnessError, ValidationError
from .expr_dsl import MetricSpec, NonlinearitySpec, validate
from .field_core import GridSpec, SpaceTimeField, SpatialField, fft, ifft, trapezoid_weights
from .linear_prop import LinearProblem, PropagatorConfig, _A_hat, lowpass_metric, solve_linear
from .lp_multipliers import band_symbol, low_symbol

__all__ = [
    "QuasilinearProblem",
    "IterationConfig",
    "IterationTrace",
    "FjTerms",
    "ParaDecomposition",
    "initial_data",
    "metric_field",
    "compute_fj",
    "para_decompose",
    "para_residual",
    "iterate",
    "LipschitzResult",
    "lipschitz_probe",
    "EnvelopePersistence",
    "envelope_persistence",
    "higher_regularity_probe",
    "continuous_dependence",
]


# ---------------------------------------------------------------------------
# problem setup


def initial_data(
    grid: GridSpec,
    kind: str = "gaussian",
    target: float = 1e-3,
    s: Optional[float] = None,
    width: float = 1.0,
    k0: float = 0.0,
    j0: int = 2,
    center: Optional[float] = None,
) -> SpatialField:
    """Smooth data scaled so that ||u0||_{l^1 H^s} equals ``target``.

    ``gaussian`` is a modulated Gaussian; ``band`` is its S_{j0} projection.
    """
    if s is None:
        s = grid.d / 2 + 2.25
    c = grid.L / 2 if center is None else center
    r2 = sum((x - c) ** 2 for x in grid.coords())
    base = np.exp(-r2 / (2 * width**2)) * np.exp(1j * k0 * grid.coords()[0])
    vals = np.broadcast_to(base, (grid.m, *grid.shape)).copy()
    if kind == "band":
        vals = ifft(fft(vals, grid.d) * band_symbol(grid, j0), grid.d)
    elif kind != "gaussian":
        raise ValidationError(f"unknown initial data kind {kind!r}")
    u = SpatialField(grid, vals)
    n = l1_sobolev_norm(u, s, "H")
    if n == 0:
        raise ValidationError("initial data vanish on this grid")
    return u * (target / n)


@dataclass(frozen=True, eq=False)
class QuasilinearProblem:
    metric: MetricSpec
    F: NonlinearitySpec
    u0: SpatialField
    s: Optional[float] = None
    eps0: float = 1e-2

    def __post_init__(self):
        grid = self.u0.grid
        s = grid.d / 2 + 2.25 if self.s is None else float(self.s)
        object.__setattr__(self, "s", s)
        if s <= grid.d / 2 + 2:
            raise ValidationError(f"regularity s={s} must exceed d/2 + 2 = {grid.d / 2 + 2}")
        if self.metric.d != grid.d:
            raise ValidationError(f"metric is {self.metric.d}x{self.metric.d} on a d={grid.d} grid")
        if self.F.m != grid.m:
            raise ValidationError(f"F has {self.F.m} components; u has {grid.m}")
        validate(self.metric, m=grid.m).raise_if_failed()
        validate(self.F, d=grid.d).raise_if_failed()
        gauge = l1_sobolev_norm(self.u0, s, "H")
        object.__setattr__(self, "eps_gauge", gauge)
        if gauge > self.eps0:
            raise SmallnessError(f"||u0||_(l1 H^s) = {gauge:.3g} exceeds eps0 = {self.eps0:g}")

    @property
    def grid(self) -> GridSpec:
        return self.u0.grid

    def with_data(self, u0: SpatialField) -> "QuasilinearProblem":
        return QuasilinearProblem(self.metric, self.F, u0, self.s, self.eps0)


@dataclass(frozen=True)
class IterationConfig:
    tol: float = 1e-9
    max_iters: int = 12
    propagator: PropagatorConfig = PropagatorConfig()


def metric_field(metric: MetricSpec, u: SpaceTimeField) -> np.ndarray:
    """g(u) as a real (d, d, M, *shape) array."""
    return metric.evaluate(u)


# ---------------------------------------------------------------------------
# paradifferential form


def _div_form(g: np.ndarray, u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """d_k g^{kl} d_l u on every slice, with the propagator's discretization."""
    out = np.empty_like(u)
    for n in range(u.shape[0]):
        out[n] = -ifft(_A_hat(fft(u[n], grid.d), g[:, :, n], grid), grid.d)
    return out


def _dt(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.gradient(u, grid.dt, axis=0)


def _band(a: np.ndarray, grid: GridSpec, j: int) -> np.ndarray:
    return ifft(fft(a, grid.d) * band_symbol(grid, j), grid.d)


@dataclass(frozen=True)
class FjTerms:
    j: int
    f_j: SpaceTimeField
    g_low: np.ndarray
    norms: dict  # L^2_{t,x} norm of each of the three terms


def compute_fj(u: SpaceTimeField, metric: MetricSpec, F: NonlinearitySpec, j: int, _cache=None) -> FjTerms:
    """f_j = S_j F - S_j d g_{>j-4} d u - [S_j, d g_{<j-4} d] u."""
    grid = u.grid
    g, Fu = _cache if _cache is not None else (metric_field(metric, u), F.evaluate(u).values)
    g_low = lowpass_metric(g, grid, j)
    g_high = g - g_low
    uv = u.values
    t1 = _band(Fu, grid, j)
    t2 = _band(_div_form(g_high, uv, grid), grid, j)
    t3 = _band(_div_form(g_low, uv, grid), grid, j) - _div_form(g_low, _band(uv, grid, j), grid)
    fj = t1 - t2 - t3
    w = trapezoid_weights(grid.M)

    def l2(a):
        per_t = np.sum(np.abs(a) ** 2, axis=tuple(range(1, a.ndim))) * grid.cell_volume
        return float(np.sqrt(np.dot(w, per_t)))

    norms = {"source": l2(t1), "high_coefficient": l2(t2), "commutator": l2(t3)}
    return FjTerms(j, u.with_values(fj), g_low, norms)


@dataclass(frozen=True)
class ParaDecomposition:
    bands: dict  # j -> FjTerms

    def __getitem__(self, j: int) -> FjTerms:
        return self.bands[j]


def para_decompose(u: SpaceTimeField, metric: MetricSpec, F: NonlinearitySpec) -> ParaDecomposition:
    cache = (metric_field(metric, u), F.evaluate(u).values)
    return ParaDecomposition({j: compute_fj(u, metric, F, j, cache) for j in range(u.grid.j_max + 1)})


def para_residual(u: SpaceTimeField, metric: MetricSpec, F: NonlinearitySpec) -> float:
    """max_j ||L_j S_j u - f_j - S_j(i u_t + d g d u - F)|| / ||u||, L^2_{t,x}."""
    grid = u.grid
    uv = u.values
    w = trapezoid_weights(grid.M)

    def l2(a):
        per_t = np.sum(np.abs(a) ** 2, axis=tuple(range(1, a.ndim))) * grid.cell_volume
        return float(np.sqrt(np.dot(w, per_t)))

    size = l2(uv)
    if size == 0.0:
        return 0.0
    g = metric_field(metric, u)
    Fu = F.evaluate(u).values
    full = 1j * _dt(uv, grid) + _div_form(g, uv, grid) - Fu
    worst = 0.0
    for j in range(grid.j_max + 1):
        terms = compute_fj(u, metric, F, j, (g, Fu))
        uj = _band(uv, grid, j)
        Lj = 1j * _dt(uj, grid) + _div_form(terms.g_low, uj, grid)
        res = Lj - terms.f_j.values - _band(full, grid, j)
        worst = max(worst, l2(res) / size)
    return worst


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass
class IterationTrace:
    iterates: list = field(default_factory=list)  # u^(0), u^(1), ...
    norms: list = field(default_factory=list)  # ||u^(n)||_{l^1 X^s}
    diffs: list = field(default_factory=list)  # ||u^(n+1) - u^(n)||_{l^1 X^{s-1}}
    data_norm: float = 0.0  # ||u0||_{l^1 H^s}
    converged: bool = False
    inner_iterations: list = field(default_factory=list)

    @property
    def solution(self) -> SpaceTimeField:
        return self.iterates[-1]

    @property
    def contraction_ratios(self) -> list:
        d = self.diffs
        return [d[n + 1] / d[n] if d[n] > 0 else 0.0 for n in range(len(d) - 1)]

    @property
    def uniform_bound_ratios(self) -> list:
        if self.data_norm == 0:
            return [0.0 for _ in self.norms]
        return [x / self.data_norm for x in self.norms]

    @property
    def final_ratio(self) -> float:
        return self.uniform_bound_ratios[-1]

    def rows(self):
        """(n, l1Xs, diff_sminus1, contraction_ratio) per completed step."""
        ratios = [float("nan")] + self.contraction_ratios
        return [(n + 1, self.norms[n + 1], self.diffs[n], ratios[n]) for n in range(len(self.diffs))]


def iterate(p: QuasilinearProblem, cfg: IterationConfig = IterationConfig()) -> IterationTrace:
    """u^(0) = 0, (i d_t + d g(u^(n)) d) u^(n+1) = F(u^(n), grad u^(n))."""
    grid = p.grid
    s = p.s
    u = SpaceTimeField(grid, np.zeros((grid.M, grid.m, *grid.shape), dtype=complex))
    trace = IterationTrace(iterates=[u], norms=[0.0], data_norm=p.eps_gauge)
    rising = 0
    for n in range(cfg.max_iters):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                g = metric_field(p.metric, u)
                h = p.F.evaluate(u)
        except DimensionError as exc:
            raise DivergenceError(f"coefficients overflowed at iterate {n}", trace) from exc
        rep = solve_linear(LinearProblem(grid, p.u0, g=g, h=h), cfg.propagator)
        new = rep.u
        diff = l1_sobolev_norm(new - u, s - 1, "X")
        trace.iterates.append(new)
        trace.norms.append(l1_sobolev_norm(new, s, "X"))
        trace.diffs.append(diff)
        trace.inner_iterations.append(int(rep.inner_iterations.max()))
        u = new
        if not np.isfinite(diff):
            raise DivergenceError(f"iterate {n + 1} is not finite", trace)
        if diff <= cfg.tol:
            trace.converged = True
            break
        if len(trace.diffs) >= 2 and trace.diffs[-1] >= trace.diffs[-2]:
            rising += 1
            if rising >= 2:
                raise DivergenceError("iterate differences grew for two consecutive steps", trace)
        else:
            rising = 0
    return trace


# ---------------------------------------------------------------------------
# solver-level diagnostics


@dataclass(frozen=True)
class LipschitzResult:
    ratio: float
    solution_gap: float
    data_gap: float
    identical: bool


def lipschitz_probe(
    p1: QuasilinearProblem, p2: QuasilinearProblem, cfg: IterationConfig = IterationConfig()
) -> LipschitzResult:
    """||u1 - u2||_{l^1 X^{s-1}} / ||u1(0) - u2(0)||_{l^1 H^{s-1}}."""
    if p1.grid != p2.grid:
        raise ValidationError("paired problems must share one grid")
    s = p1.s
    data_gap = l1_sobolev_norm(p1.u0 - p2.u0, s - 1, "H")
    if data_gap == 0.0:
        return LipschitzResult(0.0, 0.0, 0.0, True)
    u1 = iterate(p1, cfg).solution
    u2 = iterate(p2, cfg).solution
    sol_gap = l1_sobolev_norm(u1 - u2, s - 1, "X")
    return LipschitzResult(sol_gap / data_gap, sol_gap, data_gap, False)


@dataclass(frozen=True)
class EnvelopePersistence:
    a: FrequencyEnvelope
    b: FrequencyEnvelope
    C: float


def envelope_persistence(p: QuasilinearProblem, trace: IterationTrace, delta: Optional[float] = None) -> EnvelopePersistence:
    """Envelopes of u0 in l^1 H^s and of u in l^1 X^s, and max_j b_j / a_j."""
    if delta is None:
        delta = default_delta(p.s, p.grid.d)
    a = frequency_envelope(p.u0, p.s, "H", delta)
    b = frequency_envelope(trace.solution, p.s, "X", delta)
    return EnvelopePersistence(a, b, float(np.max(b.a / a.a)))


def higher_regularity_probe(p: QuasilinearProblem, trace: IterationTrace, n_extra: int = 1) -> float:
    """||u||_{l^1 X^{s+n}} / (||u0||_{l^1 H^{s+n}} + ||u||^2_{l^1 X^s})."""
    u = trace.solution
    top = l1_sobolev_norm(u, p.s + n_extra, "X")
    data = l1_sobolev_norm(p.u0, p.s + n_extra, "H")
    base = l1_sobolev_norm(u, p.s, "X")
    den = data + base**2
    return top / den if den > 0 else 0.0


def continuous_dependence(
    p: QuasilinearProblem, levels: Optional[list] = None, cfg: IterationConfig = IterationConfig()
) -> tuple[list, list]:
    """Errors ||u^(n) - u||_{l^1 X^s} for data truncated to S_{<=k} u0.

    Returns (levels, errors).  Default levels are the four bands below j_max.
    """
    grid = p.grid
    if levels is None:
        levels = list(range(max(grid.j_max - 4, 0), grid.j_max))
    u = iterate(p, cfg).solution
    errs = []
    for k in levels:
        v0 = p.u0.with_values(ifft(fft(p.u0.values, grid.d) * low_symbol(grid, k), grid.d))
        v = iterate(p.with_data(v0), cfg).solution
        errs.append(l1_sobolev_norm(v - u, p.s, "X"))
    return levels, errs
