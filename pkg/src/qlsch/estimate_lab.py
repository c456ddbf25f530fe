"""Randomized checks of the multilinear estimates and of local smoothing.

Each check draws a seeded ensemble, evaluates both sides of an inequality
with the norms of :mod:`qlsch.dyadic_spaces` and reports the ratios.  Where
an estimate is stated per frequency band the report also carries one sample
per band, and the slope of log2(max ratio) against the band index stands in
for "the constant does not depend on k".  Y norms on the left are replaced by
their computable upper bound, which can only make the ratios larger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dyadic_spaces import (
    X_norm,
    Y_norm_bounds,
    band_terms,
    cube_partition,
    default_delta,
    envelope_from_band_norms,
    l1_sobolev_norm,
    l1j_norm,
    localized_norm,
    partition_scale,
    weighted_dyadic_norm,
)
from .errors import ParameterError, ValidationError
from .expr_dsl import evaluate_pointwise, metric_preset, nonlinearity_preset
from .field_core import GridSpec, SpaceTimeField, SpatialField, dealias, fft, ifft
from .linear_prop import PropagatorConfig, free_evolution, solve_freq_localized
from .lp_multipliers import band_symbol, high_symbol, low_symbol
from .quasilinear import compute_fj, metric_field

__all__ = [
    "ESTIMATES",
    "EnsembleSpec",
    "Sample",
    "EstimateReport",
    "random_field",
    "verify",
    "smoothing_scan",
    "regression_slope",
]

ESTIMATES = (
    "algebra",
    "moser",
    "bilinear1",
    "bilinear2",
    "bilinear3",
    "commutator",
    "bernstein",
    "fj_bound",
    "duality",
)

GLOBAL = -1  # band label of a sample that is not frequency-indexed


@dataclass(frozen=True)
class EnsembleSpec:
    seed: int = 0
    count: int = 100
    s: float = 2.75
    bump_centers: int = 2
    amplitude: float = 1.0
    grid: GridSpec = GridSpec(d=1, N=1024, L=32.0, M=65)
    window: float = 1.0  # Gaussian window width in space
    bands: Optional[tuple] = None  # None: 0..j_max

    def __post_init__(self):
        if self.count < 1 or self.bump_centers < 1:
            raise ValidationError("count and bump_centers must be positive")
        if self.window <= 0 or self.amplitude <= 0:
            raise ValidationError("window and amplitude must be positive")

    @property
    def band_list(self) -> list:
        return list(range(self.grid.j_max + 1)) if self.bands is None else list(self.bands)


@dataclass(frozen=True)
class Sample:
    index: int
    band: int
    lhs: float
    rhs: float
    ratio: float


@dataclass
class EstimateReport:
    name: str
    samples: list
    max_ratio: float
    mean_ratio: float
    log2_slope: Optional[float]
    slope_range: tuple = (-math.inf, 0.1)
    baseline: Optional[float] = None
    lhs_bound: str = "exact"
    flags: dict = field(default_factory=dict)

    @property
    def slope_ok(self) -> bool:
        lo, hi = self.slope_range
        return self.log2_slope is None or lo <= self.log2_slope <= hi

    @property
    def baseline_ok(self) -> bool:
        return self.baseline is None or self.max_ratio <= self.baseline * 1.25

    @property
    def passed(self) -> bool:
        return self.slope_ok and self.baseline_ok and not self.flags.get("violation", False)

    def summary(self) -> dict:
        return {
            "name": self.name,
            "max": self.max_ratio,
            "mean": self.mean_ratio,
            "slope": self.log2_slope,
            "baseline": self.baseline,
            "lhs_bound": self.lhs_bound,
            "flags": self.flags,
            "pass": self.passed,
        }


def regression_slope(ks, values) -> Optional[float]:
    """Least-squares slope of log2(values) against ks; None below two points."""
    ks = np.asarray(ks, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = v > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(ks[ok], np.log2(v[ok]), 1)[0])


def _report(name, samples, baseline=None, lhs_bound="exact", flags=None) -> EstimateReport:
    for smp in samples:
        if not smp.rhs > 0 or not math.isfinite(smp.ratio):
            raise ValidationError(f"{name}: sample {smp.index} band {smp.band} has rhs={smp.rhs}, ratio={smp.ratio}")
    ratios = np.array([smp.ratio for smp in samples])
    by_band: dict = {}
    for smp in samples:
        if smp.band != GLOBAL:
            by_band[smp.band] = max(by_band.get(smp.band, 0.0), smp.ratio)
    ks = sorted(by_band)
    slope = regression_slope(ks, [by_band[k] for k in ks]) if ks else None
    flags = dict(flags or {})
    if ks and slope is None:
        flags["insufficient_points"] = True
    return EstimateReport(
        name,
        samples,
        float(ratios.max()),
        float(ratios.mean()),
        slope,
        baseline=baseline,
        lhs_bound=lhs_bound,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# ensembles


def _rng(spec: EnsembleSpec, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, index, stream])


def _windows(grid: GridSpec, rng, count: int, width: float) -> np.ndarray:
    """Sum of ``count`` periodized Gaussians at uniform random centers."""
    out = np.zeros(grid.shape)
    reach = int(math.ceil(6 * width / grid.L)) + 1
    for _ in range(count):
        c = rng.uniform(0, grid.L, size=grid.d)
        factors = []
        for x, cx in zip(grid.coords(), c):
            y = np.mod(x - cx + grid.L / 2, grid.L) - grid.L / 2
            factors.append(sum(np.exp(-((y + n * grid.L) ** 2) / (2 * width**2)) for n in range(-reach, reach + 1)))
        out = out + np.prod(factors, axis=0)
    return out


def random_field(spec: EnsembleSpec, which: str = "spacetime", index: int = 0, stream: int = 0, bands=None):
    """Sum over bands of windowed shell noise with ||piece_j||_{L^2} = amp 2^{-sj}.

    Space-time fields are the exact free evolution of the spatial field.
    """
    grid = spec.grid.with_(m=1)
    rng = _rng(spec, index, stream)
    k = grid.kabs()
    total = np.zeros(grid.shape, dtype=complex)
    for j in spec.band_list if bands is None else bands:
        center = 2.0**j
        shell = np.exp(-(((k - center) / (0.2 * center)) ** 2))
        noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        # low bands get wider windows so the window does not smear their spectrum
        width = spec.window * 2.0 ** max(0, 2 - j)
        piece = ifft(noise * shell, grid.d) * _windows(grid, rng, spec.bump_centers, width)
        nrm = math.sqrt(np.sum(np.abs(piece) ** 2) * grid.cell_volume)
        if nrm > 0:
            total += piece * (spec.amplitude * 2.0 ** (-spec.s * j) / nrm)
    u = SpatialField(grid, total[None])
    if which == "spatial":
        return u
    if which == "spacetime":
        return free_evolution(u)
    raise ValidationError(f"unknown field kind {which!r}")


# ---------------------------------------------------------------------------
# helpers


def _prod(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> np.ndarray:
    return dealias(a * b, grid)


def _S(a: np.ndarray, grid: GridSpec, k: int) -> np.ndarray:
    return ifft(fft(a, grid.d) * band_symbol(grid, k), grid.d)


def _norm(u: SpaceTimeField, s: float) -> float:
    return l1_sobolev_norm(u, s, "X")


def _envelope(u: SpaceTimeField, s: float, delta: float) -> np.ndarray:
    return envelope_from_band_norms(band_terms(u, s, "X"), delta).a


def _sigma(params: dict, default: float, lo: float, hi: float, name: str) -> float:
    sigma = float(params.get("sigma", default))
    if not lo - 1e-12 <= sigma <= hi + 1e-12:
        raise ParameterError(f"{name} needs {lo:g} <= sigma <= {hi:g}, got {sigma:g}")
    return sigma


def _symbol(name: str, grid: GridSpec) -> np.ndarray:
    if name == "identity":
        return np.ones(grid.shape)
    if name == "riesz":
        return grid.wavenumbers()[0] / np.sqrt(1.0 + grid.kabs() ** 2)
    raise ParameterError(f"unknown multiplier symbol {name!r}")


# ---------------------------------------------------------------------------
# the estimates


def _algebra(spec, params):
    s = spec.s
    grid = spec.grid
    delta = default_delta(s, grid.d)
    out = []
    for i in range(spec.count):
        u = random_field(spec, index=i, stream=0)
        v = random_field(spec, index=i, stream=1)
        nu, nv = _norm(u, s), _norm(v, s)
        w = _prod(u.values, v.values, grid)
        lhs = _norm(u.with_values(w), s)
        out.append(Sample(i, GLOBAL, lhs, nu * nv, lhs / (nu * nv)))
        a, b = _envelope(u, s, delta), _envelope(v, s, delta)
        for k in spec.band_list:
            lk = localized_norm(_S(w, grid, k), grid, s, "X", k)
            rk = (a[k] + b[k]) * nu * nv
            out.append(Sample(i, k, lk, rk, lk / rk))
    return out, "exact"


def _moser(spec, params):
    s = spec.s
    grid = spec.grid
    delta = default_delta(s, grid.d)
    F = nonlinearity_preset(params.get("nonlinearity", "cubic")) if isinstance(params.get("nonlinearity", "cubic"), str) else params["nonlinearity"]
    out = []
    for i in range(spec.count):
        u = random_field(spec, index=i)
        nu = _norm(u, s)
        Fu = F.evaluate(u).values
        rhs = nu * (1 + nu)
        lhs = _norm(u.with_values(Fu), s)
        out.append(Sample(i, GLOBAL, lhs, rhs, lhs / rhs))
        a = _envelope(u, s, delta)
        for k in spec.band_list:
            lk = localized_norm(_S(Fu, grid, k), grid, s, "X", k)
            out.append(Sample(i, k, lk, a[k] * rhs, lk / (a[k] * rhs)))
    return out, "exact"


def _bilinear(spec, params, which):
    s = spec.s
    grid = spec.grid
    if which == "bilinear2":
        sigma = _sigma(params, s, 0.0, s, which)
        su, sv = s - 1, sigma - 1
    elif which == "bilinear1":
        sigma = _sigma(params, s - 1, 0.0, s - 1, which)
        su, sv = s - 2, sigma
    else:
        sigma = _sigma(params, s, 0.0, s, which)
        su, sv = s - 2, sigma
    delta = default_delta(s, grid.d)
    out = []
    for i in range(spec.count):
        u = random_field(spec, index=i, stream=0)
        v = random_field(spec, index=i, stream=1)
        rhs = _norm(u, su) * _norm(v, sv)
        a, b = _envelope(u, s, delta), _envelope(v, sigma, delta)
        if which != "bilinear3":
            w = _prod(u.values, v.values, grid)
            lhs = l1_sobolev_norm(u.with_values(w), sigma, "Y")
            out.append(Sample(i, GLOBAL, lhs, rhs, lhs / rhs))
        for k in spec.band_list:
            if which == "bilinear3":
                vh = ifft(fft(v.values, grid.d) * high_symbol(grid, k - 4), grid.d)
                wk = _S(_prod(u.values, vh, grid), grid, k)
            else:
                wk = _S(w, grid, k)
            lk = localized_norm(wk, grid, sigma, "Y", k)
            rk = (a[k] + b[k]) * rhs
            out.append(Sample(i, k, lk, rk, lk / rk))
    return out, "Y_upper"


def _commutator(spec, params):
    """|grad [S_{<k-4} g, A(D)] grad S_k u|_{l^1 Y^0} vs |g - I|_{l^1 X^s} |S_k u|_{l^1 X^0}."""
    s = spec.s
    grid = spec.grid
    sym = _symbol(params.get("symbol", "riesz"), grid)
    amp = float(params.get("metric_amplitude", 0.1))
    ik = 1j * grid.wavenumbers()[0]
    out = []
    for i in range(spec.count):
        u = random_field(spec, index=i, stream=0)
        dev = np.array(random_field(spec, index=i, stream=2).values.real)
        dev *= amp / max(np.abs(dev).max(), 1e-300)
        gdev = SpaceTimeField(u.grid, dev.astype(complex))
        gnorm = _norm(gdev, s)
        g = 1.0 + dev
        for k in spec.band_list:
            uk = _S(u.values, grid, k)
            w = ifft(fft(uk, grid.d) * ik, grid.d)
            glow = ifft(fft(g, grid.d) * low_symbol(grid, max(k - 5, 0)), grid.d).real
            Aw = ifft(fft(w, grid.d) * sym, grid.d)
            c = _prod(glow, Aw, grid) - ifft(fft(_prod(glow, w, grid), grid.d) * sym, grid.d)
            lhs_arr = ifft(fft(c, grid.d) * ik, grid.d)
            lhs = l1_sobolev_norm(u.with_values(lhs_arr), 0.0, "Y")
            rhs = gnorm * localized_norm(uk, grid, 0.0, "X", k)
            out.append(Sample(i, k, lhs, rhs, lhs / rhs))
    return out, "Y_upper"


def _bernstein(spec, params):
    s = float(params.get("s", spec.s))
    grid = spec.grid
    if s <= grid.d / 2:
        raise ParameterError(f"bernstein needs s > d/2, got {s:g}")
    out = []
    for i in range(spec.count):
        u = random_field(spec, index=i)
        lhs = float(np.abs(u.values).max())
        rhs = _norm(u, s)
        out.append(Sample(i, GLOBAL, lhs, rhs, lhs / rhs))
        for k in spec.band_list:
            uk = _S(u.values, grid, k)
            part = cube_partition(grid, partition_scale(grid, k))
            chi = part.chi_freq.reshape(part.count, -1)
            flat = np.abs(uk).reshape(grid.M, -1).max(axis=0)
            lk = float(np.sum(np.max(np.abs(chi) * flat[None, :], axis=1)))
            rk = 2.0 ** (grid.d * k / 2) * l1j_norm(u.with_values(uk), k, "X")
            out.append(Sample(i, k, lk, rk, lk / rk))
    return out, "exact"


def _fj_bound(spec, params):
    s = spec.s
    grid = spec.grid
    delta = default_delta(s, grid.d)
    metric = metric_preset(params.get("metric", "conformal"), grid.d)
    F = nonlinearity_preset(params.get("nonlinearity", "cubic"))
    out = []
    for i in range(spec.count):
        u = random_field(spec, index=i)
        nu = _norm(u, s)
        a = _envelope(u, s, delta)
        cache = (metric_field(metric, u), F.evaluate(u).values)
        for k in spec.band_list:
            fj = compute_fj(u, metric, F, k, cache).f_j
            lhs = localized_norm(fj.values, grid, s, "Y", k)
            rhs = a[k] * nu**2
            out.append(Sample(i, k, lhs, rhs, lhs / rhs))
    return out, "Y_upper"


def _duality(spec, params):
    out = []
    violation = False
    for i in range(spec.count):
        f = random_field(spec, index=i)
        up, lo = Y_norm_bounds(f)
        if lo > up * (1 + 1e-12):
            violation = True
        out.append(Sample(i, GLOBAL, lo, up, lo / up))
    return out, "Y_upper", {"violation": violation}


def verify(name: str, spec: EnsembleSpec = EnsembleSpec(), params: Optional[dict] = None) -> EstimateReport:
    """Run one named estimate over the ensemble."""
    params = dict(params or {})
    baseline = params.pop("baseline", None)
    flags = {}
    if name == "algebra":
        samples, side = _algebra(spec, params)
    elif name == "moser":
        samples, side = _moser(spec, params)
    elif name in ("bilinear1", "bilinear2", "bilinear3"):
        samples, side = _bilinear(spec, params, name)
    elif name == "commutator":
        samples, side = _commutator(spec, params)
    elif name == "bernstein":
        samples, side = _bernstein(spec, params)
    elif name == "fj_bound":
        samples, side = _fj_bound(spec, params)
    elif name == "duality":
        samples, side, flags = _duality(spec, params)
    else:
        raise ValidationError(f"unknown estimate {name!r}; choose from {', '.join(ESTIMATES)}")
    return _report(name, samples, baseline, side, flags)


# ---------------------------------------------------------------------------
# local smoothing


def _band_packet(grid: GridSpec, j: int, width: float) -> SpatialField:
    x = grid.coords()[0]
    c = grid.L / 2
    y = np.mod(x - c + grid.L / 2, grid.L) - grid.L / 2
    base = np.exp(-(y**2) / (2 * width**2)) * np.exp(1j * 2.0**j * x)
    vals = ifft(fft(base, grid.d) * band_symbol(grid, j), grid.d)
    u = SpatialField(grid.with_(m=1), vals[None])
    n = math.sqrt(np.sum(np.abs(vals) ** 2) * grid.cell_volume)
    return u * (1.0 / n)


def _perturbed_metric(grid: GridSpec, amplitude: float) -> np.ndarray:
    """Conformal metric 1 + |w|^2 with |w|^2 a bump of height ``amplitude``."""
    x = grid.coords()[0]
    y = np.mod(x - grid.L / 2 + grid.L / 2, grid.L) - grid.L / 2
    w = math.sqrt(amplitude) * np.exp(-(y**2) / (2 * (grid.L / 8) ** 2))
    g = metric_preset("conformal", grid.d).entries[0][0]
    vals = evaluate_pointwise(g, w[None].astype(complex)).real
    return vals[None, None]


def smoothing_scan(
    j_range,
    metric: str = "identity",
    grid: GridSpec = GridSpec(d=1, N=1024, L=4.0, M=65),
    amplitude: float = 1e-3,
    width: Optional[float] = None,
    mode: str = "homogeneous",
    cfg: PropagatorConfig = PropagatorConfig(),
) -> EstimateReport:
    """Band-by-band local smoothing measurements.

    Homogeneous: ratio X(u_j) / |u_0j|_{L^2} for unit data, whose log2-slope in
    j should be -1/2.  Inhomogeneous: X_j(u_j) / Y_j(f_j) for u_0 = 0 and a
    unit atom forcing.
    """
    js = list(j_range)
    for j in js:
        if j < 0 or j > grid.j_max:
            raise ValidationError(f"band {j} is not resolved (j_max = {grid.j_max})")
    if metric not in ("identity", "conformal"):
        raise ValidationError(f"unknown scan metric {metric!r}")
    g = None if metric == "identity" else _perturbed_metric(grid, amplitude)
    width = grid.L / 8 if width is None else width
    samples = []
    for j in js:
        packet = _band_packet(grid, j, width)
        if mode == "homogeneous":
            if g is None:
                u = free_evolution(packet, grid.M)
            else:
                u = solve_freq_localized(j, g, None, packet, cfg, grid=grid.with_(m=1)).u
            lhs = X_norm(u)
            rhs = 1.0
        elif mode == "inhomogeneous":
            # resonant forcing f = e^{it Lap} f0 has the exact response -i t f(t);
            # a time-stepper's phase error would destroy the resonance at high j
            if g is not None:
                raise ValidationError("the inhomogeneous scan runs on the identity metric only")
            f = free_evolution(packet, grid.M)
            f = f * (1.0 / weighted_dyadic_norm(f, "Yj", j))
            resp = f.with_values(-1j * grid.times[:, None, None] * f.values)
            lhs = weighted_dyadic_norm(resp, "Xj", j)
            rhs = 1.0
        else:
            raise ValidationError(f"unknown scan mode {mode!r}")
        samples.append(Sample(len(samples), j, lhs, rhs, lhs / rhs))
    rep = _report(f"smoothing_{mode}_{metric}", samples, lhs_bound="exact" if mode == "homogeneous" else "Y_upper")
    if mode == "homogeneous":
        rep.slope_range = (-0.65, -0.35)
        rep.flags["target_slope"] = -0.5
    ratios = [smp.ratio for smp in samples]
    rep.flags["spread"] = max(ratios) / min(ratios) if min(ratios) > 0 else float("inf")
    return rep
