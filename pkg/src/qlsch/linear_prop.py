"""Implicit-midpoint propagator for divergence-form linear Schrödinger equations.

The equation is ``i u_t + d_k g^{kl} d_l u + V.grad u + W u = h`` on the
periodic box over t in [0, 1].  Writing ``A = -d_k g^{kl} d_l`` and
``B = A - V.grad - W`` this reads ``i u_t = B u + h``, and each step solves

    i (u+ - u-) / dt = B_mid (u+ + u-) / 2 + h_mid

by fixed-point iteration preconditioned with the constant-coefficient
multiplier built from the spatial mean of g.  All operators carry the
dealiasing projection P on both sides, which keeps A exactly self-adjoint on
the grid and makes the scheme conserve the discrete L^2 norm when h, V and W
vanish.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .dyadic_spaces import l1_sobolev_norm
from .errors import ResolutionError, StepError, ValidationError
from .field_core import (
    GridSpec,
    SpaceTimeField,
    SpatialField,
    fft,
    ifft,
)
from .lp_multipliers import band_symbol, low_symbol, phi0

__all__ = [
    "LinearProblem",
    "PropagatorConfig",
    "SolveReport",
    "MorawetzSpec",
    "apply_A",
    "apply_B",
    "solve_linear",
    "solve_freq_localized",
    "energy_identity_residual",
    "morawetz_residual",
    "morawetz_terms",
    "active_band",
    "free_evolution",
]


# ---------------------------------------------------------------------------
# coefficients


def _time_array(a, grid: GridSpec, lead: tuple, name: str) -> Optional[np.ndarray]:
    """Broadcast a coefficient to ``(*lead, M, *shape)``; None stays None."""
    if a is None:
        return None
    a = np.asarray(a)
    full = (*lead, grid.M, *grid.shape)
    still = (*lead, *grid.shape)
    if a.shape == full:
        return a
    if a.shape == still:
        return np.broadcast_to(np.expand_dims(a, len(lead)), full)
    raise ValidationError(f"{name} has shape {a.shape}; expected {still} or {full}")


@dataclass(frozen=True, eq=False)
class LinearProblem:
    """Coefficients sampled on the time grid of ``grid``.

    ``g`` has shape (d, d, [M,] *shape) and must be real symmetric; None
    means the identity.  ``V`` is (d, [M,] *shape), ``W`` is ([M,] *shape).
    Coefficients act identically on every component of u.
    """

    grid: GridSpec
    u0: SpatialField
    g: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None
    h: Optional[SpaceTimeField] = None
    s_gauge: float = 0.0

    def __post_init__(self):
        grid = self.grid
        if self.u0.grid.shape != grid.shape or self.u0.grid.m != grid.m:
            raise ValidationError("u0 does not live on the problem grid")
        g = _time_array(self.g, grid, (grid.d, grid.d), "g")
        if g is not None:
            if np.iscomplexobj(g):
                if np.abs(g.imag).max() > 1e-12 * (1 + np.abs(g).max()):
                    raise ValidationError("metric must be real")
                g = g.real
            if not np.allclose(g, np.swapaxes(g, 0, 1), rtol=0, atol=1e-12):
                raise ValidationError("metric must be symmetric")
            if not np.all(np.isfinite(g)):
                raise ValidationError("metric has non-finite entries")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "V", _time_array(self.V, grid, (grid.d,), "V"))
        object.__setattr__(self, "W", _time_array(self.W, grid, (), "W"))
        if self.h is not None and self.h.values.shape != (grid.M, grid.m, *grid.shape):
            raise ValidationError("forcing does not match the problem grid")

    @property
    def constant_coefficients(self) -> bool:
        """True when g is constant in space and time and V, W vanish."""
        if self.V is not None and np.any(self.V != 0):
            return False
        if self.W is not None and np.any(self.W != 0):
            return False
        if self.g is None:
            return True
        flat = self.g.reshape(self.grid.d, self.grid.d, -1)
        return bool(np.all(flat == flat[..., :1]))

    @cached_property
    def smallness_gauge(self) -> float:
        """||g - I||_{l^1 X^s} summed over entries."""
        if self.g is None:
            return 0.0
        total = 0.0
        eye = np.eye(self.grid.d)
        for k in range(self.grid.d):
            for l in range(k, self.grid.d):
                dev = self.g[k, l] - eye[k, l]
                if not np.any(dev):
                    continue
                f = SpaceTimeField(self.grid.with_(m=1), dev[:, None])
                total += l1_sobolev_norm(f, self.s_gauge, "X")
        return total


@dataclass(frozen=True)
class PropagatorConfig:
    fixed_point_tol: float = 1e-10
    max_inner_iters: int = 200
    substeps: Optional[int] = None  # None: chosen from the active band
    resolution: float = 0.5  # internal dt <= resolution * 4^-j_active

    def __post_init__(self):
        if self.fixed_point_tol <= 0 or self.max_inner_iters < 1:
            raise ValidationError("tolerance and iteration cap must be positive")
        if self.substeps is not None and self.substeps < 1:
            raise ValidationError("substeps must be >= 1")


# ---------------------------------------------------------------------------
# operators


def _ik(grid: GridSpec) -> list[np.ndarray]:
    """Dealiased derivative symbols i k_l (Nyquist falls outside the mask)."""
    mask = grid.dealias_mask()
    return [1j * k * mask for k in grid.wavenumbers()]


def _A_hat(uh: np.ndarray, g: Optional[np.ndarray], grid: GridSpec) -> np.ndarray:
    """Fourier coefficients of A u from those of u; g is (d, d, *shape) or None."""
    d = grid.d
    ik = _ik(grid)
    if g is None:
        k2 = grid.kabs() ** 2 * grid.dealias_mask()
        return uh * k2
    grads = [ifft(uh * ik[l], d) for l in range(d)]
    out = 0
    for k in range(d):
        flux = sum(g[k, l] * grads[l] for l in range(d))
        out = out - fft(flux, d) * ik[k]
    return out


def apply_A(g, f: SpatialField) -> SpatialField:
    """A f = -P sum d_k (g^{kl} d_l P f); g is (d, d, *shape), None for identity."""
    grid = f.grid
    if g is not None:
        g = np.asarray(g, dtype=float)
    return f.with_values(ifft(_A_hat(fft(f.values, grid.d), g, grid), grid.d))


def _lower_hat(uh, V, W, grid):
    """Fourier coefficients of P(V.grad P u + W P u)."""
    d = grid.d
    mask = grid.dealias_mask()
    acc = 0
    if V is not None:
        ik = _ik(grid)
        acc = acc + sum(V[l] * ifft(uh * ik[l], d) for l in range(d))
    if W is not None:
        acc = acc + W * ifft(uh * mask, d)
    if isinstance(acc, int):
        return 0
    return fft(acc, d) * mask


def apply_B(g, V, W, f: SpatialField) -> SpatialField:
    grid = f.grid
    uh = fft(f.values, grid.d)
    return f.with_values(ifft(_A_hat(uh, g, grid) - _lower_hat(uh, V, W, grid), grid.d))


# ---------------------------------------------------------------------------
# solver


@dataclass
class SolveReport:
    u: SpaceTimeField
    problem: LinearProblem
    substeps: int
    inner_iterations: np.ndarray
    l2: np.ndarray
    warnings: list = field(default_factory=list)
    band_leakage: Optional[float] = None

    @property
    def conservation_drift(self) -> float:
        return float(np.max(np.abs(self.l2 - self.l2[0])))

    @cached_property
    def energy_residual(self) -> np.ndarray:
        return energy_identity_residual(self)

    def l1X(self, s: float) -> float:
        return l1_sobolev_norm(self.u, s, "X")


def active_band(grid: GridSpec, *arrays, rel: float = 1e-10) -> int:
    """Highest band whose share of the combined L^2 mass exceeds ``rel``."""
    top = 0
    spectra = [np.abs(fft(a, grid.d)) ** 2 for a in arrays if a is not None]
    spectra = [s.reshape(-1, *grid.shape).sum(axis=0) for s in spectra]
    if not spectra:
        return 0
    power = sum(spectra)
    total = power.sum()
    if total == 0:
        return 0
    for j in range(grid.j_max + 1):
        if np.sum(power * band_symbol(grid, j) ** 2) > rel * total:
            top = j
    # bands above j_max: anything beyond the last band's outer edge counts as j_max + 1
    beyond = power[grid.kabs() > 2.0 ** (grid.j_max + 1)].sum()
    if beyond > rel * total:
        top = grid.j_max + 1
    return top


def _substeps(p: LinearProblem, cfg: PropagatorConfig) -> int:
    grid = p.grid
    h = None if p.h is None else p.h.values
    j = active_band(grid, p.u0.values, h)
    dt = grid.dt
    need = max(1, math.ceil(dt / (cfg.resolution * 4.0**-j) - 1e-12))
    if cfg.substeps is None:
        return need
    if cfg.substeps < need:
        raise ResolutionError(
            f"{cfg.substeps} substeps leave dt={dt / cfg.substeps:.3g} above {cfg.resolution}*4^-{j}; need {need}"
        )
    return cfg.substeps


def _interp(a, n: int, theta: float):
    """Linear interpolation between time slices n and n+1 (time axis is axis -d-1)."""
    if a is None:
        return None
    return (1 - theta) * a[n] + theta * a[n + 1]


def solve_linear(p: LinearProblem, cfg: PropagatorConfig = PropagatorConfig()) -> SolveReport:
    """Crank-Nicolson stepping on [0, 1]; output on the M slices of the grid."""
    grid = p.grid
    d = grid.d
    nsub = _substeps(p, cfg)
    dt = grid.dt / nsub
    mask = grid.dealias_mask()
    kk = [k for k in grid.wavenumbers()]

    g_t = None if p.g is None else np.moveaxis(p.g, 2, 0)  # (M, d, d, *shape)
    V_t = None if p.V is None else np.moveaxis(p.V, 1, 0)  # (M, d, *shape)
    W_t = p.W
    h_t = None if p.h is None else p.h.values
    constant = p.constant_coefficients

    uh = fft(p.u0.values, d)
    out = np.empty((grid.M, grid.m, *grid.shape), dtype=complex)
    out[0] = p.u0.values
    iters = np.zeros((grid.M - 1) * nsub, dtype=int)
    step = 0
    for n in range(grid.M - 1):
        for q in range(nsub):
            theta = (q + 0.5) / nsub
            g = _interp(g_t, n, theta)
            V = _interp(V_t, n, theta)
            W = _interp(W_t, n, theta)
            if g is None:
                gbar = np.eye(d)
            else:
                gbar = g.reshape(d, d, -1).mean(axis=-1)
            b0 = sum(gbar[k, l] * kk[k] * kk[l] for k in range(d) for l in range(d)) * mask
            inv = 1.0 / (1j / dt - 0.5 * b0)
            Bu_old = _A_hat(uh, g, grid) - _lower_hat(uh, V, W, grid)
            rhs = (1j / dt) * uh + 0.5 * Bu_old
            if h_t is not None:
                rhs = rhs + fft(_interp(h_t, n, theta), d)
            if constant:
                # B equals the preconditioner, so one multiplier solve is exact
                new = inv * rhs
                iters[step] = 1
            else:
                cur = uh
                scale = max(np.linalg.norm(uh), 1e-300)
                for it in range(1, cfg.max_inner_iters + 1):
                    Bc = _A_hat(cur, g, grid) - _lower_hat(cur, V, W, grid)
                    new = inv * (rhs + 0.5 * (Bc - b0 * cur))
                    if not np.all(np.isfinite(new)):
                        raise StepError("non-finite values in the implicit solve", step)
                    delta = np.linalg.norm(new - cur)
                    cur = new
                    ref = max(np.linalg.norm(new), scale)
                    if delta <= cfg.fixed_point_tol * ref or delta == 0.0:
                        break
                else:
                    raise StepError(
                        f"implicit solve did not reach {cfg.fixed_point_tol:g} in {cfg.max_inner_iters} iterations",
                        step,
                    )
                iters[step] = it
            uh = new
            step += 1
        vals = ifft(uh, d)
        if not np.all(np.isfinite(vals)):
            raise StepError("solution became non-finite", step)
        out[n + 1] = vals
    u = SpaceTimeField(grid, out)
    l2 = np.sqrt(np.sum(np.abs(out) ** 2, axis=tuple(range(1, out.ndim))) * grid.cell_volume)
    return SolveReport(u=u, problem=p, substeps=nsub, inner_iterations=iters, l2=l2)


def free_evolution(u0: SpatialField, M: Optional[int] = None) -> SpaceTimeField:
    """Exact e^{it Laplacian} u0 on the M slices (Fourier propagation)."""
    grid = u0.grid if M is None else u0.grid.with_(M=M)
    k2 = grid.kabs() ** 2
    uh = fft(u0.values, grid.d)
    vals = np.stack([ifft(uh * np.exp(-1j * k2 * t), grid.d) for t in grid.times])
    return SpaceTimeField(grid, vals)


def _leakage(u: SpaceTimeField, j: int) -> float:
    """Mass fraction outside 2^{j-2} <= |xi| <= 2^{j+2}, worst time slice."""
    grid = u.grid
    k = grid.kabs()
    lo = 2.0 ** (j - 2) if j >= 2 else 0.0
    out = (k < lo) | (k > 2.0 ** (j + 2))
    power = np.abs(fft(u.values, grid.d)) ** 2
    power = power.reshape(grid.M, -1, *grid.shape).sum(axis=1)
    total = power.reshape(grid.M, -1).sum(axis=1)
    bad = (power * out).reshape(grid.M, -1).sum(axis=1)
    ok = total > 0
    return float(np.max(bad[ok] / total[ok])) if np.any(ok) else 0.0


def lowpass_metric(g: Optional[np.ndarray], grid: GridSpec, j: int) -> Optional[np.ndarray]:
    """g_{<j-4}: S_{<= max(j-5, 0)} applied to every entry (constants kept)."""
    if g is None:
        return None
    sym = low_symbol(grid, max(j - 5, 0))
    return ifft(fft(g, grid.d) * sym, grid.d).real


def solve_freq_localized(
    j: int,
    g,
    f_j: Optional[SpaceTimeField],
    u0_j: SpatialField,
    cfg: PropagatorConfig = PropagatorConfig(),
    grid: Optional[GridSpec] = None,
    leak_tol: float = 1e-6,
) -> SolveReport:
    """Band-j equation with coefficients low-passed below j - 4."""
    grid = grid or (f_j.grid if f_j is not None else u0_j.grid)
    p = LinearProblem(grid, u0_j, g=lowpass_metric(None if g is None else _time_array(g, grid, (grid.d, grid.d), "g"), grid, j), h=f_j)
    rep = solve_linear(p, cfg)
    leak = _leakage(rep.u, j)
    rep.band_leakage = leak
    if leak > leak_tol:
        msg = f"band {j} solution leaks {leak:.3g} of its mass outside [2^{j - 2}, 2^{j + 2}]"
        rep.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return rep


# ---------------------------------------------------------------------------
# diagnostics


def _effective_forcing(p: LinearProblem, u: SpaceTimeField) -> np.ndarray:
    """f with i u_t - A u = f, i.e. h - V.grad u - W u, on every slice."""
    grid = p.grid
    f = np.zeros_like(u.values) if p.h is None else p.h.values.copy()
    if p.V is None and p.W is None:
        return f
    for n in range(grid.M):
        uh = fft(u.values[n], grid.d)
        V = None if p.V is None else p.V[:, n]
        W = None if p.W is None else p.W[n]
        f[n] -= ifft(_lower_hat(uh, V, W, grid), grid.d)
    return f


def energy_identity_residual(report: SolveReport) -> np.ndarray:
    """|(|u^{n+1}|^2 - |u^n|^2) / (2 dt) - Im<u, f>| per output step.

    The source term is averaged over the two endpoints (trapezoid rule), so
    the residual is a consistency error of order dt^2.
    """
    p, u = report.problem, report.u
    grid = p.grid
    f = _effective_forcing(p, u)
    src = np.array([np.vdot(u.values[n], f[n]).imag for n in range(grid.M)]) * grid.cell_volume
    e = report.l2**2
    dt = grid.dt
    return np.abs((e[1:] - e[:-1]) / (2 * dt) - 0.5 * (src[1:] + src[:-1]))


# ---------------------------------------------------------------------------
# Morawetz multiplier


@dataclass(frozen=True)
class MorawetzSpec:
    """m_l along ``axis`` with m_l' = 2^-l psi^2(2^-l (x - x0)), psi = phi_0(|.|).

    On the torus the increase is balanced by the mirror bump at x0 + L/2 so
    that m_l is periodic; this needs L >= 2^{l+3}.
    """

    l: int
    axis: int = 1
    x0: float = 0.0
    constant: bool = False  # m_l = 1 everywhere, the commuting control case

    def profiles(self, grid: GridSpec):
        """(m, m', m''') on the grid, as functions of x_axis only."""
        if not 1 <= self.axis <= grid.d:
            raise ValidationError(f"axis must lie in 1..{grid.d}")
        x = grid.coords()[self.axis - 1]
        if self.constant:
            z = np.zeros(grid.shape)
            return np.ones(grid.shape), z, z
        L = grid.L
        if L < 2.0 ** (self.l + 3):
            raise ValidationError(f"box side {L} too small for the scale-{self.l} Morawetz profile")

        def bump(c):
            y = np.mod(x - c + L / 2, L) - L / 2
            return phi0(np.abs(y) * 2.0**-self.l) ** 2

        mp = 2.0**-self.l * (bump(self.x0) - bump(self.x0 + L / 2))
        k = grid.wavenumbers()[self.axis - 1]
        mh = fft(mp, grid.d)
        safe = np.where(k == 0, 1.0, k)
        m = ifft(np.where(k == 0, 0.0, mh / (1j * safe)), grid.d).real
        m3 = ifft(mh * (1j * k) ** 2, grid.d).real
        return m, mp, m3


def _B_apply(vals: np.ndarray, m: np.ndarray, grid: GridSpec, axis: int) -> np.ndarray:
    """P(m D + D m)P along ``axis``; anti-self-adjoint on the grid."""
    d = grid.d
    mask = grid.dealias_mask()
    ik = 1j * grid.wavenumbers()[axis - 1] * mask
    uh = fft(vals, d) * mask
    du = ifft(uh * ik, d)
    a = fft(m * du, d) * mask
    b = fft(m * ifft(uh, d), d) * ik
    return ifft(a + b, d)


def morawetz_terms(report: SolveReport, spec: MorawetzSpec, j: int) -> dict:
    """Per-slice <u, M u>, 2 Im<M u, f>, <u, i[A, M] u> and the localized energy."""
    p, u = report.problem, report.u
    grid = p.grid
    m, mp, m3 = spec.profiles(grid)
    f = _effective_forcing(p, u)
    cv = grid.cell_volume
    scale = 2.0**j
    ax = spec.axis
    g_all = p.g
    Mu_list, src, comm, local = [], [], [], []
    x = grid.coords()[ax - 1]
    y = np.mod(x - spec.x0 + grid.L / 2, grid.L) - grid.L / 2
    psi2 = phi0(np.abs(y) * 2.0**-spec.l) ** 2
    for n in range(grid.M):
        v = u.values[n]
        Bv = _B_apply(v, m, grid, ax)
        Mv = Bv / (1j * scale)
        Mu_list.append(np.vdot(v, Mv).real * cv)
        src.append(2 * np.vdot(Mv, f[n]).imag * cv)
        # <u, i[A, M] u> = <u, [A, B] u> / 2^j with [A, B] u = A B u - B A u
        g = None if g_all is None else g_all[:, :, n]
        vh = fft(v, grid.d)
        ABv = ifft(_A_hat(fft(Bv, grid.d), g, grid), grid.d)
        Av = ifft(_A_hat(vh, g, grid), grid.d)
        BAv = _B_apply(Av, m, grid, ax)
        comm.append(np.vdot(v, ABv - BAv).real * cv / scale)
        local.append(2.0**-spec.l * 4.0**j * np.sum(psi2 * np.abs(v) ** 2) * cv)
    return {
        "multiplier": np.array(Mu_list),
        "source": np.array(src),
        "commutator": np.array(comm),
        "local_energy": np.array(local),
        "l2_sq": report.l2**2,
    }


def morawetz_residual(report: SolveReport, spec: MorawetzSpec, j: int) -> tuple[np.ndarray, dict]:
    """Discrete d/dt<u, M u> minus the trapezoid average of the right side."""
    t = morawetz_terms(report, spec, j)
    dt = report.problem.grid.dt
    rhs = t["source"] + t["commutator"]
    res = np.abs(np.diff(t["multiplier"]) / dt - 0.5 * (rhs[1:] + rhs[:-1]))
    return res, t
