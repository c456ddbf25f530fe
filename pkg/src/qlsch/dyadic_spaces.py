"""Cube partitions, the l^p_j, X, Y, X_j, Y_j and l^1 Sobolev-type norms, and
frequency envelopes.

Everything that measures space-time L^2 mass on cubes goes through the
time-integrated density ``rho(x) = int_0^1 |u(t,x)|^2 dt`` (trapezoid rule in
time).  Sharp restrictions to cubes then reduce to block sums of ``rho``, and a
time-independent cutoff ``chi`` enters as ``chi^2 * rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional, Union

import numpy as np

from .errors import NormTagError, ScaleError, UndefinedEnvelopeError, ValidationError
from .field_core import (
    GridSpec,
    SpaceTimeField,
    SpatialField,
    apply_symbol,
    fft,
    ifft,
    trapezoid_weights,
)
from .lp_multipliers import DyadicBand, band_symbol, low_symbol, smooth_step

Field = Union[SpatialField, SpaceTimeField]

__all__ = [
    "CubePartition",
    "cube_partition",
    "NormTag",
    "FrequencyEnvelope",
    "density",
    "cube_sums",
    "lpj_norm",
    "X_norm",
    "Y_norm_bounds",
    "Y_upper",
    "weighted_dyadic_norm",
    "l1j_norm",
    "band_terms",
    "l1_sobolev_norm",
    "localized_norm",
    "frequency_envelope",
    "default_delta",
    "norm",
]

NORM_NAMES = ("l1jL2", "lpjU", "X", "Yupper", "Ylower", "Xj", "Yj", "l1Hs", "l1Xs", "l1Ys")


# ---------------------------------------------------------------------------
# cube partitions


def max_scale(grid: GridSpec) -> int:
    """log2 L; the box must be a power of two no finer than the grid."""
    q = math.log2(grid.L)
    if abs(q - round(q)) > 1e-12 or grid.L < 1:
        raise ScaleError(f"cube partitions need L = 2^q >= 1, got L={grid.L}")
    q = int(round(q))
    if grid.N < grid.L:
        raise ScaleError("unit cubes need at least one grid point (N >= L)")
    return q


def _eta(s):
    # rises from 0 at s=-1/4 to 1 at s=1/4; eta(s) + eta(-s) = 1
    return smooth_step(2.0 * np.asarray(s) + 0.5)


@lru_cache(maxsize=64)
def _chi_1d(N: int, L: float, j: int) -> np.ndarray:
    h = 2.0**j
    K = int(round(L / h))
    if K == 1:
        out = np.ones((1, N))
    else:
        x = np.arange(N) * (L / N)
        centers = (np.arange(K) + 0.5) * h
        y = np.mod(x[None, :] - centers[:, None] + L / 2, L) - L / 2
        out = _eta(y / h + 0.5) - _eta(y / h - 0.5)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CubePartition:
    """Tiling of the box by side-2^j cubes anchored at the origin.

    ``chi`` is a smooth partition of unity with each chi_Q supported in the
    1.5-dilate of Q; ``chi_freq`` holds the frequency-localized S_0 chi_Q.
    Cubes are flattened in C order over their per-axis indices.
    """

    grid: GridSpec
    j: int

    @property
    def side(self) -> float:
        return 2.0**self.j

    @property
    def per_axis(self) -> int:
        return int(round(self.grid.L / self.side))

    @property
    def count(self) -> int:
        return self.per_axis**self.grid.d

    @property
    def cubes(self) -> list[tuple[float, ...]]:
        """Lower corners of the cubes, in flattened order."""
        corners = np.arange(self.per_axis) * self.side
        if self.grid.d == 1:
            return [(float(c),) for c in corners]
        return [(float(a), float(b)) for a in corners for b in corners]

    @cached_property
    def chi_1d(self) -> np.ndarray:
        return _chi_1d(self.grid.N, float(self.grid.L), self.j)

    @cached_property
    def chi(self) -> np.ndarray:
        c = self.chi_1d
        if self.grid.d == 1:
            return c
        full = (c[:, None, :, None] * c[None, :, None, :]).reshape(self.count, *self.grid.shape)
        full.setflags(write=False)
        return full

    @cached_property
    def chi_freq(self) -> np.ndarray:
        s0 = low_symbol(self.grid, 0)
        out = apply_symbol(self.chi, s0, self.grid.d).real
        out.setflags(write=False)
        return out

    def weights(self, cutoff: str = "smooth") -> np.ndarray:
        """chi_Q^2 flattened to (count, N^d)."""
        return _weights(self, cutoff)

    def cube_of_points(self) -> np.ndarray:
        """Sharp cube index of every grid point."""
        P = self.grid.N // self.per_axis
        idx = np.arange(self.grid.N) // P
        if self.grid.d == 1:
            return idx
        return idx[:, None] * self.per_axis + idx[None, :]


_weight_cache: dict = {}


def _weights(part: CubePartition, cutoff: str) -> np.ndarray:
    key = (part.grid.d, part.grid.N, part.grid.L, part.j, cutoff)
    w = _weight_cache.get(key)
    if w is None:
        if cutoff == "smooth":
            base = part.chi
        elif cutoff == "freq":
            base = part.chi_freq
        else:
            raise ValidationError(f"unknown cutoff {cutoff!r}")
        w = np.ascontiguousarray((base**2).reshape(part.count, -1))
        w.setflags(write=False)
        if len(_weight_cache) > 64:
            _weight_cache.clear()
        _weight_cache[key] = w
    return w


_partition_cache: dict = {}


def cube_partition(grid: GridSpec, j: int) -> CubePartition:
    top = max_scale(grid)
    if j < 0 or j > top:
        raise ScaleError(f"cube side 2^{j} does not fit in a box of side {grid.L}")
    key = (grid.d, grid.N, grid.L, j)
    part = _partition_cache.get(key)
    if part is None:
        part = CubePartition(grid.with_(M=2, m=1), j)
        _partition_cache[key] = part
    return part


def partition_scale(grid: GridSpec, j: int) -> int:
    """Cube scale used for band j: 2^j cubes, capped at the whole box."""
    return min(j, max_scale(grid))


# ---------------------------------------------------------------------------
# densities and block sums


def density(u: Field) -> np.ndarray:
    """Component-summed |u|^2, integrated in time for space-time fields."""
    a = np.abs(u.values) ** 2
    if isinstance(u, SpaceTimeField):
        w = trapezoid_weights(u.grid.M)
        a = np.tensordot(w, a, axes=(0, 0))
    return a.sum(axis=0)


def cube_sums(rho: np.ndarray, grid: GridSpec, l: int) -> np.ndarray:
    """Integrals of ``rho`` over the sharp side-2^l cubes; leading axes are batch."""
    K = int(round(grid.L / 2.0**l))
    P = grid.N // K
    cv = grid.cell_volume
    if grid.d == 1:
        return rho.reshape(*rho.shape[:-1], K, P).sum(-1) * cv
    s = rho.reshape(*rho.shape[:-2], K, P, K, P).sum(axis=(-1, -3))
    return s * cv


def _pool(a: np.ndarray, d: int, how) -> np.ndarray:
    """Combine 2^d children into their parent cube (last d axes)."""
    if d == 1:
        K = a.shape[-1] // 2
        return how(a.reshape(*a.shape[:-1], K, 2), axis=-1)
    K = a.shape[-1] // 2
    b = a.reshape(*a.shape[:-2], K, 2, K, 2)
    return how(how(b, axis=-1), axis=-2)


def _x_sq_from_density(rho: np.ndarray, grid: GridSpec) -> np.ndarray:
    """sup_l sup_Q 2^-l * mass(Q) for a batch of densities."""
    top = max_scale(grid)
    best = None
    for l in range(top + 1):
        s = cube_sums(rho, grid, l) * 2.0**-l
        m = s.reshape(*s.shape[: s.ndim - grid.d], -1).max(axis=-1)
        best = m if best is None else np.maximum(best, m)
    return best


def _y_upper_from_density(rho: np.ndarray, grid: GridSpec) -> np.ndarray:
    """min over scales l of sum_Q 2^{l/2} ||f||_{L^2([0,1] x Q)}."""
    top = max_scale(grid)
    best = None
    for l in range(top + 1):
        s = np.sqrt(np.maximum(cube_sums(rho, grid, l), 0.0)) * 2.0 ** (l / 2)
        tot = s.reshape(*s.shape[: s.ndim - grid.d], -1).sum(axis=-1)
        best = tot if best is None else np.minimum(best, tot)
    return best


# ---------------------------------------------------------------------------
# the norms


def lpj_norm(u: Field, p=1, j: int = 0, base: str = "L2", cutoff: str = "smooth") -> float:
    """(sum_Q ||chi_Q u||_U^p)^{1/p} with U in {L2, L2tx, LinfL2}."""
    part = cube_partition(u.grid, j)
    W = part.weights(cutoff)
    cv = u.grid.cell_volume
    if base == "L2":
        if not isinstance(u, SpatialField):
            raise NormTagError("base L2 takes a spatial field")
        pieces = np.sqrt(np.maximum(W @ density(u).ravel() * cv, 0.0))
    elif base == "L2tx":
        if not isinstance(u, SpaceTimeField):
            raise NormTagError("base L2tx takes a space-time field")
        pieces = np.sqrt(np.maximum(W @ density(u).ravel() * cv, 0.0))
    elif base == "LinfL2":
        if not isinstance(u, SpaceTimeField):
            raise NormTagError("base LinfL2 takes a space-time field")
        per_t = (np.abs(u.values) ** 2).sum(axis=1).reshape(u.grid.M, -1) @ W.T * cv
        pieces = np.sqrt(np.maximum(per_t, 0.0)).max(axis=0)
    else:
        raise NormTagError(f"unsupported base norm {base!r}")
    if p in (math.inf, "inf"):
        return float(pieces.max())
    p = float(p)
    return float(np.sum(pieces**p) ** (1.0 / p))


def X_norm(u: SpaceTimeField) -> float:
    """sup_l sup_{Q in Q_l} 2^{-l/2} ||u||_{L^2([0,1] x Q)} with sharp cubes."""
    return float(math.sqrt(max(_x_sq_from_density(density(u), u.grid), 0.0)))


def Y_upper(f: SpaceTimeField) -> float:
    return float(_y_upper_from_density(density(f), f.grid))


def _y_lower(f: SpaceTimeField) -> float:
    grid = f.grid
    top = max_scale(grid)
    rho = density(f)
    if not np.any(rho > 0):
        return 0.0
    best = 0.0
    # the input's own pieces f 1_Q, all scales; X(f 1_Q)^2 built bottom-up
    H = None
    for l in range(top + 1):
        mass = cube_sums(rho, grid, l)
        here = mass * 2.0**-l
        H = here if H is None else np.maximum(here, _pool(H, grid.d, np.max))
        ok = mass > 0
        if np.any(ok):
            best = max(best, float(np.max(mass[ok] / np.sqrt(H[ok]))))
    # tent probes chi_Q e_c, time independent
    w = trapezoid_weights(grid.M)
    F = np.tensordot(w, f.values, axes=(0, 0))  # (m, *shape)
    cv = grid.cell_volume
    for l in range(top + 1):
        part = cube_partition(grid, l)
        chi = part.chi.reshape(part.count, -1)
        pair = np.abs(F.reshape(grid.m, -1) @ chi.T) * cv  # (m, count)
        xs = np.sqrt(_x_sq_from_density((chi**2).reshape(part.count, *grid.shape), grid))
        best = max(best, float(np.max(pair / xs[None, :])))
    return best


def Y_norm_bounds(f: SpaceTimeField) -> tuple[float, float]:
    """(upper, lower) with lower <= ||f||_Y <= upper."""
    if not isinstance(f, SpaceTimeField):
        raise NormTagError("Y bounds take a space-time field")
    up = Y_upper(f)
    if up == 0.0:
        return 0.0, 0.0
    return up, _y_lower(f)


def _sup_l2(u: SpaceTimeField) -> float:
    per_t = np.sqrt(np.sum(np.abs(u.values) ** 2, axis=tuple(range(1, u.values.ndim))) * u.grid.cell_volume)
    return float(per_t.max())


def _l1l2(u: SpaceTimeField) -> float:
    per_t = np.sqrt(np.sum(np.abs(u.values) ** 2, axis=tuple(range(1, u.values.ndim))) * u.grid.cell_volume)
    return float(np.dot(trapezoid_weights(u.grid.M), per_t))


def weighted_dyadic_norm(u, which: str, j: Optional[int] = None) -> float:
    """X_j = 2^{j/2} X + L^inf L^2;  Y_j <= min(2^{-j/2} Y_upper, L^1 L^2)."""
    if isinstance(u, DyadicBand):
        j, u = u.j, u.field
    if j is None:
        raise ValidationError("band index required")
    if which == "Xj":
        return 2.0 ** (j / 2) * X_norm(u) + _sup_l2(u)
    if which == "Yj":
        return min(2.0 ** (-j / 2) * Y_upper(u), _l1l2(u))
    raise NormTagError(f"unknown weighted norm {which!r}")


# ---------------------------------------------------------------------------
# l^1_j sums of band pieces


def _piece_values(uj: np.ndarray, grid: GridSpec, j: int, space: str, cutoff: str) -> np.ndarray:
    """Per-cube norms of chi_Q u_j at partition scale min(j, log2 L).

    ``uj`` is a raw array: (m, *shape) for H, (M, m, *shape) for X/Y.
    """
    part = cube_partition(grid, partition_scale(grid, j))
    W = part.weights(cutoff)
    cv = grid.cell_volume
    if space == "H":
        mass = W @ (np.abs(uj) ** 2).sum(axis=0).ravel() * cv
        return np.sqrt(np.maximum(mass, 0.0))
    M = uj.shape[0]
    dens_t = (np.abs(uj) ** 2).sum(axis=1).reshape(M, -1)  # (M, npts)
    per_t = np.sqrt(np.maximum(dens_t @ W.T * cv, 0.0))  # (M, count)
    rho = trapezoid_weights(M) @ dens_t  # (npts,)
    R = W * rho[None, :]
    R = R.reshape(part.count, *grid.shape)
    if space == "X":
        x = np.sqrt(np.maximum(_x_sq_from_density(R, grid), 0.0))
        return 2.0 ** (j / 2) * x + per_t.max(axis=0)
    if space == "Y":
        y = _y_upper_from_density(R, grid)
        l1l2 = trapezoid_weights(M) @ per_t
        return np.minimum(2.0 ** (-j / 2) * y, l1l2)
    raise NormTagError(f"unknown space {space!r}")


def l1j_norm(u, j: Optional[int] = None, space: str = "X", cutoff: str = "freq") -> float:
    """sum_Q ||chi_Q u||_{U_j} for a band-j input (U_j = L^2, X_j or Y_j)."""
    if isinstance(u, DyadicBand):
        j, u = u.j, u.field
    return float(_piece_values(u.values, u.grid, j, space, cutoff).sum())


def _check_space(u: Field, space: str):
    if space == "H" and not isinstance(u, SpatialField):
        raise NormTagError("l1H^s takes a spatial field")
    if space in ("X", "Y") and not isinstance(u, SpaceTimeField):
        raise NormTagError(f"l1{space}^s takes a space-time field")
    if space not in ("H", "X", "Y"):
        raise NormTagError(f"unknown space {space!r}")


def band_terms(u: Field, s: float, space: str = "H", cutoff: str = "freq", bands=None) -> np.ndarray:
    """Per-band summands 2^{sj} ||S_j u||_{l^1_j U_j}, j = 0..j_max."""
    _check_space(u, space)
    grid = u.grid
    js = range(grid.j_max + 1) if bands is None else bands
    uh = fft(u.values, grid.d)
    out = np.zeros(grid.j_max + 1)
    for j in js:
        uj = ifft(uh * band_symbol(grid, j), grid.d)
        out[j] = 2.0 ** (s * j) * _piece_values(uj, grid, j, space, cutoff).sum()
    return out


def localized_norm(values: np.ndarray, grid: GridSpec, s: float, space: str, k: int, cutoff: str = "freq") -> float:
    """l^1 U^s norm of a raw array whose spectrum sits in bands k-1..k+1."""
    uh = fft(values, grid.d)
    acc = 0.0
    for j in range(max(k - 1, 0), min(k + 1, grid.j_max) + 1):
        uj = ifft(uh * band_symbol(grid, j), grid.d)
        acc += (2.0 ** (s * j) * _piece_values(uj, grid, j, space, cutoff).sum()) ** 2
    return float(np.sqrt(acc))


def l1_sobolev_norm(u: Field, s: float, space: str = "H", cutoff: str = "freq") -> float:
    """(sum_j 2^{2sj} ||S_j u||^2_{l^1_j U_j})^{1/2} over the resolvable bands."""
    return float(np.sqrt(np.sum(band_terms(u, s, space, cutoff) ** 2)))


# ---------------------------------------------------------------------------
# frequency envelopes


def default_delta(s: float, d: int) -> float:
    gap = s - d / 2 - 2
    if gap > 0:
        return min(0.25, gap / 2)
    return 0.1


@dataclass(frozen=True)
class FrequencyEnvelope:
    delta: float
    a: np.ndarray
    norm_of_u: float
    band_norms: np.ndarray
    C: float = 4.0

    @property
    def slowly_varying(self) -> bool:
        a = self.a
        j = np.arange(len(a))
        bound = 2.0 ** (self.delta * np.abs(j[:, None] - j[None, :])) * a[None, :]
        return bool(np.all(a[:, None] <= bound * (1 + 1e-12)))

    @property
    def a0_admissible(self) -> bool:
        return 1 / self.C <= self.a[0] <= self.C

    @property
    def square_sum_admissible(self) -> bool:
        s = float(np.sum(self.a**2))
        return 1 / self.C <= s <= self.C

    @property
    def dominates(self) -> bool:
        return bool(np.all(self.band_norms <= self.a * self.norm_of_u * (1 + 1e-12)))

    @property
    def flags(self) -> dict:
        return {
            "slowly_varying": self.slowly_varying,
            "a0_admissible": self.a0_admissible,
            "square_sum_admissible": self.square_sum_admissible,
            "dominates": self.dominates,
        }

    @property
    def admissible(self) -> bool:
        return self.slowly_varying and self.a0_admissible and self.dominates


def envelope_from_band_norms(b: np.ndarray, delta: float) -> FrequencyEnvelope:
    b = np.asarray(b, dtype=float)
    total = float(np.sqrt(np.sum(b**2)))
    if total == 0.0:
        raise UndefinedEnvelopeError("envelope of a zero field is undefined")
    j = np.arange(len(b))
    decay = 2.0 ** (-delta * np.abs(j[:, None] - j[None, :]))
    a = 2.0 ** (-delta * j) + (decay * b[None, :]).max(axis=1) / total
    return FrequencyEnvelope(delta, a, total, b)


def frequency_envelope(
    u: Field, s: float, space: str = "H", delta: Optional[float] = None, cutoff: str = "freq"
) -> FrequencyEnvelope:
    """a_j = 2^{-delta j} + ||u||^{-1} max_k 2^{-delta|j-k|} ||S_k u||."""
    if delta is None:
        delta = default_delta(s, u.grid.d)
    return envelope_from_band_norms(band_terms(u, s, space, cutoff), delta)


# ---------------------------------------------------------------------------
# tag dispatch


@dataclass(frozen=True)
class NormTag:
    name: str
    s: Optional[float] = None
    p: Optional[float] = None
    j: Optional[int] = None
    base: Optional[str] = None

    def __post_init__(self):
        if self.name not in NORM_NAMES:
            raise NormTagError(f"unknown norm {self.name!r}")
        if self.name in ("l1Hs", "l1Xs", "l1Ys") and self.s is None:
            raise NormTagError(f"{self.name} needs s")
        if self.name in ("l1jL2", "lpjU", "Xj", "Yj") and self.j is None:
            raise NormTagError(f"{self.name} needs j")
        if self.name == "lpjU" and self.p is None:
            raise NormTagError("lpjU needs p")

    def label(self) -> str:
        parts = [f"{k}={v}" for k, v in (("s", self.s), ("p", self.p), ("j", self.j), ("base", self.base)) if v is not None]
        return self.name + ("[" + ",".join(parts) + "]" if parts else "")


def norm(u: Field, tag: NormTag) -> float:
    n = tag.name
    if n == "l1jL2":
        base = "L2" if isinstance(u, SpatialField) else "L2tx"
        return lpj_norm(u, 1, tag.j, base)
    if n == "lpjU":
        base = tag.base or ("L2" if isinstance(u, SpatialField) else "L2tx")
        return lpj_norm(u, tag.p, tag.j, base)
    if n == "X":
        return X_norm(u)
    if n == "Yupper":
        return Y_norm_bounds(u)[0]
    if n == "Ylower":
        return Y_norm_bounds(u)[1]
    if n in ("Xj", "Yj"):
        return weighted_dyadic_norm(u, n, tag.j)
    space = {"l1Hs": "H", "l1Xs": "X", "l1Ys": "Y"}[n]
    return l1_sobolev_norm(u, tag.s, space)
