"""Littlewood-Paley projections, angular wedges and frequency-localized cutoffs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import BandOverflowError, ValidationError
from .field_core import GridSpec, SpaceTimeField, SpatialField, apply_symbol

Field = Union[SpatialField, SpaceTimeField]

__all__ = [
    "smooth_step",
    "phi0",
    "phi",
    "BumpProfile",
    "WedgeSystem",
    "DyadicBand",
    "band_symbol",
    "low_symbol",
    "high_symbol",
    "widened_symbol",
    "project",
    "band",
    "S_leq",
    "S_geq",
    "wedge_project",
    "freq_localized_cutoff",
    "dump_profiles",
]


def _h(t):
    t = np.asarray(t, dtype=float)
    pos = t > 0
    out = np.zeros_like(t)
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    """psi(t) = h(t) / (h(t) + h(1 - t)), h(t) = exp(-1/t) for t > 0."""
    a = _h(t)
    b = _h(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def phi0(r):
    """1 on [0, 1], 0 on [2, inf), smooth and decreasing between."""
    return 1.0 - smooth_step(np.asarray(r, dtype=float) - 1.0)


def phi(r, j: int):
    r = np.asarray(r, dtype=float)
    if j == 0:
        return phi0(r)
    return phi0(2.0**-j * r) - phi0(2.0 ** (1 - j) * r)


@dataclass(frozen=True)
class BumpProfile:
    """The radial profile phi_0 together with its transition nodes."""

    enter: float = 1.0  # phi_0 leaves 1 here
    leave: float = 2.0  # phi_0 reaches 0 here

    def __call__(self, r):
        return phi0(r)

    def band(self, r, j: int):
        return phi(r, j)


@dataclass(frozen=True)
class DyadicBand:
    j: int
    field: Field

    @property
    def grid(self) -> GridSpec:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values


# ---------------------------------------------------------------------------
# symbols, cached per grid


@lru_cache(maxsize=512)
def band_symbol(grid: GridSpec, j: int) -> np.ndarray:
    s = phi(grid.kabs(), j)
    s.setflags(write=False)
    return s


@lru_cache(maxsize=512)
def low_symbol(grid: GridSpec, n: int) -> np.ndarray:
    """Symbol of S_{<=n} = sum_{i<=n} S_i = phi_0(2^-n |xi|); zero for n < 0."""
    if n < 0:
        s = np.zeros(grid.shape)
    else:
        s = phi0(2.0**-n * grid.kabs())
    s.setflags(write=False)
    return s


@lru_cache(maxsize=512)
def high_symbol(grid: GridSpec, n: int) -> np.ndarray:
    """Symbol of S_{>=n} = 1 - S_{<=n-1}."""
    s = 1.0 - low_symbol(grid, n - 1)
    s.setflags(write=False)
    return s


@lru_cache(maxsize=512)
def widened_symbol(grid: GridSpec, j: int) -> np.ndarray:
    """sum_{j-1 <= l <= j+1} phi_l; equals 1 on the support of phi_j."""
    s = sum(phi(grid.kabs(), l) for l in range(max(j - 1, 0), j + 2))
    s.setflags(write=False)
    return s


def _check_band(grid: GridSpec, j: int):
    if j < 0 or j > grid.j_max:
        raise BandOverflowError(f"band {j} outside 0..{grid.j_max}")


def band(f: Field, j: int) -> Field:
    """S_j f as a plain field."""
    _check_band(f.grid, j)
    return f.with_values(apply_symbol(f.values, band_symbol(f.grid, j), f.grid.d))


def S_leq(f: Field, n: int) -> Field:
    return f.with_values(apply_symbol(f.values, low_symbol(f.grid, n), f.grid.d))


def S_geq(f: Field, n: int) -> Field:
    return f.with_values(apply_symbol(f.values, high_symbol(f.grid, n), f.grid.d))


def project(f: Field, mode: str = "band", j: int = 0):
    """``mode`` is ``"band"`` (returns a DyadicBand), ``"leq"`` or ``"geq"``."""
    if mode == "band":
        return DyadicBand(j, band(f, j))
    if mode == "leq":
        return S_leq(f, j)
    if mode == "geq":
        return S_geq(f, j)
    raise ValidationError(f"unknown projection mode {mode!r}")


# ---------------------------------------------------------------------------
# wedges


@dataclass(frozen=True)
class WedgeSystem:
    """Angular partition of unity, one cone per coordinate axis.

    For d = 1 the two "wedges" are the half-lines xi > 0 and xi < 0.  For
    d = 2, cone k is where theta_k > 0: |omega_k| > cos(60 deg); theta_k is
    flat (before normalization) within ``half_angle`` of axis k.
    """

    d: int
    half_angle: float = 45.0

    def __post_init__(self):
        if not 0.0 < self.half_angle < 60.0:
            raise ValidationError("half_angle must lie in (0, 60) degrees")

    @property
    def count(self) -> int:
        return 2 if self.d == 1 else self.d

    def theta(self, ks: tuple[np.ndarray, ...], k: int) -> np.ndarray:
        if not 1 <= k <= self.count:
            raise ValidationError(f"wedge index must be in 1..{self.count}")
        if self.d == 1:
            xi = ks[0]
            pos = np.where(xi > 0, 1.0, np.where(xi < 0, 0.0, 0.5))
            return pos if k == 1 else 1.0 - pos
        r = np.sqrt(sum(x * x for x in ks))
        safe = np.where(r > 0, r, 1.0)
        lo, hi = math.cos(math.radians(60.0)), math.cos(math.radians(self.half_angle))
        raw = [smooth_step((np.abs(x) / safe - lo) / (hi - lo)) for x in ks]
        total = sum(raw)
        with np.errstate(invalid="ignore", divide="ignore"):
            th = raw[k - 1] / total
        return np.where(r > 0, th, 1.0 / self.d)


@lru_cache(maxsize=256)
def _wedge_symbol(grid: GridSpec, j: int, k: int, half_angle: float) -> np.ndarray:
    ws = WedgeSystem(grid.d, half_angle)
    s = ws.theta(grid.wavenumbers(), k) * widened_symbol(grid, j)
    s.setflags(write=False)
    return s


def wedge_project(b: DyadicBand, k: int, half_angle: float = 45.0) -> DyadicBand:
    """Theta_{j,k}: angular cutoff k times the widened band around j."""
    g = b.grid
    sym = _wedge_symbol(g, b.j, k, float(half_angle))
    return DyadicBand(b.j, b.field.with_values(apply_symbol(b.values, sym, g.d)))


# ---------------------------------------------------------------------------
# cube cutoffs


def freq_localized_cutoff(partition, q: int, f: Field) -> Field:
    """Multiply by S_0 chi_Q for cube ``q`` of ``partition`` (a CubePartition)."""
    w = partition.chi_freq[q]
    if isinstance(f, DyadicBand):
        return DyadicBand(f.j, freq_localized_cutoff(partition, q, f.field))
    return f.with_values(f.values * w)


def dump_profiles(r: np.ndarray, j_max: int, half_angle: float = 45.0, n_angles: int = 0):
    """Rows (r, phi_0, phi_1, ..., phi_jmax, sum) for CSV export."""
    cols = [phi(r, j) for j in range(j_max + 1)]
    total = np.sum(cols, axis=0)
    header = ["r"] + [f"phi_{j}" for j in range(j_max + 1)] + ["sum"]
    rows = np.column_stack([r, *cols, total])
    return header, rows
