"""Periodic grids, complex fields, spectral transforms and the DFF1 file format.

Every array handled here keeps its spatial axes last.  A spatial field has
shape ``(m, N)`` or ``(m, N, N)``; a space-time field prepends the time axis,
``(M, m, N[, N])``.  Most helpers operate on raw arrays with that convention
so the same code serves both field types.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Union

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    DimensionOverflowError,
    HeaderError,
    TruncatedPayloadError,
)

__all__ = [
    "GridSpec",
    "SpatialField",
    "SpaceTimeField",
    "spectral_transform",
    "derivative",
    "gradient",
    "inner_product",
    "spacetime_inner_product",
    "l2_norm",
    "dealias",
    "product",
    "fft",
    "ifft",
    "trapezoid_weights",
    "write_field",
    "read_field",
    "field_io",
]


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the box ``[0, L)^d`` plus ``M`` time samples on [0, 1]."""

    d: int = 1
    N: int = 256
    L: float = 32.0
    M: int = 65
    m: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigurationError(f"d must be 1 or 2, got {self.d}")
        if not _is_power_of_two(int(self.N)) or self.N < 16:
            raise ConfigurationError(f"N must be a power of two >= 16, got {self.N}")
        if self.M < 2:
            raise ConfigurationError(f"M must be >= 2, got {self.M}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ConfigurationError(f"L must be positive, got {self.L}")
        if self.m < 1:
            raise ConfigurationError(f"m must be >= 1, got {self.m}")
        if self.j_max < 0:
            raise ConfigurationError(
                f"grid resolves no dyadic band (nyquist={self.nyquist:.3g})"
            )

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @property
    def nyquist(self) -> float:
        return math.pi * self.N / self.L

    @property
    def j_max(self) -> int:
        # two-band margin below Nyquist
        return int(math.floor(math.log2(self.nyquist) - 2 + 1e-12))

    @property
    def dt(self) -> float:
        return 1.0 / (self.M - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.M)

    def with_(self, **changes) -> "GridSpec":
        params = dict(d=self.d, N=self.N, L=self.L, M=self.M, m=self.m)
        params.update(changes)
        return GridSpec(**params)

    # cached derived arrays -------------------------------------------------

    def axis(self) -> np.ndarray:
        return _axis(self.N, self.L)

    def coords(self) -> tuple[np.ndarray, ...]:
        return _coords(self.d, self.N, self.L)

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Per-axis wavenumber arrays broadcast to the full grid shape."""
        return _wavenumbers(self.d, self.N, self.L)

    def kabs(self) -> np.ndarray:
        return _kabs(self.d, self.N, self.L)

    def dealias_mask(self) -> np.ndarray:
        return _dealias_mask(self.d, self.N, self.L)


@lru_cache(maxsize=64)
def _axis(N: int, L: float) -> np.ndarray:
    a = np.arange(N) * (L / N)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=64)
def _coords(d: int, N: int, L: float):
    a = _axis(N, L)
    out = tuple(np.meshgrid(*([a] * d), indexing="ij"))
    for c in out:
        c.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def _wavenumbers(d: int, N: int, L: float):
    k = 2 * np.pi * np.fft.fftfreq(N, d=L / N)
    out = tuple(np.meshgrid(*([k] * d), indexing="ij"))
    for c in out:
        c.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def _kabs(d: int, N: int, L: float):
    ks = _wavenumbers(d, N, L)
    r = np.sqrt(sum(k * k for k in ks))
    r.setflags(write=False)
    return r


@lru_cache(maxsize=64)
def _dealias_mask(d: int, N: int, L: float):
    nyq = math.pi * N / L
    ks = _wavenumbers(d, N, L)
    mask = np.ones(ks[0].shape, dtype=bool)
    for k in ks:
        mask &= np.abs(k) <= (2.0 / 3.0) * nyq
    mask.setflags(write=False)
    return mask


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.complex128)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpatialField:
    """m-component complex field on one time slice; ``values.shape == (m, *grid.shape)``."""

    grid: GridSpec
    values: np.ndarray
    fourier: bool = False

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == self.grid.d:
            v = v[None]
        expected = (self.grid.m, *self.grid.shape)
        if v.shape != expected:
            raise DimensionError(f"field shape {v.shape} != {expected}")
        if not np.all(np.isfinite(v)):
            raise DimensionError("field has non-finite entries")
        object.__setattr__(self, "values", _frozen(v))

    def with_values(self, values: np.ndarray) -> "SpatialField":
        return SpatialField(self.grid, values, self.fourier)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """M time slices at ``t_n = n/(M-1)``; ``values.shape == (M, m, *grid.shape)``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        expected = (self.grid.M, self.grid.m, *self.grid.shape)
        if v.shape != expected:
            raise DimensionError(f"space-time shape {v.shape} != {expected}")
        if not np.all(np.isfinite(v)):
            raise DimensionError("field has non-finite entries")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_slices(cls, slices) -> "SpaceTimeField":
        slices = list(slices)
        grid = slices[0].grid
        if any(s.grid != grid for s in slices):
            raise DimensionError("slices do not share one grid")
        grid = grid.with_(M=len(slices))
        return cls(grid, np.stack([s.values for s in slices]))

    @classmethod
    def constant_in_time(cls, f: SpatialField) -> "SpaceTimeField":
        v = np.broadcast_to(f.values, (f.grid.M, *f.values.shape))
        return cls(f.grid, v)

    @property
    def slices(self) -> list[SpatialField]:
        return [SpatialField(self.grid, v) for v in self.values]

    def slice(self, n: int) -> SpatialField:
        return SpatialField(self.grid, self.values[n])

    def with_values(self, values: np.ndarray) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


Field = Union[SpatialField, SpaceTimeField]


def _vals(x):
    return x.values if isinstance(x, (SpatialField, SpaceTimeField)) else x


# ---------------------------------------------------------------------------
# transforms


def _axes(d: int) -> tuple[int, ...]:
    return tuple(range(-d, 0))


def fft(a: np.ndarray, d: int) -> np.ndarray:
    return np.fft.fftn(a, axes=_axes(d))


def ifft(a: np.ndarray, d: int) -> np.ndarray:
    return np.fft.ifftn(a, axes=_axes(d))


def apply_symbol(a: np.ndarray, symbol: np.ndarray, d: int) -> np.ndarray:
    """Fourier multiplier with a grid-shaped symbol over the last d axes."""
    return ifft(fft(a, d) * symbol, d)


def spectral_transform(
    f: SpatialField, direction: Literal["forward", "inverse"] = "forward"
) -> SpatialField:
    """Normalized DFT: forward maps the constant 1 to a unit zero mode.

    With this scaling ``||f||_{L^2} = L^{d/2} * ||c||_{l^2}``.
    """
    g = f.grid
    n = g.N**g.d
    if direction == "forward":
        if f.fourier:
            raise ValueError("field is already in Fourier space")
        return SpatialField(g, fft(f.values, g.d) / n, fourier=True)
    if direction == "inverse":
        if not f.fourier:
            raise ValueError("field is not in Fourier space")
        return SpatialField(g, ifft(f.values, g.d) * n, fourier=False)
    raise ValueError(f"unknown direction {direction!r}")


def coefficient_norm(c: SpatialField) -> float:
    return float(c.grid.L ** (c.grid.d / 2) * np.sqrt(np.sum(np.abs(c.values) ** 2)))


def derivative_array(a: np.ndarray, grid: GridSpec, axis: int, order: int = 1) -> np.ndarray:
    if not 1 <= axis <= grid.d:
        raise DimensionError(f"axis must lie in 1..{grid.d}")
    k = grid.wavenumbers()[axis - 1]
    sym = (1j * k) ** order
    if order % 2 == 1:
        # odd derivatives of the Nyquist mode are not representable
        sym = np.where(np.isclose(np.abs(k), grid.nyquist), 0.0, sym)
    return apply_symbol(a, sym, grid.d)


def derivative(f: Field, axis: int = 1) -> Field:
    """Exact spectral derivative along ``axis`` (1-based)."""
    return f.with_values(derivative_array(f.values, f.grid, axis))


def gradient(f: Field) -> list:
    return [derivative(f, a) for a in range(1, f.grid.d + 1)]


def dealias(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Project onto ``|xi|_inf <= (2/3) Nyquist``."""
    return ifft(fft(a, grid.d) * grid.dealias_mask(), grid.d)


def product(grid: GridSpec, *arrays: np.ndarray) -> np.ndarray:
    out = arrays[0]
    for a in arrays[1:]:
        out = out * a
    return dealias(out, grid)


# ---------------------------------------------------------------------------
# pairings and norms


def _check_same(f, g):
    if f.grid != g.grid and (f.grid.d, f.grid.N, f.grid.L, f.grid.m) != (
        g.grid.d,
        g.grid.N,
        g.grid.L,
        g.grid.m,
    ):
        raise DimensionError("fields live on different grids")
    if f.values.shape != g.values.shape:
        raise DimensionError(f"shape mismatch {f.values.shape} vs {g.values.shape}")


def inner_product(f: SpatialField, g: SpatialField) -> complex:
    """``<f, g> = sum conj(f) g (L/N)^d``, conjugate-linear in the first slot."""
    _check_same(f, g)
    return complex(np.vdot(f.values, g.values) * f.grid.cell_volume)


def trapezoid_weights(M: int) -> np.ndarray:
    w = np.full(M, 1.0 / (M - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def spacetime_inner_product(f: SpaceTimeField, g: SpaceTimeField) -> complex:
    """Space-time L^2 pairing on [0,1] x box with trapezoid weights in time."""
    _check_same(f, g)
    w = trapezoid_weights(f.grid.M)
    per_t = np.sum(f.values.conj() * g.values, axis=tuple(range(1, f.values.ndim)))
    return complex(np.dot(w, per_t) * f.grid.cell_volume)


def l2_norm(f: Field) -> float:
    """Spatial L^2 norm; for a space-time field, the L^2_{t,x} norm."""
    if isinstance(f, SpaceTimeField):
        return math.sqrt(max(spacetime_inner_product(f, f).real, 0.0))
    return math.sqrt(max(inner_product(f, f).real, 0.0))


def l2_per_time(f: SpaceTimeField) -> np.ndarray:
    axes = tuple(range(1, f.values.ndim))
    return np.sqrt(np.sum(np.abs(f.values) ** 2, axis=axes) * f.grid.cell_volume)


# ---------------------------------------------------------------------------
# DFF1 I/O

_MAGIC = b"DFF1"
_HEADER = struct.Struct("<4sBBHIId20x")
HEADER_SIZE = _HEADER.size  # 44
_MAX_POINTS = 1 << 34


def _payload_order(values: np.ndarray, d: int) -> np.ndarray:
    # stored arrays index (..., x1, x2); the file wants x fastest
    if d == 2:
        return np.swapaxes(values, -1, -2)
    return values


def _to_bytes(field: Field) -> bytes:
    g = field.grid
    if isinstance(field, SpaceTimeField):
        flags, M = 1, g.M
    else:
        if field.fourier:
            raise ValueError("only physical-space fields are written")
        flags, M = 0, 1
    header = _HEADER.pack(_MAGIC, g.d, flags, g.m, g.N, M, float(g.L))
    payload = np.ascontiguousarray(_payload_order(field.values, g.d)).astype("<c16")
    return header + payload.tobytes()


def write_field(path, field: Field) -> None:
    """Write atomically: a temp file in the target directory is renamed into place."""
    data = _to_bytes(field)
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def parse_field(data: bytes) -> Field:
    if len(data) < HEADER_SIZE:
        raise HeaderError(f"file shorter than the {HEADER_SIZE}-byte header")
    magic, d, flags, m, N, M, L = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise HeaderError(f"bad magic {magic!r}")
    if data[24:HEADER_SIZE] != bytes(HEADER_SIZE - 24):
        raise HeaderError("reserved header bytes are not zero")
    if d not in (1, 2) or flags & ~1:
        raise HeaderError(f"unsupported d={d} or flags={flags}")
    spacetime = bool(flags & 1)
    n_slices = M if spacetime else 1
    if not spacetime and M != 1:
        raise HeaderError("spatial field must declare M=1")
    points = n_slices * m * N**d
    if points > _MAX_POINTS or m == 0 or N == 0 or n_slices == 0:
        raise DimensionOverflowError(f"declared size {n_slices}x{m}x{N}^{d} not acceptable")
    need = HEADER_SIZE + 16 * points
    if len(data) < need:
        raise TruncatedPayloadError(f"payload has {len(data) - HEADER_SIZE} bytes, need {need - HEADER_SIZE}")
    if len(data) > need:
        raise HeaderError("trailing bytes after payload")
    try:
        grid = GridSpec(d=d, N=N, L=L, M=max(M, 2), m=m)
    except ConfigurationError as exc:
        raise HeaderError(str(exc)) from exc
    shape = (n_slices, m) + (N,) * d
    vals = np.frombuffer(data, dtype="<c16", offset=HEADER_SIZE, count=points).reshape(shape)
    vals = _payload_order(vals, d).astype(np.complex128)
    if spacetime:
        return SpaceTimeField(grid, vals)
    return SpatialField(grid.with_(M=2) if M < 2 else grid, vals[0])


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_field(data)


def field_io(path, field: Field | None = None, direction: Literal["read", "write"] = "read"):
    if direction == "write":
        if field is None:
            raise ValueError("write needs a field")
        write_field(path, field)
        return None
    if direction == "read":
        return read_field(path)
    raise ValueError(f"unknown direction {direction!r}")
