"""Periodic grid, spectral fields and the Fourier-multiplier operators.

The torus has side ``2*pi`` and integer wavenumbers.  A field is stored as its
half spectrum (``numpy.fft.rfft2`` layout, shape ``(n, n//2 + 1)``) normalised so
that ``coeffs[k] = (4 pi^2)^-1 * integral(theta * exp(-i k.x))``.  With this
choice Parseval reads ``||theta||_{L2}^2 = 4 pi^2 * sum_k |theta_k|^2``.

Axis 0 of physical arrays is ``x1`` and axis 1 is ``x2``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from sqgattr.errors import ConfigurationError, PreconditionError

TWO_PI = 2.0 * math.pi
AREA = TWO_PI**2

CHECKPOINT_MAGIC = b"SQGF"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIdd")


@dataclass(frozen=True)
class TorusGrid:
    """Uniform ``n x n`` collocation grid on the 2*pi-periodic torus."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 8 or self.n % 2:
            raise ConfigurationError(f"grid size n must be an even integer >= 8, got {self.n!r}", key="n")

    @property
    def side(self) -> float:
        return TWO_PI

    @property
    def dx(self) -> float:
        return TWO_PI / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1)

    @property
    def kmax(self) -> int:
        """Largest retained |k| under the 2/3 rule (strictly below n/3)."""
        return math.ceil(self.n / 3) - 1

    @cached_property
    def k1(self) -> np.ndarray:
        return np.rint(np.fft.fftfreq(self.n) * self.n)[:, None]

    @cached_property
    def k2(self) -> np.ndarray:
        return np.arange(self.n // 2 + 1, dtype=float)[None, :]

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k1**2 + self.k2**2)

    @cached_property
    def parseval_weights(self) -> np.ndarray:
        """Multiplicity of each half-spectrum entry in the full spectrum."""
        w = np.full(self.shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        return w

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        return self.kmag <= self.kmax

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        m = np.ones(self.shape, dtype=bool)
        m[self.n // 2, :] = False
        m[:, -1] = False
        return m

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.n) * self.dx
        return np.meshgrid(x, x, indexing="ij")

    @cached_property
    def offsets(self) -> np.ndarray:
        """Minimal-image integer offsets, index ``i`` maps to ``i`` or ``i - n``."""
        n = self.n
        return (np.arange(n) + n // 2) % n - n // 2

    def multiplier_power(self, s: float) -> np.ndarray:
        """``|k|^s`` with the zero mode mapped to 0."""
        km = self.kmag.copy()
        km[0, 0] = 1.0
        out = km**s
        out[0, 0] = 0.0
        return out


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Mean-free real scalar field held as normalised half-spectrum coefficients."""

    grid: TorusGrid
    coeffs: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        c[0, 0] = 0.0
        c[~self.grid.nyquist_mask] = 0.0
        # the k2 = 0 column must be conjugate symmetric in k1
        col = c[:, 0]
        with np.errstate(invalid="ignore"):
            col[1 : self.grid.n // 2] = 0.5 * (col[1 : self.grid.n // 2] + np.conj(col[-1 : -self.grid.n // 2 : -1]))
        col[-1 : -self.grid.n // 2 : -1] = np.conj(col[1 : self.grid.n // 2])
        object.__setattr__(self, "coeffs", _frozen(c))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> SpectralField:
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_physical(cls, grid: TorusGrid, values: np.ndarray) -> SpectralField:
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n, grid.n):
            raise ValueError(f"physical array shape {values.shape} does not match n={grid.n}")
        return cls(grid, np.fft.rfft2(values) / grid.n**2)

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> SpectralField:
        x1, x2 = grid.coords
        return cls.from_physical(grid, fn(x1, x2))

    def physical(self) -> np.ndarray:
        n = self.grid.n
        return np.fft.irfft2(self.coeffs * n**2, s=(n, n))

    def with_coeffs(self, coeffs: np.ndarray) -> SpectralField:
        return SpectralField(self.grid, coeffs)

    def __add__(self, other: SpectralField) -> SpectralField:
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __neg__(self) -> SpectralField:
        return self.with_coeffs(-self.coeffs)

    def __mul__(self, scalar: float) -> SpectralField:
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VelocityField:
    grid: TorusGrid
    u1: SpectralField
    u2: SpectralField

    def divergence_coeffs(self) -> np.ndarray:
        return 1j * self.grid.k1 * self.u1.coeffs + 1j * self.grid.k2 * self.u2.coeffs

    def physical(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u1.physical(), self.u2.physical()

    def l2_norm(self) -> float:
        return math.hypot(sobolev_norm(self.u1, 0.0), sobolev_norm(self.u2, 0.0))


@dataclass(frozen=True)
class SpectrumRecipe:
    """Random-phase initial data with ``|theta_k| = amplitude * |k|^-a`` on a band."""

    a: float = 1.0
    k_min: float = 1.0
    k_max: float = 4.0
    amplitude: float = 1.0
    seed: int = 0


# -- multipliers --------------------------------------------------------------


def lambda_pow(field: SpectralField, s: float) -> SpectralField:
    """Apply ``Lambda^s``; negative ``s`` is fine since the mean vanishes."""
    return field.with_coeffs(field.coeffs * field.grid.multiplier_power(s))


def riesz_perp(field: SpectralField) -> VelocityField:
    """Velocity ``u = grad^perp Lambda^-1 theta = (-R2 theta, R1 theta)``."""
    g = field.grid
    inv = g.multiplier_power(-1.0)
    u1 = field.with_coeffs(-1j * g.k2 * inv * field.coeffs)
    u2 = field.with_coeffs(1j * g.k1 * inv * field.coeffs)
    return VelocityField(g, u1, u2)


def gradient(field: SpectralField) -> tuple[SpectralField, SpectralField]:
    g = field.grid
    return field.with_coeffs(1j * g.k1 * field.coeffs), field.with_coeffs(1j * g.k2 * field.coeffs)


def dealias(field: SpectralField) -> SpectralField:
    return field.with_coeffs(np.where(field.grid.dealias_mask, field.coeffs, 0.0))


def is_dealiased(field: SpectralField) -> bool:
    return not np.any(field.coeffs[~field.grid.dealias_mask])


def inner(a: SpectralField, b: SpectralField) -> float:
    """``L2`` inner product, exact in coefficients."""
    w = a.grid.parseval_weights
    return float(AREA * np.sum(w * np.real(a.coeffs * np.conj(b.coeffs))))


def sobolev_norm(field: SpectralField, s: float) -> float:
    """Homogeneous ``H^s`` norm ``||Lambda^s phi||_{L2}``."""
    g = field.grid
    energy = np.sum(g.parseval_weights * g.multiplier_power(2.0 * s) * np.abs(field.coeffs) ** 2)
    return float(math.sqrt(AREA * energy))


def l2_norm(field: SpectralField) -> float:
    return sobolev_norm(field, 0.0)


def linf_norm(field: SpectralField) -> float:
    return float(np.max(np.abs(field.physical())))


# -- finite-difference suprema --------------------------------------------------


@dataclass(frozen=True)
class ShiftTable:
    """``sup[a, b] = max_x |theta(x + h) - theta(x)|`` for every grid shift ``h``.

    ``dist[a, b]`` is the minimal-image length of the shift.
    """

    dist: np.ndarray
    sup: np.ndarray


def shift_table(field: SpectralField | np.ndarray, grid: TorusGrid | None = None) -> ShiftTable:
    if isinstance(field, SpectralField):
        grid = field.grid
        vals = field.physical()
    else:
        vals = np.asarray(field, dtype=float)
        if grid is None:
            grid = TorusGrid(vals.shape[0])
    n = grid.n
    sup = np.empty((n, n))
    for a in range(n):
        rolled = np.roll(vals, -a, axis=0)
        ext = np.concatenate([rolled, rolled], axis=1)
        win = sliding_window_view(ext, n, axis=1)[:, :n, :]
        sup[a] = np.max(np.abs(win - vals[:, None, :]), axis=(0, 2))
    off = grid.offsets * grid.dx
    dist = np.hypot(off[:, None], off[None, :])
    return ShiftTable(dist=dist, sup=sup)


def _pair_mask(table: ShiftTable, min_dist: float | None, max_dist: float | None) -> np.ndarray:
    hi = math.pi if max_dist is None else min(max_dist, math.pi)
    mask = (table.dist > 0) & (table.dist <= hi * (1 + 1e-12))
    if min_dist is not None:
        mask &= table.dist >= min_dist * (1 - 1e-12)
    return mask


def _as_table(field: SpectralField | ShiftTable) -> ShiftTable:
    return field if isinstance(field, ShiftTable) else shift_table(field)


def _weighted_sup(table: ShiftTable, beta: float, xi: float, mask: np.ndarray) -> float:
    d = table.dist[mask]
    denom = d**beta if xi == 0 else (xi**2 + d**2) ** (beta / 2)
    if d.size == 0:
        return 0.0
    return float(np.max(table.sup[mask] / denom))


def holder_seminorm(
    field: SpectralField | ShiftTable,
    beta: float,
    *,
    min_dist: float | None = None,
    max_dist: float | None = None,
) -> float:
    """Grid ``C^beta`` seminorm over shifts with ``0 < |h| <= pi``.

    ``min_dist``/``max_dist`` restrict the admissible shift lengths further.
    """
    if not 0 < beta <= 1:
        raise PreconditionError(f"beta must lie in (0, 1], got {beta}")
    table = _as_table(field)
    return _weighted_sup(table, beta, 0.0, _pair_mask(table, min_dist, max_dist))


def weighted_w_sup(field: SpectralField | ShiftTable, beta: float, xi: float) -> float:
    """``max |delta_h theta| / (xi^2 + |h|^2)^(beta/2)`` over grid pairs."""
    if not 0 < beta <= 0.25:
        raise PreconditionError(f"beta must lie in (0, 1/4], got {beta}")
    if xi < 0:
        raise PreconditionError(f"xi must be nonnegative, got {xi}")
    table = _as_table(field)
    return _weighted_sup(table, beta, float(xi), _pair_mask(table, None, None))


# -- initial data -----------------------------------------------------------------


def generate_field(recipe: SpectrumRecipe, grid: TorusGrid) -> SpectralField:
    if recipe.k_min <= 0 or recipe.k_max < recipe.k_min:
        raise ConfigurationError(f"invalid band [{recipe.k_min}, {recipe.k_max}]", key="spectrum.band")
    if recipe.k_max > grid.kmax:
        raise ConfigurationError(
            f"band edge {recipe.k_max} exceeds the dealiasing radius {grid.kmax} for n={grid.n}",
            key="spectrum.band",
        )
    # phases live on the wavenumber box |k|_inf <= K, so a seed gives the same field on every grid
    K = int(math.floor(recipe.k_max))
    box = np.random.default_rng(recipe.seed).uniform(0.0, TWO_PI, size=(2 * K + 1, K + 1))
    phases = np.zeros(grid.shape)
    rows = np.arange(-K, K + 1) % grid.n
    phases[rows, : K + 1] = box
    band = (grid.kmag >= recipe.k_min) & (grid.kmag <= recipe.k_max) & grid.nyquist_mask
    modulus = recipe.amplitude * grid.multiplier_power(-recipe.a)
    c = np.where(band, modulus * np.exp(1j * phases), 0.0)
    half = grid.n // 2
    c[-1:-half:-1, 0] = np.conj(c[1:half, 0])
    return SpectralField(grid, c)


# -- checkpoints ------------------------------------------------------------------


def write_checkpoint(path: str | Path, field: SpectralField, gamma: float, time: float) -> None:
    """Little-endian binary: header then ``n*(n/2+1)`` complex128 coefficients."""
    n = field.grid.n
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, n, float(gamma), float(time)))
        fh.write(np.ascontiguousarray(field.coeffs, dtype="<c16").tobytes(order="C"))


def read_checkpoint(path: str | Path) -> tuple[SpectralField, float, float]:
    raw = Path(path).read_bytes()
    magic, version, n, gamma, time = _HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    grid = TorusGrid(int(n))
    expected = grid.shape[0] * grid.shape[1] * 16
    body = raw[_HEADER.size :]
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    coeffs = np.frombuffer(body, dtype="<c16").reshape(grid.shape)
    return SpectralField(grid, coeffs), gamma, time
