"""Frequency lattices on the d-torus, grid vectors and weighted Sobolev-type norms."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

MAX_POINTS = 2 ** 21


class ZeroModeError(ValueError):
    pass


class ZeroMode(str, Enum):
    PROJECT = "project"
    REJECT = "reject"
    SHIFT = "shift"


@dataclass(frozen=True)
class FreqGrid:
    """Integer frequency lattice {-n/2, ..., n/2-1}^d of the 2*pi torus."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two >= 4, got {self.n}")
        if self.n ** self.d > MAX_POINTS:
            raise ValueError(f"grid of {self.n}^{self.d} points exceeds the {MAX_POINTS} point limit")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    @cached_property
    def xi(self) -> np.ndarray:
        """Frequencies as a (d, N) float array in FFT order."""
        k = np.fft.fftfreq(self.n, 1.0 / self.n)
        axes = np.meshgrid(*([k] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes]).astype(float)

    @cached_property
    def abs2(self) -> np.ndarray:
        return np.sum(self.xi ** 2, axis=0)

    @property
    def zero_index(self) -> int:
        return 0

    def index_of(self, k) -> int:
        k = np.atleast_1d(np.asarray(k, dtype=int))
        idx = np.mod(k, self.n)
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def points(self) -> np.ndarray:
        """Physical grid points x_j = 2*pi*j/n as (d, N)."""
        x = 2 * np.pi * np.arange(self.n) / self.n
        axes = np.meshgrid(*([x] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes])


def make_grid(d: int, n: int) -> FreqGrid:
    return FreqGrid(int(d), int(n))


@dataclass(frozen=True)
class SpaceTag:
    s: float = 0.0
    p: float = 2.0
    homogeneous: bool = False
    components: int = 1
    zero_mode: ZeroMode = ZeroMode.PROJECT

    def __post_init__(self):
        if not 1 < self.p < np.inf:
            raise ValueError(f"integrability exponent must lie in (1, inf), got {self.p}")
        if self.components < 1:
            raise ValueError("components must be positive")
        object.__setattr__(self, "zero_mode", ZeroMode(self.zero_mode))

    @property
    def parts(self) -> tuple["SpaceTag", ...]:
        return (self,)

    def with_p(self, p: float) -> "SpaceTag":
        return SpaceTag(self.s, p, self.homogeneous, self.components, self.zero_mode)

    def scalar_weight(self, grid: FreqGrid) -> tuple[np.ndarray, np.ndarray]:
        """Per-mode weight and activity mask for a single component."""
        a2 = grid.abs2
        active = np.ones(grid.size, dtype=bool)
        if not self.homogeneous:
            return (1.0 + a2) ** (self.s / 2), active
        w = np.empty(grid.size)
        nz = a2 > 0
        w[nz] = a2[nz] ** (self.s / 2)
        if self.zero_mode is ZeroMode.SHIFT:
            w[~nz] = 1.0
        elif self.zero_mode is ZeroMode.PROJECT:
            w[~nz] = 0.0
            active[~nz] = False
        else:
            w[~nz] = 0.0 if self.s > 0 else (1.0 if self.s == 0 else np.inf)
        return w, active

    def weights(self, grid: FreqGrid) -> tuple[np.ndarray, np.ndarray]:
        """Weights and mask of shape (N, components)."""
        parts = [p.scalar_weight(grid) for p in self.parts for _ in range(p.components)]
        w = np.stack([p[0] for p in parts], axis=1)
        m = np.stack([p[1] for p in parts], axis=1)
        return w, m

    def compatible(self, other: "SpaceTag") -> bool:
        return self.components == other.components


@dataclass(frozen=True)
class ProductTag(SpaceTag):
    """Product space X1 x X2 x ... with per-factor weights."""

    factors: tuple[SpaceTag, ...] = field(default=())

    def __post_init__(self):
        if not self.factors:
            raise ValueError("product tag needs at least one factor")
        ps = {f.p for f in self.factors}
        if len(ps) != 1:
            raise ValueError("all factors of a product must share p")
        object.__setattr__(self, "p", ps.pop())
        object.__setattr__(self, "components", sum(f.components for f in self.factors))
        object.__setattr__(self, "homogeneous", any(f.homogeneous for f in self.factors))
        object.__setattr__(self, "s", 0.0)
        object.__setattr__(self, "zero_mode", ZeroMode.PROJECT)

    @property
    def parts(self) -> tuple[SpaceTag, ...]:
        out: list[SpaceTag] = []
        for f in self.factors:
            out.extend(f.parts)
        return tuple(out)

    def with_p(self, p: float) -> "ProductTag":
        return product_tag(*(f.with_p(p) for f in self.factors))


def product_tag(*factors: SpaceTag) -> ProductTag:
    return ProductTag(factors=tuple(factors))


class GridVector:
    """Grid function stored by its Fourier coefficients c_k = fft(f)/N, shape (components, N)."""

    def __init__(self, grid: FreqGrid, freq: np.ndarray):
        freq = np.asarray(freq, dtype=complex)
        if freq.ndim == 1:
            freq = freq[None, :]
        if freq.shape[1] != grid.size:
            raise ValueError(f"expected {grid.size} coefficients per component, got {freq.shape[1]}")
        self.grid = grid
        self.freq = freq

    @classmethod
    def from_physical(cls, grid: FreqGrid, values) -> "GridVector":
        values = np.asarray(values, dtype=complex)
        if values.shape == grid.shape:
            values = values[None]
        m = values.shape[0]
        axes = tuple(range(1, grid.d + 1))
        c = np.fft.fftn(values.reshape((m,) + grid.shape), axes=axes) / grid.size
        return cls(grid, c.reshape(m, grid.size))

    @classmethod
    def mode(cls, grid: FreqGrid, k, components: int = 1, component: int = 0) -> "GridVector":
        c = np.zeros((components, grid.size), dtype=complex)
        c[component, grid.index_of(k)] = 1.0
        return cls(grid, c)

    @classmethod
    def constant(cls, grid: FreqGrid, value=1.0, components: int = 1) -> "GridVector":
        c = np.zeros((components, grid.size), dtype=complex)
        c[:, 0] = value
        return cls(grid, c)

    @classmethod
    def random(cls, grid: FreqGrid, components: int = 1, rng=None, decay: float = 0.0) -> "GridVector":
        rng = np.random.default_rng(rng)
        c = rng.standard_normal((components, grid.size)) + 1j * rng.standard_normal((components, grid.size))
        if decay:
            c /= (1.0 + grid.abs2) ** (decay / 2)
        return cls(grid, c)

    @property
    def components(self) -> int:
        return self.freq.shape[0]

    def physical(self) -> np.ndarray:
        axes = tuple(range(1, self.grid.d + 1))
        c = self.freq.reshape((self.components,) + self.grid.shape)
        return np.fft.ifftn(c, axes=axes) * self.grid.size

    def copy(self) -> "GridVector":
        return GridVector(self.grid, self.freq.copy())

    def __add__(self, other: "GridVector") -> "GridVector":
        return GridVector(self.grid, self.freq + other.freq)

    def __sub__(self, other: "GridVector") -> "GridVector":
        return GridVector(self.grid, self.freq - other.freq)

    def __mul__(self, a) -> "GridVector":
        return GridVector(self.grid, self.freq * a)

    __rmul__ = __mul__

    def __neg__(self) -> "GridVector":
        return GridVector(self.grid, -self.freq)


def project_zero_mode(v: GridVector) -> GridVector:
    c = v.freq.copy()
    c[:, 0] = 0.0
    return GridVector(v.grid, c)


def weighted_coefficients(v: GridVector, tag: SpaceTag) -> np.ndarray:
    if tag.components != v.components:
        raise ValueError(f"vector has {v.components} components, tag expects {tag.components}")
    w, active = tag.weights(v.grid)
    c = v.freq.T
    for j, part in enumerate(_component_parts(tag)):
        if part.homogeneous and part.zero_mode is ZeroMode.REJECT and part.s < 0 and c[0, j] != 0:
            raise ZeroModeError("nonzero zero-mode content in a negative homogeneous space")
    c = np.where(active, c, 0.0)
    with np.errstate(invalid="ignore"):
        wc = np.where(c == 0, 0.0, w * c)
    return wc.T


def _component_parts(tag: SpaceTag) -> list[SpaceTag]:
    return [p for p in tag.parts for _ in range(p.components)]


def norm(v: GridVector, tag: SpaceTag) -> float:
    """Weighted norm with the normalized torus measure (constant 1 has norm 1)."""
    wc = weighted_coefficients(v, tag)
    if tag.p == 2:
        return float(np.sqrt(np.sum(np.abs(wc) ** 2)))
    f = GridVector(v.grid, wc).physical().reshape(v.components, -1)
    pointwise = np.sqrt(np.sum(np.abs(f) ** 2, axis=0))
    return float(np.mean(pointwise ** tag.p) ** (1.0 / tag.p))
