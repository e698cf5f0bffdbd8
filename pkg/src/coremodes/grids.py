"""Truncated-box and radial meshes, and grid functions living on them.

The 3D mesh is a uniform tensor grid of interior nodes on (-L, L)^3 with a
homogeneous Dirichlet condition on the box boundary (the truncation of the
exponential/polynomial far-field decay).  The radial mesh covers [0, r_max]
with a Dirichlet condition at r_max and the regularity condition u'(0) = 0
built into the discrete Dirichlet form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["BoxGrid", "RadialGrid", "ScalarField", "choose_box_halfwidth"]


class GridError(ValueError):
    """Raised for invalid mesh parameters."""


@dataclass(frozen=True)
class BoxGrid:
    """Interior nodes of a uniform grid on (-L, L)^3, Dirichlet boundary."""

    half_width: float
    n: int
    dimension: int = 3

    def __post_init__(self):
        if self.dimension != 3:
            raise GridError("box grids support dimension 3 only")
        if not self.half_width > 0:
            raise GridError("half_width must be positive")
        if self.n < 8:
            raise GridError("need at least 8 nodes per axis")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n + 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def num_nodes(self) -> int:
        return self.n**3

    @cached_property
    def axis(self) -> np.ndarray:
        """Interior node coordinates along one axis."""
        return -self.half_width + self.h * np.arange(1, self.n + 1)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.axis
        return np.meshgrid(x, x, x, indexing="ij")

    @cached_property
    def radii(self) -> np.ndarray:
        X, Y, Z = self.meshgrid()
        return np.sqrt(X**2 + Y**2 + Z**2)

    def points(self) -> np.ndarray:
        """All node coordinates, shape (num_nodes, 3), C-order of the cube."""
        X, Y, Z = self.meshgrid()
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def admits(self, domain) -> bool:
        """Whether the domain sits inside the box with one cell to spare."""
        return domain.circumradius() < self.half_width - self.h

    def index_coords(self, pts: np.ndarray) -> np.ndarray:
        """Fractional array indices of physical points (for interpolation)."""
        pts = np.asarray(pts, dtype=float)
        return (pts + self.half_width) / self.h - 1.0


@dataclass(frozen=True)
class RadialGrid:
    """Nodes r_i = i*delta, i = 0..m-1, with Dirichlet at r_max = m*delta."""

    r_max: float
    m: int
    dimension: int = 3

    def __post_init__(self):
        if self.dimension < 3:
            raise GridError("dimension must be >= 3")
        if not self.r_max > 0:
            raise GridError("r_max must be positive")
        if self.m < 16:
            raise GridError("need at least 16 radial nodes")

    @property
    def delta(self) -> float:
        return self.r_max / self.m

    @property
    def num_nodes(self) -> int:
        return self.m

    @cached_property
    def r(self) -> np.ndarray:
        return self.delta * np.arange(self.m)

    @cached_property
    def sphere_area(self) -> float:
        """Surface measure of the unit sphere in R^N."""
        N = self.dimension
        return 2.0 * np.pi ** (N / 2) / math.gamma(N / 2)

    @cached_property
    def shell_volumes(self) -> np.ndarray:
        """Exact volume of the cell [r_i - d/2, r_i + d/2] (clipped at 0, r_max)."""
        N = self.dimension
        lo = np.clip(self.r - self.delta / 2, 0.0, None)
        hi = np.minimum(self.r + self.delta / 2, self.r_max)
        return self.sphere_area / N * (hi**N - lo**N)


@dataclass(frozen=True)
class ScalarField:
    """Real-valued grid function on a box or radial mesh."""

    grid: BoxGrid | RadialGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size != self.grid.num_nodes:
            raise GridError(
                f"value count {vals.size} does not match grid ({self.grid.num_nodes})"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def cube(self) -> np.ndarray:
        """Box fields reshaped to (n, n, n)."""
        if not isinstance(self.grid, BoxGrid):
            raise GridError("cube view requires a box grid")
        return self.values.reshape(self.grid.shape)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


def build_box_grid(L: float, n: int) -> BoxGrid:
    """Uniform tensor grid of n^3 interior nodes on (-L, L)^3."""
    return BoxGrid(float(L), int(n))


def choose_box_halfwidth(domain, lambda_target: float = 1.0, decay_lengths: float = 8.0) -> float:
    """Truncation half-width R_Omega + decay_lengths/sqrt(lambda_target).

    Eight decay lengths push the exponential far-field envelope below 3e-4
    at the box boundary.
    """
    return domain.circumradius() + decay_lengths / np.sqrt(lambda_target)
