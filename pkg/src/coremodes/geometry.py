"""Bounded open domains and the sign-changing core weight.

A domain Omega is one of a closed set of shapes (ball, annulus, disjoint
union of balls, axis-aligned box) in dimension N >= 3.  The weight takes
the value +1 inside Omega and -1 outside; points exactly on the boundary
count as outside (closed-complement convention, fixed for reproducibility).
All shapes have closed-form volume, so scaling identities are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Ball",
    "Annulus",
    "UnionOfBalls",
    "Box",
    "Domain",
    "unit_ball_volume",
    "indicator",
    "scale",
    "schwarz_ball",
    "volume",
]


class InvalidDomainError(ValueError):
    """Raised when a domain description violates its invariants."""


def unit_ball_volume(dimension: int) -> float:
    """Volume of the unit ball in R^N."""
    return math.pi ** (dimension / 2) / math.gamma(dimension / 2 + 1)


def _as_point(center, dimension) -> tuple[float, ...]:
    c = tuple(float(v) for v in np.atleast_1d(center))
    if len(c) == 1 and dimension > 1:
        c = (0.0,) * dimension if c[0] == 0.0 else None
        if c is None:
            raise InvalidDomainError("scalar center must be 0 (origin shorthand)")
    if len(c) != dimension:
        raise InvalidDomainError(f"center has length {len(c)}, expected {dimension}")
    return c


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float
    dimension: int = 3

    kind = "ball"

    def __post_init__(self):
        if self.dimension < 3:
            raise InvalidDomainError("dimension must be >= 3")
        object.__setattr__(self, "center", _as_point(self.center, self.dimension))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise InvalidDomainError("ball radius must be positive")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=-1)
        return d2 < self.radius**2

    def circumradius(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    def volume(self) -> float:
        return unit_ball_volume(self.dimension) * self.radius**self.dimension

    def scaled(self, t: float) -> "Ball":
        return Ball(tuple(t * c for c in self.center), t * self.radius, self.dimension)

    def spheres(self):
        """Boundary spheres as (center, radius, orientation) with +1 = exterior normal outward."""
        return [(np.asarray(self.center), self.radius, +1.0)]

    def mirror_axes(self):
        return [j for j in range(self.dimension) if self.center[j] == 0.0]

    def is_radial(self) -> bool:
        return all(c == 0.0 for c in self.center)


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, ...]
    r_in: float
    r_out: float
    dimension: int = 3

    kind = "annulus"

    def __post_init__(self):
        if self.dimension < 3:
            raise InvalidDomainError("dimension must be >= 3")
        object.__setattr__(self, "center", _as_point(self.center, self.dimension))
        object.__setattr__(self, "r_in", float(self.r_in))
        object.__setattr__(self, "r_out", float(self.r_out))
        if not (0 < self.r_in < self.r_out):
            raise InvalidDomainError("annulus requires 0 < r_in < r_out")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=-1)
        return (d2 > self.r_in**2) & (d2 < self.r_out**2)

    def circumradius(self) -> float:
        return float(np.linalg.norm(self.center)) + self.r_out

    def volume(self) -> float:
        vN = unit_ball_volume(self.dimension)
        return vN * (self.r_out**self.dimension - self.r_in**self.dimension)

    def scaled(self, t: float) -> "Annulus":
        return Annulus(
            tuple(t * c for c in self.center), t * self.r_in, t * self.r_out, self.dimension
        )

    def spheres(self):
        c = np.asarray(self.center)
        # exterior normal of the annulus points inward on the inner sphere
        return [(c, self.r_out, +1.0), (c, self.r_in, -1.0)]

    def mirror_axes(self):
        return [j for j in range(self.dimension) if self.center[j] == 0.0]

    def is_radial(self) -> bool:
        return all(c == 0.0 for c in self.center)


@dataclass(frozen=True)
class UnionOfBalls:
    balls: tuple[tuple[tuple[float, ...], float], ...]
    dimension: int = 3
    allow_overlap: bool = field(default=False)

    kind = "union_of_balls"

    def __post_init__(self):
        if self.dimension < 3:
            raise InvalidDomainError("dimension must be >= 3")
        if not self.balls:
            raise InvalidDomainError("union needs at least one ball")
        norm = []
        for center, radius in self.balls:
            c = _as_point(center, self.dimension)
            r = float(radius)
            if not r > 0:
                raise InvalidDomainError("ball radius must be positive")
            norm.append((c, r))
        object.__setattr__(self, "balls", tuple(norm))
        if not self.allow_overlap:
            for i in range(len(norm)):
                for j in range(i + 1, len(norm)):
                    ci, ri = norm[i]
                    cj, rj = norm[j]
                    dist = math.dist(ci, cj)
                    if dist <= ri + rj:
                        raise InvalidDomainError(
                            "union members overlap or touch; pass allow_overlap=True "
                            "to accept (volume arithmetic then unsupported)"
                        )

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for c, r in self.balls:
            out |= np.sum((pts - np.asarray(c)) ** 2, axis=-1) < r**2
        return out

    def circumradius(self) -> float:
        return max(float(np.linalg.norm(c)) + r for c, r in self.balls)

    def volume(self) -> float:
        if self.allow_overlap:
            raise InvalidDomainError("volume of overlapping unions is not supported")
        vN = unit_ball_volume(self.dimension)
        return vN * sum(r**self.dimension for _, r in self.balls)

    def scaled(self, t: float) -> "UnionOfBalls":
        return UnionOfBalls(
            tuple((tuple(t * x for x in c), t * r) for c, r in self.balls),
            self.dimension,
            self.allow_overlap,
        )

    def spheres(self):
        return [(np.asarray(c), r, +1.0) for c, r in self.balls]

    def mirror_axes(self):
        axes = []
        key = sorted((tuple(c), r) for c, r in self.balls)
        for j in range(self.dimension):
            flipped = sorted(
                (tuple(-x if i == j else x for i, x in enumerate(c)), r) for c, r in self.balls
            )
            if flipped == key:
                axes.append(j)
        return axes

    def is_radial(self) -> bool:
        return len(self.balls) == 1 and all(c == 0.0 for c in self.balls[0][0])


@dataclass(frozen=True)
class Box:
    center: tuple[float, ...]
    half_widths: tuple[float, ...]
    dimension: int = 3

    kind = "box"

    def __post_init__(self):
        if self.dimension < 3:
            raise InvalidDomainError("dimension must be >= 3")
        object.__setattr__(self, "center", _as_point(self.center, self.dimension))
        hw = tuple(float(v) for v in np.atleast_1d(self.half_widths))
        if len(hw) == 1:
            hw = hw * self.dimension
        if len(hw) != self.dimension:
            raise InvalidDomainError("half_widths length mismatch")
        object.__setattr__(self, "half_widths", hw)
        if not all(v > 0 for v in hw):
            raise InvalidDomainError("half widths must be positive")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        rel = np.abs(pts - np.asarray(self.center))
        return np.all(rel < np.asarray(self.half_widths), axis=-1)

    def circumradius(self) -> float:
        return float(np.linalg.norm(self.center)) + float(
            np.linalg.norm(self.half_widths)
        )

    def volume(self) -> float:
        return float(np.prod(2.0 * np.asarray(self.half_widths)))

    def scaled(self, t: float) -> "Box":
        return Box(
            tuple(t * c for c in self.center),
            tuple(t * w for w in self.half_widths),
            self.dimension,
        )

    def spheres(self):
        raise InvalidDomainError("box boundaries are not spheres")

    def mirror_axes(self):
        return [j for j in range(self.dimension) if self.center[j] == 0.0]

    def is_radial(self) -> bool:
        return False


Domain = Ball | Annulus | UnionOfBalls | Box


def indicator(domain: Domain, x) -> np.ndarray:
    """Sign of the core weight at x: +1 strictly inside Omega, -1 otherwise.

    Total function: boundary points map to -1.  Accepts a single point or an
    array of points with trailing dimension N.
    """
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    inside = domain.contains(pts)
    out = np.where(inside, 1.0, -1.0)
    return float(out) if scalar else out


def scale(domain: Domain, t: float) -> Domain:
    """Dilation t*Omega; all centers and lengths multiply by t."""
    if not t > 0:
        raise InvalidDomainError("scale factor must be positive")
    return domain.scaled(float(t))


def volume(domain: Domain) -> float:
    """Lebesgue measure, in closed form."""
    return domain.volume()


def schwarz_ball(domain: Domain) -> Ball:
    """The origin-centered ball with the same measure as the domain."""
    vol = domain.volume()
    r = (vol / unit_ball_volume(domain.dimension)) ** (1.0 / domain.dimension)
    return Ball((0.0,) * domain.dimension, r, domain.dimension)


def domain_from_params(kind: str, params: dict, dimension: int = 3) -> Domain:
    """Build a domain from flat config keys (see cli docs for the schema)."""
    kind = kind.strip().lower()
    if kind == "ball":
        return Ball(params.get("center", (0.0,) * dimension), params["radius"], dimension)
    if kind == "annulus":
        return Annulus(
            params.get("center", (0.0,) * dimension),
            params["r_in"],
            params["r_out"],
            dimension,
        )
    if kind == "union_of_balls":
        return UnionOfBalls(tuple(params["balls"]), dimension)
    if kind == "box":
        return Box(
            params.get("center", (0.0,) * dimension), params["half_widths"], dimension
        )
    raise InvalidDomainError(f"unknown domain kind {kind!r}")
