"""Assembly of the discrete Dirichlet form, the signed weight, and the
boundary flux quadrature.

Quadratic forms carry the volume element, so u^T A u approximates the
Dirichlet energy and u^T D v approximates the signed-weight pairing; the
Rayleigh quotients of the continuum problem carry over verbatim.  Cells
straddling the interface get a signed volume-fraction weight from 4^3
midpoint subcells, which keeps the eigenvalue noise well below the margins
of the shape comparisons.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates

from .geometry import Annulus, Ball, Box, Domain, UnionOfBalls
from .grids import BoxGrid, RadialGrid, ScalarField
from .operators import AssemblyError, SparseOperator, box_stiffness_matvec

__all__ = [
    "assemble_stiffness",
    "assemble_weight",
    "weight_fractions",
    "surface_quadrature",
    "interpolate_box_field",
]

SUBCELLS_PER_AXIS = 4


def _box_stiffness_builder(grid: BoxGrid):
    def build():
        n = grid.n
        main = 2.0 * np.ones(n)
        off = -np.ones(n - 1)
        T = sp.diags([off, main, off], [-1, 0, 1], format="csr")
        eye = sp.identity(n, format="csr")
        lap = (
            sp.kron(sp.kron(T, eye), eye)
            + sp.kron(sp.kron(eye, T), eye)
            + sp.kron(sp.kron(eye, eye), T)
        )
        return (grid.h) * lap  # h^3 quadrature over h^2 stencil scale

    return build


def _radial_stiffness_builder(grid: RadialGrid):
    def build():
        N = grid.dimension
        delta = grid.delta
        sigma = grid.sphere_area
        r_half = grid.r + delta / 2  # r_{i+1/2}, i = 0..m-1; last couples to r_max
        met = sigma * r_half ** (N - 1) / delta
        main = met.copy()
        main[1:] += met[:-1]
        off = -met[:-1]
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")

    return build


def assemble_stiffness(grid: BoxGrid | RadialGrid) -> SparseOperator:
    """Discrete Dirichlet form; symmetric positive definite by construction."""
    if isinstance(grid, BoxGrid):
        return SparseOperator(
            (grid.num_nodes, grid.num_nodes),
            kind="stiffness",
            grid=grid,
            matvec=lambda v: box_stiffness_matvec(grid, v),
            builder=_box_stiffness_builder(grid),
        )
    if isinstance(grid, RadialGrid):
        op = SparseOperator(
            (grid.m, grid.m),
            kind="stiffness",
            grid=grid,
            builder=_radial_stiffness_builder(grid),
        )
        return op
    raise AssemblyError(f"unsupported grid type {type(grid)!r}")


def _subcell_offsets(h: float) -> np.ndarray:
    sub = ((np.arange(SUBCELLS_PER_AXIS) + 0.5) / SUBCELLS_PER_AXIS - 0.5) * h
    SX, SY, SZ = np.meshgrid(sub, sub, sub, indexing="ij")
    return np.stack([SX.ravel(), SY.ravel(), SZ.ravel()], axis=1)


def weight_fractions(grid: BoxGrid, domain: Domain) -> np.ndarray:
    """Signed mean of the core weight over each cell, in [-1, 1].

    Cells whose center is farther than half a cell diagonal from every
    interface sphere/face keep the pointwise sign; straddling cells average
    the sign over 4^3 midpoint subcells.
    """
    X, Y, Z = grid.meshgrid()
    pts = np.stack([X, Y, Z], axis=-1)
    inside = domain.contains(pts)
    q = np.where(inside, 1.0, -1.0)

    margin = math.sqrt(3.0) / 2.0 * grid.h
    strad = _near_interface(domain, pts, margin)
    if np.any(strad):
        offs = _subcell_offsets(grid.h)
        centers = pts[strad]
        subpts = centers[:, None, :] + offs[None, :, :]
        frac = domain.contains(subpts).mean(axis=1)
        q[strad] = 2.0 * frac - 1.0
    return q.ravel()


def _near_interface(domain: Domain, pts: np.ndarray, margin: float) -> np.ndarray:
    if isinstance(domain, Ball):
        d = np.linalg.norm(pts - np.asarray(domain.center), axis=-1)
        return np.abs(d - domain.radius) < margin
    if isinstance(domain, Annulus):
        d = np.linalg.norm(pts - np.asarray(domain.center), axis=-1)
        return (np.abs(d - domain.r_in) < margin) | (np.abs(d - domain.r_out) < margin)
    if isinstance(domain, UnionOfBalls):
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for c, r in domain.balls:
            d = np.linalg.norm(pts - np.asarray(c), axis=-1)
            out |= np.abs(d - r) < margin
        return out
    if isinstance(domain, Box):
        rel = np.abs(pts - np.asarray(domain.center)) - np.asarray(domain.half_widths)
        near_face = np.any(np.abs(rel) < margin, axis=-1)
        inside_slab = np.all(rel < margin, axis=-1)
        return near_face & inside_slab
    raise AssemblyError(f"unsupported domain kind {type(domain)!r}")


def _radial_intervals(domain: Domain) -> list[tuple[float, float]]:
    if isinstance(domain, Ball) and domain.is_radial():
        return [(0.0, domain.radius)]
    if isinstance(domain, Annulus) and domain.is_radial():
        return [(domain.r_in, domain.r_out)]
    raise AssemblyError("radial grids require a centered ball or annulus")


def assemble_weight(grid: BoxGrid | RadialGrid, domain: Domain) -> SparseOperator:
    """Diagonal signed quadrature: D_ii = q_i * cell volume."""
    if isinstance(grid, BoxGrid):
        if not grid.admits(domain):
            raise AssemblyError(
                "domain does not fit inside the grid box with one-cell clearance"
            )
        diag = weight_fractions(grid, domain) * grid.h**3
    elif isinstance(grid, RadialGrid):
        if domain.circumradius() >= grid.r_max - grid.delta:
            raise AssemblyError("domain does not fit inside the radial mesh")
        N = grid.dimension
        lo = np.clip(grid.r - grid.delta / 2, 0.0, None)
        hi = np.minimum(grid.r + grid.delta / 2, grid.r_max)
        cell = hi**N - lo**N
        vol_in = np.zeros_like(cell)
        for a, b in _radial_intervals(domain):
            ilo = np.clip(lo, a, b)
            ihi = np.clip(hi, a, b)
            vol_in += np.maximum(ihi**N - ilo**N, 0.0)
        # signed average over the shell, then exact shell volume
        q = 2.0 * vol_in / cell - 1.0
        diag = q * grid.sphere_area / N * cell
    else:
        raise AssemblyError(f"unsupported grid type {type(grid)!r}")
    nn = diag.size
    op = SparseOperator(
        (nn, nn),
        kind="weight",
        grid=grid,
        diag=diag,
        builder=lambda: sp.diags([diag], [0]),
    )
    return op


def interpolate_box_field(field: ScalarField, pts: np.ndarray, upsample: int = 1) -> np.ndarray:
    """Trilinear interpolation of a box field at physical points.

    upsample > 1 first refines the field on a finer grid through the exact
    sine-series interpolant, which cuts the trilinear error by upsample^2.
    """
    grid = field.grid
    if not isinstance(grid, BoxGrid):
        raise AssemblyError("interpolation requires a box field")
    cube = field.cube
    n, L = grid.n, grid.half_width
    if upsample > 1:
        from scipy import fft as sfft

        coeff = sfft.dstn(cube, type=1, norm="ortho")
        n_f = upsample * (n + 1) - 1
        big = np.zeros((n_f, n_f, n_f))
        big[:n, :n, :n] = coeff
        # DST-I orthonormal scaling between sizes
        cube_f = sfft.idstn(big, type=1, norm="ortho") * math.sqrt(
            ((n_f + 1) / (n + 1)) ** 3
        )
        h_f = 2 * L / (n_f + 1)
        idx = (np.asarray(pts, dtype=float) + L) / h_f - 1.0
        return map_coordinates(cube_f, idx.T, order=1, mode="constant", cval=0.0)
    idx = grid.index_coords(pts)
    return map_coordinates(cube, idx.T, order=1, mode="constant", cval=0.0)


def surface_quadrature(
    domain: Domain,
    field: ScalarField,
    n_polar: int = 48,
    n_azimuth: int = 96,
    upsample: int = 1,
) -> float:
    """Integral of f(zeta) (zeta . nu) over the domain boundary spheres.

    nu is the exterior unit normal of the domain; on a sphere of radius rho
    about c it equals +/-omega and zeta . nu = +/-(rho + c . omega).
    """
    try:
        spheres = domain.spheres()
    except Exception as exc:
        raise AssemblyError(f"surface quadrature unsupported: {exc}") from exc
    mu, glw = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    st = np.sqrt(1.0 - mu**2)
    omega = np.stack(
        [
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.repeat(mu, n_azimuth),
        ],
        axis=1,
    )
    wq = np.repeat(glw, n_azimuth) * (2.0 * np.pi / n_azimuth)

    total = 0.0
    for center, rho, orient in spheres:
        pts = center[None, :] + rho * omega
        fvals = interpolate_box_field(field, pts, upsample=upsample)
        zdotnu = orient * (rho + omega @ center)
        total += rho**2 * float(np.sum(wq * fvals * zdotnu))
    return total
