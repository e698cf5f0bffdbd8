"""Decay-rate fits for eigenfunctions and semilinear ground states.

Eigenfunctions decay like |x|^{-(N-1)/2} e^{-sqrt(Lambda)|x|}; ground
states decay polynomially like |x|^{-2/(p-2)} below the Serrin exponent
and pick up a logarithmic correction exactly at it.  Fits run on shell
medians (the median is immune both to the angular factor of sign-changing
modes and to grid anisotropy) over a window that keeps clear of the domain
and of the truncation boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..grids import BoxGrid, RadialGrid, ScalarField
from ..semilinear import GroundState, serrin_exponent

__all__ = [
    "FitReport",
    "InsufficientWindowError",
    "fit_linear_decay",
    "fit_semilinear_decay",
    "default_fit_window",
    "decay_constant_cp",
    "comparison_rate_cq",
    "serrin_constant_kn",
    "serrin_constant_kn_lower",
]

TRUNCATION_GUARD_CELLS = 5
VALUE_FLOOR = 1e2 * np.finfo(float).tiny


class InsufficientWindowError(ValueError):
    pass


@dataclass(frozen=True)
class FitReport:
    model: str  # linear_exp | power | serrin_log
    fitted_rate: float
    reference_rate: float
    window: tuple[float, float]
    r_squared: float
    n_samples: int
    intercept: float

    @property
    def rel_rate_error(self) -> float:
        return abs(self.fitted_rate - self.reference_rate) / abs(self.reference_rate)


def default_fit_window(domain, grid) -> tuple[float, float]:
    """Window between the domain's far side and the truncation guard."""
    r_lo = max(1.0, domain.circumradius() + 1.0)
    if isinstance(grid, BoxGrid):
        r_hi = grid.half_width - TRUNCATION_GUARD_CELLS * grid.h
    else:
        r_hi = grid.r_max - TRUNCATION_GUARD_CELLS * grid.delta
    return (r_lo, r_hi)


def _shell_samples(field: ScalarField, window: tuple[float, float]):
    """(radius, median |value|) per shell of width h inside the window."""
    grid = field.grid
    r_lo, r_hi = window
    if r_lo < 1.0:
        raise InsufficientWindowError("fit window must start at radius >= 1")
    if isinstance(grid, RadialGrid):
        guard = grid.r_max - TRUNCATION_GUARD_CELLS * grid.delta
        r_hi = min(r_hi, guard)
        mask = (grid.r >= r_lo) & (grid.r <= r_hi)
        vals = np.abs(field.values[mask])
        radii = grid.r[mask]
        keep = vals > VALUE_FLOOR
        return radii[keep], vals[keep]
    guard = grid.half_width - TRUNCATION_GUARD_CELLS * grid.h
    r_hi = min(r_hi, guard)
    r = grid.radii.ravel()
    vals = np.abs(field.values)
    mask = (r >= r_lo) & (r <= r_hi) & (vals > VALUE_FLOOR)
    if not np.any(mask):
        raise InsufficientWindowError("no usable nodes in the fit window")
    nbin = np.floor((r[mask] - r_lo) / grid.h).astype(int)
    radii, meds = [], []
    for b in np.unique(nbin):
        sel = nbin == b
        radii.append(float(np.median(r[mask][sel])))
        meds.append(float(np.median(vals[mask][sel])))
    return np.asarray(radii), np.asarray(meds)


def _least_squares_line(x: np.ndarray, y: np.ndarray):
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    fit = A @ coef
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(coef[0]), float(coef[1]), max(0.0, min(1.0, r2))


def fit_linear_decay(
    phi: ScalarField, lam: float, window: tuple[float, float], min_shells: int = 10
) -> FitReport:
    """Exponential rate of an eigenfunction against sqrt(Lambda).

    Fits ln(|phi| |x|^{(N-1)/2}) = c - rho |x| on shell medians; for the
    exact far field the prefactor power is exactly (N-1)/2, so rho recovers
    sqrt(Lambda) up to discretization noise.
    """
    grid = phi.grid
    N = grid.dimension if isinstance(grid, RadialGrid) else 3
    radii, vals = _shell_samples(phi, window)
    if len(radii) < min_shells:
        raise InsufficientWindowError(
            f"only {len(radii)} shells in window {window}, need {min_shells}"
        )
    y = np.log(vals * radii ** ((N - 1) / 2.0))
    slope, intercept, r2 = _least_squares_line(radii, y)
    return FitReport(
        model="linear_exp",
        fitted_rate=-slope,
        reference_rate=math.sqrt(lam),
        window=(float(radii[0]), float(radii[-1])),
        r_squared=r2,
        n_samples=len(radii),
        intercept=intercept,
    )


def fit_semilinear_decay(
    state: GroundState, window: tuple[float, float], min_shells: int = 10
) -> FitReport:
    """Polynomial (or Serrin log-corrected) decay rate of a ground state.

    The fit runs on v_p; the amplitude prefactor alpha^{1/(p-2)} cancels in
    the slope.  Below the Serrin exponent the slope of ln v against ln|x|
    is compared with -2/(p-2); at the Serrin exponent the model is
    ln v against ln(|x| sqrt(ln|x|)) with reference slope 2 - N.
    """
    grid = state.v_p.grid
    N = grid.dimension if isinstance(grid, RadialGrid) else 3
    p, ps = state.p, serrin_exponent(N)
    if p > ps + 1e-12:
        raise ValueError(f"no decay model above the Serrin exponent (p={p}, ps={ps})")
    radii, vals = _shell_samples(state.v_p, window)
    if len(radii) < min_shells:
        raise InsufficientWindowError(
            f"only {len(radii)} shells in window {window}, need {min_shells}"
        )
    y = np.log(vals)
    if abs(p - ps) <= 1e-9:
        x = np.log(radii * np.sqrt(np.log(radii)))
        model, ref = "serrin_log", 2.0 - N
    else:
        x = np.log(radii)
        model, ref = "power", -2.0 / (p - 2.0)
    slope, intercept, r2 = _least_squares_line(x, y)
    return FitReport(
        model=model,
        fitted_rate=slope,
        reference_rate=ref,
        window=(float(radii[0]), float(radii[-1])),
        r_squared=r2,
        n_samples=len(radii),
        intercept=intercept,
    )


def decay_constant_cp(p: float, N: int) -> float:
    """Amplitude of the exact comparison profile C_p |x|^{-2/(p-2)}."""
    num = 4.0 * p - 2.0 * N * (p - 2.0) - 4.0
    if num <= 0:
        raise ValueError("comparison profile exists only below the Serrin exponent")
    return (num / (p - 2.0) ** 2) ** (1.0 / (p - 2.0))


def comparison_rate_cq(q: float, N: int) -> float:
    """Coefficient 2(q - (q-2)(N-1))/(q-2)^2 of the barrier profile."""
    return 2.0 * (q - (q - 2.0) * (N - 1.0)) / (q - 2.0) ** 2


def serrin_constant_kn(N: int) -> float:
    """Upper-barrier amplitude at the Serrin exponent."""
    return 2.0 ** (2 - N) * (3.0 * N**2 - 10.0 * N + 8.0) ** ((N - 2) / 2.0)


def serrin_constant_kn_lower(N: int) -> float:
    """Lower-barrier amplitude at the Serrin exponent."""
    return 2.0 ** ((2 - N) / 2.0) * (N - 2.0) ** (N - 2)
