"""Least energy states of the power problem with a self-focusing core.

alpha_p minimizes the Dirichlet energy over the signed constraint set
{ integral Q |v|^p = 1 }.  The minimizer search runs a monotone,
energy-preconditioned descent on the degree-zero quotient R_p(v) =
(v^T A v) / P(v)^{2/p}, clamped to v >= 0, and a damped Newton iteration
then polishes the Euler-Lagrange system.  The physical solution
u_p = alpha_p^{1/(p-2)} v_p is kept in log-amplitude form: its scale factor
blows up (or vanishes) as p -> 2 whenever the ground eigenvalue is away
from 1, so u_p is only materialized when its log fits comfortably in a
double.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse.linalg import LinearOperator, minres

from .assemble import assemble_stiffness, assemble_weight
from .geometry import Annulus, Ball, Domain, UnionOfBalls, unit_ball_volume
from .grids import BoxGrid, RadialGrid, ScalarField
from .operators import SparseOperator

__all__ = [
    "GroundState",
    "ConvergenceFailure",
    "LineSearchFailure",
    "minimize_alpha",
    "newton_refine",
    "sup_norm_scaling",
    "radial_ground_state",
    "quotient",
    "quotient_gradient",
    "constraint_integral",
    "alpha_lower_bound",
    "alpha_upper_bound",
    "bump_seed",
]

LOG_AMP_SAFE = 500.0


class ConvergenceFailure(RuntimeError):
    pass


class LineSearchFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class GroundState:
    p: float
    alpha_p: float
    v_p: ScalarField
    log_amp: float
    residual: float
    iterations: int = 0

    def __post_init__(self):
        if not (1.0 < self.p and self.p != 2.0):
            raise ValueError("exponent must lie in (1, 2*) \\ {2}")

    @property
    def sup_v(self) -> float:
        return float(np.max(self.v_p.values))

    def u_values(self) -> np.ndarray:
        """Materialized u_p; refuses when the amplitude overflows a double."""
        if abs(self.log_amp) >= LOG_AMP_SAFE:
            raise OverflowError(
                f"log amplitude {self.log_amp:.3g} too large to materialize"
            )
        return math.exp(self.log_amp) * self.v_p.values


def serrin_exponent(N: int) -> float:
    return (2.0 * N - 2.0) / (N - 2.0)


def critical_exponent(N: int) -> float:
    return 2.0 * N / (N - 2.0)


def _check_p(p: float, N: int) -> None:
    if not (1.0 < p < critical_exponent(N)) or p == 2.0:
        raise ValueError(f"exponent p={p} outside (1, 2N/(N-2)) \\ {{2}}")


def constraint_integral(dweight: np.ndarray, v: np.ndarray, p: float) -> float:
    """Signed quadrature of |v|^p."""
    return float(np.sum(dweight * np.abs(v) ** p))


def quotient(A: SparseOperator, dweight: np.ndarray, v: np.ndarray, p: float) -> float:
    P = constraint_integral(dweight, v, p)
    if P <= 0:
        raise ValueError("constraint integral must be positive")
    return float(v @ A.matvec(v)) / P ** (2.0 / p)


def quotient_gradient(
    A: SparseOperator, dweight: np.ndarray, v: np.ndarray, p: float
) -> np.ndarray:
    """Exact gradient of the homogeneous quotient (degree-zero in v)."""
    P = constraint_integral(dweight, v, p)
    if P <= 0:
        raise ValueError("constraint integral must be positive")
    E = float(v @ A.matvec(v))
    force = dweight * np.sign(v) * np.abs(v) ** (p - 1.0)
    return (2.0 / P ** (2.0 / p)) * (A.matvec(v) - (E / P) * force)


def _solver_for(A: SparseOperator):
    """Return solve(b) approximating A^{-1} b for descent preconditioning."""
    if isinstance(A.grid, BoxGrid):
        sine = A.sine
        return sine.solve
    if isinstance(A.grid, RadialGrid):
        mat = A.mat.tocsc()
        ab = np.zeros((3, A.shape[0]))
        ab[0, 1:] = mat.diagonal(1)
        ab[1] = mat.diagonal()
        ab[2, :-1] = mat.diagonal(-1)
        return lambda b: solve_banded((1, 1), ab, b)
    raise ValueError("unsupported grid for preconditioned descent")


def bump_seed(grid: BoxGrid | RadialGrid, center, width: float) -> np.ndarray:
    """Positive compactly-supported bump, the generic initial iterate."""
    if isinstance(grid, BoxGrid):
        pts = grid.points()
        t2 = np.sum((pts - np.asarray(center)) ** 2, axis=1) / width**2
    else:
        c = float(np.linalg.norm(center))
        t2 = (grid.r - c) ** 2 / width**2
    out = np.zeros(t2.shape)
    mask = t2 < 1.0
    out[mask] = np.exp(1.0 - 1.0 / (1.0 - t2[mask]))
    return out


def default_seed(domain: Domain, grid) -> np.ndarray:
    """Bump centered in the deepest part of the domain."""
    if isinstance(domain, Ball):
        return bump_seed(grid, domain.center, 0.9 * domain.radius)
    if isinstance(domain, Annulus):
        mid = 0.5 * (domain.r_in + domain.r_out)
        c = np.zeros(domain.dimension)
        if isinstance(grid, BoxGrid):
            c[0] = mid
        else:
            c[0] = mid
        return bump_seed(grid, c, 0.45 * (domain.r_out - domain.r_in))
    if isinstance(domain, UnionOfBalls):
        out = None
        for cb, r in domain.balls:
            b = bump_seed(grid, cb, 0.9 * r)
            out = b if out is None else out + b
        return out
    # boxes: inscribed ball
    w = min(domain.half_widths)
    return bump_seed(grid, domain.center, 0.9 * w)


def minimize_alpha(
    grid: BoxGrid | RadialGrid,
    domain: Domain,
    p: float,
    init: ScalarField | np.ndarray | None = None,
    A: SparseOperator | None = None,
    D: SparseOperator | None = None,
    tol: float = 1e-12,
    max_iter: int = 20000,
    max_restarts: int = 3,
    rng: np.random.Generator | None = None,
) -> GroundState:
    """Constrained minimization of the energy quotient, clamped to v >= 0.

    Descent direction is the energy-preconditioned quotient gradient with a
    Barzilai-Borwein step and halving fallback; every accepted iterate is
    rescaled exactly onto the constraint set.
    """
    _check_p(p, domain.dimension)
    A = assemble_stiffness(grid) if A is None else A
    D = assemble_weight(grid, domain) if D is None else D
    dw = D.diag
    solve = _solver_for(A)

    if init is None:
        v = default_seed(domain, grid)
    elif isinstance(init, ScalarField):
        v = init.values.copy()
    else:
        v = np.asarray(init, dtype=float).copy()

    restarts = 0
    while True:
        v = np.maximum(v, 0.0)
        P = constraint_integral(dw, v, p)
        if P > 0:
            break
        restarts += 1
        if restarts > max_restarts:
            raise ConvergenceFailure("seed has nonpositive constraint integral")
        v = default_seed(domain, grid)

    v /= P ** (1.0 / p)
    Av = A.matvec(v)
    energy = float(v @ Av)
    tau = 1.0 / max(energy, 1e-9)
    g_prev = None
    v_prev = None
    it = 0
    for it in range(1, max_iter + 1):
        force = dw * v ** (p - 1.0)
        g = solve(Av - energy * force)  # preconditioned quotient gradient
        if g_prev is not None:
            s = v - v_prev
            yv = g - g_prev
            sty = float(s @ yv)
            if sty > 0:
                tau = float(s @ s) / sty
        v_prev, g_prev = v, g

        accepted = False
        for _ in range(30):
            w = np.maximum(v - tau * g, 0.0)
            Pw = constraint_integral(dw, w, p)
            if Pw > 0:
                w = w / Pw ** (1.0 / p)
                Aw = A.matvec(w)
                energy_w = float(w @ Aw)
                if energy_w <= energy:
                    accepted = True
                    break
            tau *= 0.5
        if not accepted:
            restarts += 1
            if restarts > max_restarts:
                raise ConvergenceFailure(
                    f"descent stalled at iteration {it} (alpha ~ {energy:.6g})"
                )
            v = default_seed(domain, grid)
            if rng is not None:
                v = v * (1.0 + 0.01 * rng.standard_normal(v.shape))
            v = np.maximum(v, 0.0)
            v /= constraint_integral(dw, v, p) ** (1.0 / p)
            Av = A.matvec(v)
            energy = float(v @ Av)
            g_prev = None
            continue

        drop = energy - energy_w
        v, Av, energy = w, Aw, energy_w
        if drop <= tol * abs(energy):
            break

    alpha = energy
    resid = float(
        np.linalg.norm(Av - alpha * dw * v ** (p - 1.0)) / np.linalg.norm(Av)
    )
    return GroundState(
        p=p,
        alpha_p=alpha,
        v_p=ScalarField(grid, v),
        log_amp=math.log(alpha) / (p - 2.0),
        residual=resid,
        iterations=it,
    )


def el_jacobian_diag(dw: np.ndarray, w: np.ndarray, p: float, beta: float) -> np.ndarray:
    """Diagonal of the Euler-Lagrange Jacobian's potential term.

    Shared verbatim by the Newton iteration and the linearized-operator
    assembly, so the two are identical by construction.
    """
    return beta * (p - 1.0) * dw * np.maximum(w, 0.0) ** (p - 2.0)


def _jacobian_solver(A: SparseOperator, diag_term: np.ndarray):
    """Solve (A - diag_term) x = b; banded direct in 1D, MINRES in 3D."""
    n = A.shape[0]
    if isinstance(A.grid, RadialGrid):
        mat = A.mat.tocsc()
        ab = np.zeros((3, n))
        ab[0, 1:] = mat.diagonal(1)
        ab[1] = mat.diagonal() - diag_term
        ab[2, :-1] = mat.diagonal(-1)
        return lambda b: solve_banded((1, 1), ab, b)
    sine = A.sine

    def mv(x):
        return A.matvec(x) - diag_term * x

    op = LinearOperator((n, n), matvec=mv, dtype=float)
    pre = LinearOperator((n, n), matvec=sine.solve, dtype=float)

    def solve(b):
        x, info = minres(op, b, M=pre, rtol=1e-12, maxiter=800)
        if info != 0:
            x, info = minres(op, b, M=pre, rtol=1e-9, maxiter=2000)
            if info != 0:
                raise LineSearchFailure("inner linear solve did not converge")
        return x

    return solve


def newton_refine(
    state: GroundState,
    tol: float = 1e-11,
    A: SparseOperator | None = None,
    D: SparseOperator | None = None,
    domain: Domain | None = None,
    max_iter: int = 40,
) -> GroundState:
    """Damped Newton polish of the Euler-Lagrange system.

    Works on the scaled variable w = u / exp(log_amp), which satisfies
    A w = alpha * D |w|^{p-2} w; no large amplitudes ever materialize.
    """
    if state.residual >= 1.0:
        raise ValueError("refinement expects a state inside the Newton basin")
    grid = state.v_p.grid
    if A is None or D is None:
        if domain is None:
            raise ValueError("pass domain or preassembled operators")
        A = assemble_stiffness(grid) if A is None else A
        D = assemble_weight(grid, domain) if D is None else D
    dw = D.diag
    p = state.p
    beta = state.alpha_p
    w = state.v_p.values.copy()

    def G(wv):
        return A.matvec(wv) - beta * dw * np.maximum(wv, 0.0) ** (p - 1.0)

    g = G(w)
    gnorm = np.linalg.norm(g)
    scale = np.linalg.norm(A.matvec(w))
    for it in range(max_iter):
        if gnorm <= tol * scale:
            break
        diag_term = el_jacobian_diag(dw, w, p, beta)
        solve = _jacobian_solver(A, diag_term)
        delta = solve(-g)
        step = 1.0
        for _ in range(6):
            w_new = w + step * delta
            g_new = G(w_new)
            if np.linalg.norm(g_new) < gnorm:
                break
            step *= 0.5
        else:
            raise LineSearchFailure("Newton residual would not decrease")
        w, g = w_new, g_new
        gnorm = np.linalg.norm(g)
        scale = np.linalg.norm(A.matvec(w))

    w = np.maximum(w, 0.0)
    P = constraint_integral(dw, w, p)
    if P <= 0:
        raise ConvergenceFailure("refined iterate left the constraint cone")
    v = w / P ** (1.0 / p)
    Av = A.matvec(v)
    alpha = float(v @ Av) / 1.0  # constraint is exactly 1 after rescale
    resid = float(np.linalg.norm(Av - alpha * dw * v ** (p - 1.0)) / np.linalg.norm(Av))
    return GroundState(
        p=p,
        alpha_p=alpha,
        v_p=ScalarField(grid, v),
        log_amp=math.log(alpha) / (p - 2.0),
        residual=resid,
        iterations=state.iterations + it,
    )


def sup_norm_scaling(state: GroundState) -> tuple[float | None, float]:
    """(sup norm of u_p or None on overflow, its (p-2) power).

    The power M^{p-2} = alpha_p * (sup v_p)^{p-2} is always finite and is
    the quantity whose p -> 2 limit is the ground eigenvalue.
    """
    ln_sup_v = math.log(state.sup_v)
    ln_m = state.log_amp + ln_sup_v
    m_pow = math.exp((state.p - 2.0) * ln_m)
    m = math.exp(ln_m) if abs(ln_m) < LOG_AMP_SAFE else None
    return m, m_pow


def log_sup_norm(state: GroundState) -> float:
    return state.log_amp + math.log(state.sup_v)


def radial_ground_state(
    domain: Ball,
    p: float,
    m: int = 4000,
    r_max: float | None = None,
    tol: float = 1e-12,
    newton_tol: float = 1e-11,
) -> GroundState:
    """1D oracle for ground states on centered balls (near-2 regime)."""
    if not (isinstance(domain, Ball) and domain.is_radial()):
        raise ValueError("radial oracle requires a centered ball")
    _check_p(p, domain.dimension)
    if r_max is None:
        # polynomial far field; push the envelope below 1e-2 relative
        r_max = domain.radius * max(8.0, 100.0 ** ((p - 2.0) / 2.0) + 4.0)
        r_max = max(r_max, domain.radius + 24.0)
    grid = RadialGrid(float(r_max), m, dimension=domain.dimension)
    state = minimize_alpha(grid, domain, p, tol=tol)
    return newton_refine(state, tol=newton_tol, domain=domain)


def alpha_lower_bound(domain: Domain) -> float:
    """Sobolev/Holder lower bound for alpha_p, uniform over p in [1, 2*]."""
    N = domain.dimension
    s_best = (
        math.pi * N * (N - 2.0) * (math.gamma(N / 2.0) / math.gamma(float(N))) ** (2.0 / N)
    )
    vol = domain.volume()
    two_star = critical_exponent(N)
    # |Omega|^(2/2* - 2/p) minimized over p in [1, 2*] at an endpoint
    exps = [2.0 / two_star - 2.0, 0.0]
    return s_best * min(vol**e for e in exps)


def alpha_upper_bound(domain: Domain, grid, p_samples: int = 41) -> float:
    """Upper bound from a fixed admissible bump family, maximized over p."""
    N = domain.dimension
    A = assemble_stiffness(grid)
    D = assemble_weight(grid, domain)
    rho = default_seed(domain, grid)
    E = float(rho @ A.matvec(rho))
    out = 0.0
    for p in np.linspace(1.0, critical_exponent(N), p_samples):
        P = constraint_integral(D.diag, rho, p)
        if P <= 0:
            raise ConvergenceFailure("bump family left the constraint cone")
        out = max(out, E / P ** (2.0 / p))
    return out
