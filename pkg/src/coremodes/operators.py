"""Discrete operators: sparse forms, stencil matvecs, and sine-basis powers.

The box stiffness operator diagonalizes exactly in the tensor discrete sine
basis (DST-I), so arbitrary powers A^s (including the inverse and the
symmetric square roots used by the pencil solver) are applied via fast
transforms with no fill-in.  Sparse matrices are materialized lazily; large
grids are served entirely by matrix-free applications.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import fft as sfft

from .grids import BoxGrid, RadialGrid

__all__ = ["SparseOperator", "BoxSineTransform", "box_stiffness_matvec"]


class AssemblyError(ValueError):
    """Raised when operator assembly preconditions fail."""


class BoxSineTransform:
    """DST-I diagonalization of the box Dirichlet form.

    The quadratic form u^T A u = h^3 * sum |grad_h u|^2 has eigenvalues
    h^3 * (lam_i + lam_j + lam_k) with lam_j = (2 - 2 cos(j pi/(n+1)))/h^2
    on the orthonormal sine basis, so A^s is three forward transforms, a
    diagonal scaling, and three inverse transforms.
    """

    def __init__(self, grid: BoxGrid):
        self.grid = grid
        n, h = grid.n, grid.h
        lam1 = (2.0 - 2.0 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1))) / h**2
        self.eigs = (
            lam1[:, None, None] + lam1[None, :, None] + lam1[None, None, :]
        ) * h**3

    def _dst(self, v: np.ndarray) -> np.ndarray:
        return sfft.dstn(v.reshape(self.grid.shape), type=1, norm="ortho")

    def _idst(self, v: np.ndarray) -> np.ndarray:
        return sfft.idstn(v, type=1, norm="ortho")

    def apply_pow(self, v: np.ndarray, s: float) -> np.ndarray:
        """A^s v for any real s; exact up to roundoff."""
        coeff = self._dst(v)
        coeff *= self.eigs**s
        return self._idst(coeff).ravel()

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.apply_pow(b, -1.0)

    @property
    def min_eig(self) -> float:
        return float(self.eigs[0, 0, 0])


def box_stiffness_matvec(grid: BoxGrid, v: np.ndarray) -> np.ndarray:
    """7-point stencil application of the box Dirichlet form, matrix-free."""
    u = v.reshape(grid.shape)
    out = 6.0 * u.copy()
    out[1:, :, :] -= u[:-1, :, :]
    out[:-1, :, :] -= u[1:, :, :]
    out[:, 1:, :] -= u[:, :-1, :]
    out[:, :-1, :] -= u[:, 1:, :]
    out[:, :, 1:] -= u[:, :, :-1]
    out[:, :, :-1] -= u[:, :, 1:]
    out *= grid.h  # h^3 quadrature / h^2 stencil
    return out.ravel()


@dataclass
class SparseOperator:
    """Symmetric operator with a lazy CSR matrix and a fast matvec.

    kind is one of 'stiffness', 'weight', 'generic'.  Weight operators are
    diagonal and carry their diagonal explicitly.
    """

    shape: tuple[int, int]
    kind: str = "generic"
    grid: BoxGrid | RadialGrid | None = None
    diag: np.ndarray | None = None
    _matvec=None
    _builder=None
    _mat: sp.csr_matrix | None = field(default=None, repr=False)

    def __init__(self, shape, kind="generic", grid=None, diag=None, matvec=None,
                 builder=None, mat=None):
        self.shape = shape
        self.kind = kind
        self.grid = grid
        self.diag = diag
        self._matvec = matvec
        self._builder = builder
        self._mat = mat

    @property
    def mat(self) -> sp.csr_matrix:
        if self._mat is None:
            if self._builder is None:
                raise AssemblyError("no sparse representation available")
            self._mat = self._builder().tocsr()
        return self._mat

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.diag is not None:
            return self.diag * v
        if self._matvec is not None:
            return self._matvec(v)
        return self.mat @ v

    def __matmul__(self, v):
        return self.matvec(np.asarray(v, dtype=float))

    def quadratic_form(self, u: np.ndarray, v: np.ndarray | None = None) -> float:
        v = u if v is None else v
        return float(u @ self.matvec(v))

    @cached_property
    def sine(self) -> BoxSineTransform:
        if self.kind != "stiffness" or not isinstance(self.grid, BoxGrid):
            raise AssemblyError("sine transform applies to box stiffness only")
        return BoxSineTransform(self.grid)

    @cached_property
    def radial_cholesky(self):
        """Banded Cholesky factor of a radial (tridiagonal) stiffness form."""
        if self.kind != "stiffness" or not isinstance(self.grid, RadialGrid):
            raise AssemblyError("banded Cholesky applies to radial stiffness only")
        from scipy.linalg import cholesky_banded

        ab = np.zeros((2, self.shape[0]))
        m = self.mat.tocsc()
        ab[1] = m.diagonal()
        ab[0, 1:] = m.diagonal(1)
        return cholesky_banded(ab, lower=False)
