"""Spectral and semilinear ground-state solvers for self-focusing-core media.

The linear problem is the eigenvalue pencil of the Dirichlet energy against
a +1/-1 core weight; the nonlinear problem is the constrained minimization
of the energy over a signed p-norm constraint.  The verify subpackage turns
the qualitative theory (decay rates, nodal structure, symmetry, shape
comparisons, asymptotics) into quantitative checks.
"""

__version__ = "0.1.0"

from . import geometry, grids
from .geometry import Annulus, Ball, Box, UnionOfBalls

__all__ = [
    "geometry",
    "grids",
    "Ball",
    "Annulus",
    "UnionOfBalls",
    "Box",
    "__version__",
]
