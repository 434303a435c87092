"""Symmetric boundary-element solver for nested piecewise-constant conductors.

The package assembles the symmetric two-trace boundary integral system for
the potential of current sources inside a nested arrangement of closed
triangulated surfaces, and solves it with Krylov methods.  A sparse
Laplacian-based preconditioner keeps the condition number and iteration
count flat under mesh refinement.
"""

from .geometry import TriangleMesh, NestedModel, make_icosphere
from .formulation import DipoleSource, BlockSystem
from .krylov import SolveReport

__version__ = "0.1.0"

__all__ = [
    "TriangleMesh",
    "NestedModel",
    "make_icosphere",
    "DipoleSource",
    "BlockSystem",
    "SolveReport",
    "__version__",
]
