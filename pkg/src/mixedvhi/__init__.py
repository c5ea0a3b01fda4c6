"""Stokes flow with monotone and non-monotone slip friction, MINI elements and Uzawa iteration.

Also contains a finite-dimensional harness for mixed variational-hemivariational
inequalities (:mod:`mixedvhi.abstract_vhi`).
"""

from ._accel import backend_name
from .fem_stokes import StokesSystem, assemble
from .friction import MonotoneFriction, NonmonotoneFriction
from .mesh import BoundaryTag, TriangleMesh, load_gmsh_file, parse_gmsh, structured_unit_square
from .uzawa import UzawaConfig, UzawaSolver, UzawaState

__version__ = "0.1.0"

__all__ = [
    "BoundaryTag", "MonotoneFriction", "NonmonotoneFriction", "StokesSystem", "TriangleMesh",
    "UzawaConfig", "UzawaSolver", "UzawaState", "assemble", "backend_name", "load_gmsh_file",
    "parse_gmsh", "structured_unit_square",
]
