"""Resolve the interpenetration of two deformable triangle meshes with a
dynamic network of vertices exchanging spring forces."""

from .collision import Correspondence, brute_force_detect, detect, point_in_mesh
from .material import compliance_matrix, stiffness_matrix
from .mesh_core import ObjectModel, build_internal_edges, generate_interior_points, load_obj, save_obj
from .solver import SolverConfig, run

__all__ = [
    "Correspondence",
    "ObjectModel",
    "SolverConfig",
    "brute_force_detect",
    "build_internal_edges",
    "compliance_matrix",
    "detect",
    "generate_interior_points",
    "load_obj",
    "point_in_mesh",
    "run",
    "save_obj",
    "stiffness_matrix",
]

__version__ = "0.1.0"
