"""Meshes, signed scalar fields, SDF sampling and isosurface extraction."""

from .trimesh import (
    TriMesh,
    Transform,
    normalize_to_unit_sphere,
    sample_surface,
    chamfer_distance,
    write_stl,
    read_stl,
    parse_stl,
    stl_bytes,
)
from .fields import (
    ScalarField3,
    sphere_field,
    torus_field,
    constant_field,
    finite_difference_gradient,
    probe_lipschitz,
)
from .sampling import SdfSamples, sample_sdf, sample_sdf_split, BALL_SLACK
from .marching import marching_cubes

__all__ = [
    "TriMesh", "Transform", "normalize_to_unit_sphere", "sample_surface",
    "chamfer_distance", "write_stl", "read_stl", "parse_stl", "stl_bytes",
    "ScalarField3", "sphere_field", "torus_field", "constant_field",
    "finite_difference_gradient", "probe_lipschitz",
    "SdfSamples", "sample_sdf", "sample_sdf_split", "BALL_SLACK",
    "marching_cubes",
]
