"""Mesh I/O, planar discontinuity detection and echo-guided hole filling."""

from .enhance import (
    EchoClassification,
    EnhanceConfig,
    enhance,
    inpaint,
    load_classifications,
    place_background,
)
from .geometry import (
    CameraPose,
    PlanarDiscontinuity,
    convex_hull_planar,
    depth_filter,
    detect_discontinuities,
    remove_loose_components,
)
from .obj import TriMesh, load_obj, save_obj

__all__ = [
    "CameraPose",
    "EchoClassification",
    "EnhanceConfig",
    "PlanarDiscontinuity",
    "TriMesh",
    "convex_hull_planar",
    "depth_filter",
    "detect_discontinuities",
    "enhance",
    "inpaint",
    "load_classifications",
    "load_obj",
    "place_background",
    "remove_loose_components",
    "save_obj",
]
