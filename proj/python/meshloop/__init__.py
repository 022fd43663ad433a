"""Python bindings for the meshloop core library."""

from ._meshloop import (
    FIELDS_PER_GAUSSIAN,
    evaluate_geometry,
    load_scene,
    marching_tetrahedra,
    output_root,
    run,
    save_scene,
    triangulate,
)

__all__ = [
    "FIELDS_PER_GAUSSIAN",
    "evaluate_geometry",
    "load_scene",
    "marching_tetrahedra",
    "output_root",
    "run",
    "save_scene",
    "triangulate",
]
