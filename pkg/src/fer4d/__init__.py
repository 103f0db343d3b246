"""Landmark-assisted collaborative 4D facial expression recognition."""

from fer4d.mesh import (
    EXPRESSIONS,
    Dataset,
    Frame,
    LandmarkSchema,
    Mesh,
    MeshSequence,
    PreprocessConfig,
)

__version__ = "0.1.0"

__all__ = [
    "EXPRESSIONS",
    "Dataset",
    "Frame",
    "LandmarkSchema",
    "Mesh",
    "MeshSequence",
    "PreprocessConfig",
]
