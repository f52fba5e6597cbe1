"""Sequential LiDAR data to KITTI conversion, temporal accumulation,
detection postprocessing and rotated-box evaluation."""

from .datamodel import Box3D, BoxClass, CalibrationSet, Frame, PointCloud, Sequence, read_sequence, write_sequence
from .geometry import ProjectionMatrix, Transform, compose, invert, transform_points, wrap_heading
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Box3D",
    "BoxClass",
    "CalibrationSet",
    "Frame",
    "PointCloud",
    "ProjectionMatrix",
    "Sequence",
    "Transform",
    "compose",
    "invert",
    "read_sequence",
    "transform_points",
    "wrap_heading",
    "write_sequence",
]
