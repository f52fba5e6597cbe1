"""Hot-loop kernels, compiled when available.

The Cython extension ``seqkitti._kernels`` is preferred; if it is not built
the numpy implementations in ``seqkitti._kernels_py`` are used instead.
``BACKEND`` names the active implementation.
"""

from . import _kernels_py as python_impl

try:
    from . import _kernels as compiled_impl
except ImportError:  # extension not built
    compiled_impl = None

_impl = compiled_impl if compiled_impl is not None else python_impl

BACKEND = _impl.BACKEND
voxel_assign = _impl.voxel_assign
points_in_boxes = _impl.points_in_boxes
bev_intersection = _impl.bev_intersection

__all__ = ["BACKEND", "voxel_assign", "points_in_boxes", "bev_intersection", "python_impl", "compiled_impl"]
