"""Resampling of volumes and label maps through the deformation x + u(x).

Out-of-grid sample positions are clamped to the boundary (border
replication) rather than zero-filled, so no artificial edges enter the
similarity term.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .types import DisplacementField, LabelMap, Volume, as_displacement_array, as_volume_array


def _check_match(dims_a, dims_b):
    if tuple(dims_a) != tuple(dims_b):
        raise ValueError(f"shape mismatch: {tuple(dims_a)} vs {tuple(dims_b)}")


def warp_trilinear(m: Volume, u: DisplacementField) -> Volume:
    """Trilinear resampling: output(x) = m(x + u(x))."""
    _check_match(m.dims, u.dims)
    return Volume(_kernels.trilinear_gather(m.data, u.vectors), m.spacing)


def warp_labels(labels: LabelMap, u: DisplacementField) -> LabelMap:
    """Nearest-neighbor resampling of a label map; half-voxel ties round up."""
    _check_match(labels.dims, u.dims)
    return LabelMap(_kernels.nearest_gather(labels.labels, u.vectors), labels.label_names)


def warp_array(m, u) -> np.ndarray:
    """Array-level trilinear warp (no container validation)."""
    m = as_volume_array(m)
    u = as_displacement_array(u)
    _check_match(m.shape, u.shape[1:])
    return _kernels.trilinear_gather(m, u)


def warp_array_with_grad(m, u):
    """Warped values and their derivative w.r.t. the sample coordinates.

    The gradient is the chain-rule factor between a loss on the warped image
    and the displacement components: dL/du_d(x) = dL/dw(x) * grad[d](x).
    Axes whose sample position sits at or beyond the grid edge carry zero
    derivative (clamp subgradient).
    """
    m = as_volume_array(m)
    u = as_displacement_array(u)
    _check_match(m.shape, u.shape[1:])
    return _kernels.trilinear_gather_grad(m, u)
