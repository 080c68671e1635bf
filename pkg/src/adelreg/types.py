"""Grid-backed containers shared by every other module.

Conventions, fixed package-wide:

* scalar grids are numpy arrays indexed ``[x, y, z]``; vector fields are
  ``[component, x, y, z]``; per-voxel matrices are ``[i, j, x, y, z]``
* all field math runs in float64; file I/O may round to float32
* the flat serialization order is x-fastest (``ravel(order="F")``), with
  vector components interleaved per voxel
* displacement components are measured in voxels along each axis, not in
  millimeters; physical spacing enters only through the finite-difference
  operators
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Dims = tuple[int, int, int]
Spacing = tuple[float, float, float]

#: strain tensors may deviate from exact symmetry by at most this much
SYMMETRY_TOL = 1e-6


def check_dims(dims) -> Dims:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"expected 3 axes, got {dims!r}")
    if any(d < 2 for d in dims):
        raise ValueError(f"dims too small: {dims} (need >= 2 samples per axis)")
    return dims


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite samples")


@dataclass
class Volume:
    """Dense 3D scalar grid with physical voxel spacing in millimeters."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        check_dims(self.data.shape)
        _check_finite(self.data, "volume")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive floats, got {self.spacing}")

    @property
    def dims(self) -> Dims:
        return self.data.shape

    def flat(self) -> np.ndarray:
        """Samples in canonical x-fastest order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, dims, values, spacing=(1.0, 1.0, 1.0)) -> "Volume":
        dims = check_dims(dims)
        values = np.asarray(values, dtype=np.float64)
        if values.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"expected {dims[0] * dims[1] * dims[2]} samples, got {values.size}")
        return cls(values.reshape(dims, order="F"), spacing)


@dataclass
class LabelMap:
    """Integer segmentation on the same grid layout as :class:`Volume`.

    Label 0 is reserved for background.
    """

    labels: np.ndarray
    label_names: dict[int, str] | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        self.labels = self.labels.astype(np.int32, copy=False)
        if self.labels.ndim != 3:
            raise ValueError(f"label data must be 3D, got shape {self.labels.shape}")
        check_dims(self.labels.shape)
        if self.labels.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")

    @property
    def dims(self) -> Dims:
        return self.labels.shape

    def flat(self) -> np.ndarray:
        return self.labels.ravel(order="F")

    @classmethod
    def from_flat(cls, dims, values, label_names=None) -> "LabelMap":
        dims = check_dims(dims)
        values = np.asarray(values)
        if values.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"expected {dims[0] * dims[1] * dims[2]} labels, got {values.size}")
        return cls(values.reshape(dims, order="F"), label_names)

    def ids(self) -> list[int]:
        """Present label IDs, background excluded."""
        present = np.unique(self.labels)
        return [int(v) for v in present if v != 0]


@dataclass
class DisplacementField:
    """Per-voxel 3-vector offsets u(x), in voxels; the deformation is x + u(x)."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 4 or self.vectors.shape[0] != 3:
            raise ValueError(
                f"displacement must have shape (3, nx, ny, nz), got {self.vectors.shape}"
            )
        check_dims(self.vectors.shape[1:])
        _check_finite(self.vectors, "displacement")

    @property
    def dims(self) -> Dims:
        return self.vectors.shape[1:]

    def flat(self) -> np.ndarray:
        """Interleaved (ux, uy, uz) per voxel, voxels in x-fastest order."""
        return self.vectors.ravel(order="F")

    @classmethod
    def from_flat(cls, dims, values) -> "DisplacementField":
        dims = check_dims(dims)
        values = np.asarray(values, dtype=np.float64)
        n = 3 * dims[0] * dims[1] * dims[2]
        if values.size != n:
            raise ValueError(f"expected {n} components, got {values.size}")
        return cls(values.reshape((3,) + dims, order="F"))


@dataclass
class TensorField:
    """Per-voxel 3x3 matrices; tag is "jacobian" for grad(u) or "strain" for eta."""

    matrices: np.ndarray
    tag: str = "jacobian"

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=np.float64)
        if self.matrices.ndim != 5 or self.matrices.shape[:2] != (3, 3):
            raise ValueError(
                f"tensor field must have shape (3, 3, nx, ny, nz), got {self.matrices.shape}"
            )
        check_dims(self.matrices.shape[2:])
        if self.tag not in ("jacobian", "strain"):
            raise ValueError(f"unknown tensor tag {self.tag!r}")
        if self.tag == "strain":
            skew = np.abs(self.matrices - np.swapaxes(self.matrices, 0, 1))
            if skew.max(initial=0.0) > SYMMETRY_TOL:
                raise ValueError("strain-tagged tensor field is not symmetric")

    @property
    def dims(self) -> Dims:
        return self.matrices.shape[2:]


@dataclass
class ScalarField:
    """One scalar per voxel (gradient norms, determinants, energy densities...)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"scalar field must be 3D, got shape {self.values.shape}")
        check_dims(self.values.shape)
        _check_finite(self.values, "scalar field")

    @property
    def dims(self) -> Dims:
        return self.values.shape


def normalize_intensity(v: Volume) -> Volume:
    """Affinely map intensities onto [0, 1].

    Raises ValueError for a constant volume (degenerate intensity range).
    """
    lo = float(v.data.min())
    hi = float(v.data.max())
    if hi <= lo:
        raise ValueError("degenerate intensity range: volume is constant")
    return Volume((v.data - lo) / (hi - lo), v.spacing)


def identity_displacement(dims) -> DisplacementField:
    """The zero displacement; makes the deformation the identity map."""
    dims = check_dims(dims)
    return DisplacementField(np.zeros((3,) + dims))


def as_volume_array(v) -> np.ndarray:
    """Accept a Volume or a bare 3D array; return the float64 array."""
    if isinstance(v, Volume):
        return v.data
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D scalar grid, got shape {arr.shape}")
    return arr


def as_displacement_array(u) -> np.ndarray:
    """Accept a DisplacementField or a bare (3, nx, ny, nz) array."""
    if isinstance(u, DisplacementField):
        return u.vectors
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[0] != 3:
        raise ValueError(f"expected shape (3, nx, ny, nz), got {arr.shape}")
    return arr
