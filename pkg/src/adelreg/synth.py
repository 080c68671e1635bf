"""Synthetic volumes, segmentations and ground-truth deformations.

The moving image is a procedural texture; the fixed image is defined as the
moving image warped by a known fold-free displacement, so registering
moving to fixed should recover that field. Generation is deterministic per
seed and rejects candidate fields whose deformation determinant drops below
the fold-free bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .fieldops import det3_array, identity_plus, jacobian_array
from .types import DisplacementField, LabelMap, Volume, check_dims, normalize_intensity
from .warp import warp_labels, warp_trilinear

#: generated fields must keep min det(I + grad u) above this
MIN_DET_BOUND = 0.2

MAX_ATTEMPTS = 20

#: width (voxels) of the cosine taper that pins displacements to ~0 at the border
BORDER_MARGIN = 4.0


class ResampleExhaustedError(RuntimeError):
    """No fold-free field found within the attempt budget."""


@dataclass
class SynthSpec:
    dims: tuple[int, int, int] = (32, 32, 32)
    seed: int = 0
    deformation: str = "gaussian-bumps"  # or "dilation", "translation"
    bump_count: int = 4
    max_amplitude: float = 3.0
    bump_sigma: float = 6.0
    dilation_scale: float = 0.05
    translation: tuple[float, float, float] = (1.0, 0.0, 0.0)
    texture: str = "blob-phantom"  # or "ramp", "checkerboard"
    n_blobs: int = 200
    checker_period: int = 4
    label_spheres: int = 3

    def __post_init__(self):
        self.dims = check_dims(self.dims)
        if self.deformation not in ("gaussian-bumps", "dilation", "translation"):
            raise ValueError(f"unknown deformation kind {self.deformation!r}")
        if self.texture not in ("blob-phantom", "ramp", "checkerboard"):
            raise ValueError(f"unknown texture kind {self.texture!r}")
        if self.max_amplitude < 0:
            raise ValueError("max_amplitude must be >= 0")
        if self.bump_sigma <= 0 or self.bump_count < 1:
            raise ValueError("bump_sigma must be > 0 and bump_count >= 1")
        if self.label_spheres < 1:
            raise ValueError("label_spheres must be >= 1")


class SynthPair(NamedTuple):
    fixed: Volume
    moving: Volume
    u_gt: DisplacementField
    labels_fixed: LabelMap
    labels_moving: LabelMap


def _grid(dims):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")


def _border_taper(dims) -> np.ndarray:
    """Smooth window that is 0 on the faces and 1 a few voxels inside."""
    taper = 1.0
    for axis, n in enumerate(dims):
        idx = np.arange(n, dtype=np.float64)
        dist = np.minimum(idx, n - 1 - idx) / BORDER_MARGIN
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.minimum(dist, 1.0))
        shape = [1, 1, 1]
        shape[axis] = n
        taper = taper * ramp.reshape(shape)
    return taper


def _bump_field(dims, rng, spec: SynthSpec) -> np.ndarray:
    xs = _grid(dims)
    u = np.zeros((3,) + dims)
    for _ in range(spec.bump_count):
        center = [rng.uniform(0.3 * (n - 1), 0.7 * (n - 1)) for n in dims]
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        scale = rng.uniform(0.5, 1.0) * spec.max_amplitude
        r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
        bump = np.exp(-r2 / (2.0 * spec.bump_sigma**2))
        for d in range(3):
            u[d] += scale * direction[d] * bump
    u *= _border_taper(dims)
    peak = np.sqrt((u * u).sum(axis=0)).max()
    if peak > 0:
        u *= spec.max_amplitude / peak
    return u


def _deformation(dims, rng, spec: SynthSpec) -> np.ndarray:
    if spec.deformation == "translation":
        u = np.zeros((3,) + dims)
        for d in range(3):
            u[d] = spec.translation[d]
        return u
    if spec.deformation == "dilation":
        xs = _grid(dims)
        u = np.empty((3,) + dims)
        for d in range(3):
            u[d] = spec.dilation_scale * (xs[d] - 0.5 * (dims[d] - 1))
        return u
    return _bump_field(dims, rng, spec)


def _texture(dims, rng, spec: SynthSpec) -> np.ndarray:
    if spec.texture == "ramp":
        xs = _grid(dims)
        raw = xs[0] + 0.5 * xs[1] + 0.25 * xs[2]
    elif spec.texture == "checkerboard":
        xs = _grid(dims)
        parity = sum((x // spec.checker_period).astype(np.int64) for x in xs) % 2
        raw = parity.astype(np.float64)
    else:
        xs = _grid(dims)
        raw = np.zeros(dims)
        for _ in range(spec.n_blobs):
            center = [rng.uniform(0, n - 1) for n in dims]
            sigma = rng.uniform(1.5, 4.0)
            amp = rng.uniform(-1.0, 1.0)
            r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
            raw += amp * np.exp(-r2 / (2.0 * sigma * sigma))
    return normalize_intensity(Volume(raw)).data


def _sphere_labels(dims, k: int) -> np.ndarray:
    xs = _grid(dims)
    center = [(n - 1) / 2.0 for n in dims]
    radius = np.sqrt(sum((x - c) ** 2 for x, c in zip(xs, center)))
    r_max = 0.45 * min(dims)
    labels = np.zeros(dims, dtype=np.int32)
    for i in range(k, 0, -1):
        labels[radius <= r_max * i / k] = i
    return labels


def min_deformation_det(u) -> float:
    arr = u.vectors if isinstance(u, DisplacementField) else np.asarray(u)
    return float(det3_array(identity_plus(jacobian_array(arr))).min())


def make_pair(spec: SynthSpec) -> SynthPair:
    """Generate (fixed, moving, u_gt, labels_fixed, labels_moving)."""
    rng = np.random.default_rng(spec.seed)
    moving = Volume(_texture(spec.dims, rng, spec))

    for _ in range(MAX_ATTEMPTS):
        u = _deformation(spec.dims, rng, spec)
        if min_deformation_det(u) > MIN_DET_BOUND:
            break
    else:
        raise ResampleExhaustedError(
            f"could not satisfy fold-free bound (min det > {MIN_DET_BOUND}) in "
            f"{MAX_ATTEMPTS} attempts; reduce amplitude"
        )

    u_gt = DisplacementField(u)
    fixed = warp_trilinear(moving, u_gt)
    labels_moving = LabelMap(_sphere_labels(spec.dims, spec.label_spheres))
    labels_fixed = warp_labels(labels_moving, u_gt)
    return SynthPair(fixed, moving, u_gt, labels_fixed, labels_moving)


def endpoint_error(u_est, u_gt, mask=None) -> tuple[float, float]:
    """Mean and max Euclidean error between two displacement fields (voxels)."""
    a = u_est.vectors if isinstance(u_est, DisplacementField) else np.asarray(u_est)
    b = u_gt.vectors if isinstance(u_gt, DisplacementField) else np.asarray(u_gt)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = np.sqrt(((a - b) ** 2).sum(axis=0))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != err.shape:
            raise ValueError(f"mask shape {mask.shape} does not match field {err.shape}")
        err = err[mask]
        if err.size == 0:
            raise ValueError("mask selects no voxels")
    return float(err.mean()), float(err.max())
