"""Pure-numpy warp kernels; the reference semantics for the compiled twin.

Sample positions are x + u(x), clamped to the grid (border replication).
The compiled backend must reproduce these results bit for bit, so keep the
arithmetic expression order in the two implementations identical.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def _positions(shape, disp):
    nx, ny, nz = shape
    px = np.arange(nx, dtype=np.float64)[:, None, None] + disp[0]
    py = np.arange(ny, dtype=np.float64)[None, :, None] + disp[1]
    pz = np.arange(nz, dtype=np.float64)[None, None, :] + disp[2]
    return px, py, pz


def _cell(p, n):
    p = np.clip(p, 0.0, n - 1.0)
    i0 = np.minimum(p.astype(np.int64), n - 2)
    return i0, p - i0


def trilinear_gather(vol: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of ``vol`` at x + u(x)."""
    nx, ny, nz = vol.shape
    px, py, pz = _positions(vol.shape, disp)
    ix, tx = _cell(px, nx)
    iy, ty = _cell(py, ny)
    iz, tz = _cell(pz, nz)

    v000 = vol[ix, iy, iz]
    v100 = vol[ix + 1, iy, iz]
    v010 = vol[ix, iy + 1, iz]
    v110 = vol[ix + 1, iy + 1, iz]
    v001 = vol[ix, iy, iz + 1]
    v101 = vol[ix + 1, iy, iz + 1]
    v011 = vol[ix, iy + 1, iz + 1]
    v111 = vol[ix + 1, iy + 1, iz + 1]

    c00 = v000 * (1.0 - tx) + v100 * tx
    c10 = v010 * (1.0 - tx) + v110 * tx
    c01 = v001 * (1.0 - tx) + v101 * tx
    c11 = v011 * (1.0 - tx) + v111 * tx
    c0 = c00 * (1.0 - ty) + c10 * ty
    c1 = c01 * (1.0 - ty) + c11 * ty
    return c0 * (1.0 - tz) + c1 * tz


def trilinear_gather_grad(vol: np.ndarray, disp: np.ndarray):
    """Interpolated values plus their derivative w.r.t. the sample position.

    Returns ``(values, grad)`` with grad of shape (3, nx, ny, nz). Sample
    positions at or beyond a grid edge get derivative zero along that axis
    (the zero branch of the clamp subgradient).
    """
    nx, ny, nz = vol.shape
    px, py, pz = _positions(vol.shape, disp)
    inx = (px > 0.0) & (px < nx - 1.0)
    iny = (py > 0.0) & (py < ny - 1.0)
    inz = (pz > 0.0) & (pz < nz - 1.0)
    ix, tx = _cell(px, nx)
    iy, ty = _cell(py, ny)
    iz, tz = _cell(pz, nz)

    v000 = vol[ix, iy, iz]
    v100 = vol[ix + 1, iy, iz]
    v010 = vol[ix, iy + 1, iz]
    v110 = vol[ix + 1, iy + 1, iz]
    v001 = vol[ix, iy, iz + 1]
    v101 = vol[ix + 1, iy, iz + 1]
    v011 = vol[ix, iy + 1, iz + 1]
    v111 = vol[ix + 1, iy + 1, iz + 1]

    c00 = v000 * (1.0 - tx) + v100 * tx
    c10 = v010 * (1.0 - tx) + v110 * tx
    c01 = v001 * (1.0 - tx) + v101 * tx
    c11 = v011 * (1.0 - tx) + v111 * tx
    c0 = c00 * (1.0 - ty) + c10 * ty
    c1 = c01 * (1.0 - ty) + c11 * ty
    values = c0 * (1.0 - tz) + c1 * tz

    dx00 = v100 - v000
    dx10 = v110 - v010
    dx01 = v101 - v001
    dx11 = v111 - v011
    gx = (dx00 * (1.0 - ty) + dx10 * ty) * (1.0 - tz) + (dx01 * (1.0 - ty) + dx11 * ty) * tz

    gy = (c10 - c00) * (1.0 - tz) + (c11 - c01) * tz
    gz = c1 - c0

    grad = np.empty((3,) + vol.shape)
    grad[0] = np.where(inx, gx, 0.0)
    grad[1] = np.where(iny, gy, 0.0)
    grad[2] = np.where(inz, gz, 0.0)
    return values, grad


def nearest_gather(values: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Nearest-neighbor sampling at x + u(x); half-voxel ties round up."""
    nx, ny, nz = values.shape
    px, py, pz = _positions(values.shape, disp)
    ix = np.floor(np.clip(px, 0.0, nx - 1.0) + 0.5).astype(np.int64)
    iy = np.floor(np.clip(py, 0.0, ny - 1.0) + 0.5).astype(np.int64)
    iz = np.floor(np.clip(pz, 0.0, nz - 1.0) + 0.5).astype(np.int64)
    np.minimum(ix, nx - 1, out=ix)
    np.minimum(iy, ny - 1, out=iy)
    np.minimum(iz, nz - 1, out=iz)
    return values[ix, iy, iz]
