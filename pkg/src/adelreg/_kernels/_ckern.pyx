# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled warp kernels.

Semantics (and floating-point expression order) match numpy_backend.py
exactly; the two backends must agree bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


cdef inline double _clamp(double p, double hi) nogil:
    if p < 0.0:
        return 0.0
    if p > hi:
        return hi
    return p


def trilinear_gather(double[:, :, ::1] vol, double[:, :, :, ::1] disp):
    cdef Py_ssize_t nx = vol.shape[0], ny = vol.shape[1], nz = vol.shape[2]
    out_arr = np.empty((nx, ny, nz), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t x, y, z, ix, iy, iz
    cdef double px, py, pz, tx, ty, tz
    cdef double v000, v100, v010, v110, v001, v101, v011, v111
    cdef double c00, c10, c01, c11, c0, c1
    with nogil:
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    px = _clamp(x + disp[0, x, y, z], nx - 1.0)
                    py = _clamp(y + disp[1, x, y, z], ny - 1.0)
                    pz = _clamp(z + disp[2, x, y, z], nz - 1.0)
                    ix = <Py_ssize_t>px
                    if ix > nx - 2:
                        ix = nx - 2
                    iy = <Py_ssize_t>py
                    if iy > ny - 2:
                        iy = ny - 2
                    iz = <Py_ssize_t>pz
                    if iz > nz - 2:
                        iz = nz - 2
                    tx = px - ix
                    ty = py - iy
                    tz = pz - iz
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
                    out[x, y, z] = c0 * (1.0 - tz) + c1 * tz
    return out_arr


def trilinear_gather_grad(double[:, :, ::1] vol, double[:, :, :, ::1] disp):
    cdef Py_ssize_t nx = vol.shape[0], ny = vol.shape[1], nz = vol.shape[2]
    out_arr = np.empty((nx, ny, nz), dtype=np.float64)
    grad_arr = np.empty((3, nx, ny, nz), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, :, :, ::1] grad = grad_arr
    cdef Py_ssize_t x, y, z, ix, iy, iz
    cdef double rx, ry, rz, px, py, pz, tx, ty, tz
    cdef double v000, v100, v010, v110, v001, v101, v011, v111
    cdef double c00, c10, c01, c11, c0, c1
    cdef double dx00, dx10, dx01, dx11
    with nogil:
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    rx = x + disp[0, x, y, z]
                    ry = y + disp[1, x, y, z]
                    rz = z + disp[2, x, y, z]
                    px = _clamp(rx, nx - 1.0)
                    py = _clamp(ry, ny - 1.0)
                    pz = _clamp(rz, nz - 1.0)
                    ix = <Py_ssize_t>px
                    if ix > nx - 2:
                        ix = nx - 2
                    iy = <Py_ssize_t>py
                    if iy > ny - 2:
                        iy = ny - 2
                    iz = <Py_ssize_t>pz
                    if iz > nz - 2:
                        iz = nz - 2
                    tx = px - ix
                    ty = py - iy
                    tz = pz - iz
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
                    out[x, y, z] = c0 * (1.0 - tz) + c1 * tz
                    dx00 = v100 - v000
                    dx10 = v110 - v010
                    dx01 = v101 - v001
                    dx11 = v111 - v011
                    if rx > 0.0 and rx < nx - 1.0:
                        grad[0, x, y, z] = (dx00 * (1.0 - ty) + dx10 * ty) * (1.0 - tz) \
                            + (dx01 * (1.0 - ty) + dx11 * ty) * tz
                    else:
                        grad[0, x, y, z] = 0.0
                    if ry > 0.0 and ry < ny - 1.0:
                        grad[1, x, y, z] = (c10 - c00) * (1.0 - tz) + (c11 - c01) * tz
                    else:
                        grad[1, x, y, z] = 0.0
                    if rz > 0.0 and rz < nz - 1.0:
                        grad[2, x, y, z] = c1 - c0
                    else:
                        grad[2, x, y, z] = 0.0
    return out_arr, grad_arr


def nearest_gather(int[:, :, ::1] values, double[:, :, :, ::1] disp):
    cdef Py_ssize_t nx = values.shape[0], ny = values.shape[1], nz = values.shape[2]
    out_arr = np.empty((nx, ny, nz), dtype=np.int32)
    cdef int[:, :, ::1] out = out_arr
    cdef Py_ssize_t x, y, z, ix, iy, iz
    with nogil:
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    ix = <Py_ssize_t>(_clamp(x + disp[0, x, y, z], nx - 1.0) + 0.5)
                    iy = <Py_ssize_t>(_clamp(y + disp[1, x, y, z], ny - 1.0) + 0.5)
                    iz = <Py_ssize_t>(_clamp(z + disp[2, x, y, z], nz - 1.0) + 0.5)
                    if ix > nx - 1:
                        ix = nx - 1
                    if iy > ny - 1:
                        iy = ny - 1
                    if iz > nz - 1:
                        iz = nz - 1
                    out[x, y, z] = values[ix, iy, iz]
    return out_arr
