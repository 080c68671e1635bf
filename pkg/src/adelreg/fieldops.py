"""Finite-difference differential operators on displacement fields.

First derivatives use central differences in the interior and one-sided
first-order differences on the six boundary faces; both are exact on affine
fields. Every forward operator here has an explicit adjoint so energy
gradients can be assembled by the chain rule and verified against finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import ScalarField, Spacing, TensorField, as_displacement_array

#: smoothing floor for d||J||_F / dJ at J = 0
GRAD_NORM_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# 1D stencils along one axis, applied to 3D arrays
# ---------------------------------------------------------------------------

def diff_axis(a: np.ndarray, axis: int) -> np.ndarray:
    """First derivative along ``axis``: central interior, one-sided faces."""
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = 0.5 * (a[2:] - a[:-2])
    out[0] = a[1] - a[0]
    out[-1] = a[-1] - a[-2]
    return np.moveaxis(out, 0, axis)


def diff_axis_adjoint(y: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`diff_axis` (as a linear map on the grid)."""
    y = np.moveaxis(y, axis, 0)
    out = np.zeros_like(y)
    out[0] -= y[0]
    out[1] += y[0]
    out[:-2] -= 0.5 * y[1:-1]
    out[2:] += 0.5 * y[1:-1]
    out[-2] -= y[-1]
    out[-1] += y[-1]
    return np.moveaxis(out, 0, axis)


def diff2_axis(a: np.ndarray, axis: int) -> np.ndarray:
    """Pure second derivative along ``axis``.

    Compact central stencil in the interior; the one-sided copy of the same
    stencil at the faces (first-order there, exact on quadratics inside).
    Arrays of extent 2 along the axis get a zero second derivative.
    """
    a = np.moveaxis(a, axis, 0)
    out = np.zeros_like(a)
    if a.shape[0] >= 3:
        out[1:-1] = a[2:] - 2.0 * a[1:-1] + a[:-2]
        out[0] = a[2] - 2.0 * a[1] + a[0]
        out[-1] = a[-3] - 2.0 * a[-2] + a[-1]
    return np.moveaxis(out, 0, axis)


def diff2_axis_adjoint(y: np.ndarray, axis: int) -> np.ndarray:
    y = np.moveaxis(y, axis, 0)
    out = np.zeros_like(y)
    if y.shape[0] >= 3:
        out[2:] += y[1:-1]
        out[1:-1] -= 2.0 * y[1:-1]
        out[:-2] += y[1:-1]
        out[2] += y[0]
        out[1] -= 2.0 * y[0]
        out[0] += y[0]
        out[-3] += y[-1]
        out[-2] -= 2.0 * y[-1]
        out[-1] += y[-1]
    return np.moveaxis(out, 0, axis)


def interior_mask(dims) -> np.ndarray:
    """True where the central-difference stencil applies on all axes."""
    mask = np.zeros(dims, dtype=bool)
    mask[1:-1, 1:-1, 1:-1] = True
    return mask


# ---------------------------------------------------------------------------
# array-level operators (used by the optimizer's inner loop)
# ---------------------------------------------------------------------------

def jacobian_array(u: np.ndarray, spacing: Spacing = (1.0, 1.0, 1.0)) -> np.ndarray:
    """J[i, j] = d u_i / d x_j for a (3, nx, ny, nz) displacement array."""
    jac = np.empty((3, 3) + u.shape[1:])
    for i in range(3):
        for j in range(3):
            jac[i, j] = diff_axis(u[i], j) / spacing[j]
    return jac


def jacobian_adjoint_array(y: np.ndarray, spacing: Spacing = (1.0, 1.0, 1.0)) -> np.ndarray:
    """Adjoint of :func:`jacobian_array`: maps (3, 3, ...) back to (3, ...)."""
    out = np.zeros((3,) + y.shape[2:])
    for i in range(3):
        for j in range(3):
            out[i] += diff_axis_adjoint(y[i, j], j) / spacing[j]
    return out


def det3_array(a: np.ndarray) -> np.ndarray:
    """Determinant of per-voxel 3x3 matrices, shape (3, 3, ...)."""
    return (
        a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
        + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
    )


def cofactor3_array(a: np.ndarray) -> np.ndarray:
    """Cofactor matrices C with C[i, j] = d det(A) / d A[i, j].

    Row i of C is the cross product of the other two rows (cyclic), which is
    polynomial in the entries and stays exact where A is singular.
    """
    c = np.empty_like(a)
    for i in range(3):
        r1 = a[(i + 1) % 3]
        r2 = a[(i + 2) % 3]
        c[i, 0] = r1[1] * r2[2] - r1[2] * r2[1]
        c[i, 1] = r1[2] * r2[0] - r1[0] * r2[2]
        c[i, 2] = r1[0] * r2[1] - r1[1] * r2[0]
    return c


def identity_plus(jac: np.ndarray) -> np.ndarray:
    """I + J per voxel."""
    out = jac.copy()
    for d in range(3):
        out[d, d] += 1.0
    return out


def strain_array(jac: np.ndarray) -> np.ndarray:
    return 0.5 * (jac + np.swapaxes(jac, 0, 1))


def trace_array(jac: np.ndarray) -> np.ndarray:
    return jac[0, 0] + jac[1, 1] + jac[2, 2]


def frobenius_norm_array(jac: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij...,ij...->...", jac, jac))


# ---------------------------------------------------------------------------
# public operations on the typed containers
# ---------------------------------------------------------------------------

@dataclass
class EnergyDensities:
    """Per-voxel volumetric and shape-change elastic energy densities."""

    strain_density: ScalarField
    shear_density: ScalarField


def displacement_jacobian(u, spacing: Spacing = (1.0, 1.0, 1.0)) -> TensorField:
    """Per-voxel displacement Jacobian grad(u).

    ``spacing`` is in the same units as the displacement components; pass the
    default (1, 1, 1) when working in voxel units.
    """
    arr = as_displacement_array(u)
    return TensorField(jacobian_array(arr, spacing), tag="jacobian")


def strain_tensor(jac: TensorField) -> TensorField:
    """Symmetrized Jacobian (grad u + grad u^T) / 2."""
    if jac.tag != "jacobian":
        raise ValueError("strain_tensor expects a jacobian-tagged field")
    return TensorField(strain_array(jac.matrices), tag="strain")


def gradient_norm(jac: TensorField) -> ScalarField:
    """Per-voxel Frobenius norm of the displacement Jacobian."""
    if jac.tag != "jacobian":
        raise ValueError("gradient_norm expects a jacobian-tagged field")
    return ScalarField(frobenius_norm_array(jac.matrices))


def energy_densities(eta: TensorField, lam, mu) -> EnergyDensities:
    """Elastic energy densities lam * trace(eta)^2 and mu * ||eta||_F^2.

    ``lam`` and ``mu`` are per-voxel Lame coefficient fields (ScalarField or
    array) on the same grid.
    """
    if eta.tag != "strain":
        raise ValueError("energy_densities expects a strain-tagged field")
    lam_arr = lam.values if isinstance(lam, ScalarField) else np.asarray(lam, dtype=np.float64)
    mu_arr = mu.values if isinstance(mu, ScalarField) else np.asarray(mu, dtype=np.float64)
    lam_arr = np.broadcast_to(lam_arr, eta.dims)
    mu_arr = np.broadcast_to(mu_arr, eta.dims)
    if lam_arr.min() < 0 or mu_arr.min() < 0:
        raise ValueError("invalid Lame field: negative coefficients")
    tr = trace_array(eta.matrices)
    frob2 = np.einsum("ij...,ij...->...", eta.matrices, eta.matrices)
    return EnergyDensities(
        strain_density=ScalarField(lam_arr * tr * tr),
        shear_density=ScalarField(mu_arr * frob2),
    )


def deformation_jacobian_det(jac: TensorField) -> ScalarField:
    """det(I + grad u): local volume-change factor of the deformation."""
    if jac.tag != "jacobian":
        raise ValueError("deformation_jacobian_det expects a jacobian-tagged field")
    return ScalarField(det3_array(identity_plus(jac.matrices)))
