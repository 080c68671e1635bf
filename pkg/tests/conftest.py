"""Shared fixtures and numerical-oracle helpers."""

import numpy as np
import pytest

from adelreg.types import DisplacementField, Volume


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_volume(rng, dims=(8, 8, 8)) -> Volume:
    return Volume(rng.random(dims))


def fractional_displacement(rng, dims, lo=0.1, hi=0.4) -> np.ndarray:
    """Random field whose sample positions stay away from interpolation cell
    boundaries: |components| are in [lo, hi], so fractional parts never come
    within (0.5 - hi) of an integer under small finite-difference steps."""
    sign = np.where(rng.random((3,) + tuple(dims)) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(lo, hi, size=(3,) + tuple(dims))


def kink_safe_component(d, idx, u_arr, dims, margin=1e-3) -> bool:
    """True when perturbing u[d, idx] cannot cross an interpolation kink:
    the sample coordinate along d is at least `margin` from every integer
    and from the clamping boundary."""
    p = idx[d] + u_arr[(d,) + tuple(idx)]
    if p < margin or p > dims[d] - 1 - margin:
        return False
    frac = p - np.floor(p)
    return margin < frac < 1.0 - margin


def central_fd(fn, u_arr, component, h=1e-5) -> float:
    """Central finite difference of a scalar function of the displacement."""
    up = u_arr.copy()
    up[component] += h
    um = u_arr.copy()
    um[component] -= h
    return (fn(up) - fn(um)) / (2.0 * h)


def check_gradient(fn, grad, u_arr, rng, n_components=50, h=1e-5, tol=1e-4,
                   dims=None, kink_filter=False, min_mag=1e-9):
    """Compare an analytic gradient against central differences.

    Samples components with non-negligible analytic magnitude (relative
    errors on ~0 entries are ill-conditioned); with ``kink_filter`` it also
    skips components whose warp sample position sits near an interpolation
    cell boundary, where the energy is legitimately non-smooth.
    """
    dims = dims or u_arr.shape[1:]
    scale = np.abs(grad).max()
    errors = []
    tried = 0
    while len(errors) < n_components and tried < 50 * n_components:
        tried += 1
        d = int(rng.integers(0, 3))
        idx = tuple(int(rng.integers(0, n)) for n in dims)
        comp = (d,) + idx
        if abs(grad[comp]) < max(min_mag, 1e-7 * scale):
            continue
        if kink_filter and not kink_safe_component(d, idx, u_arr, dims):
            continue
        fd = central_fd(fn, u_arr, comp, h)
        err = abs(fd - grad[comp]) / max(abs(fd), abs(grad[comp]), 1e-10)
        errors.append(err)
    assert len(errors) >= n_components, "could not sample enough well-conditioned components"
    assert max(errors) <= tol, f"gradient mismatch: max relative error {max(errors):.3e}"
    return max(errors)


def make_displacement(arr) -> DisplacementField:
    return DisplacementField(np.asarray(arr, dtype=np.float64))
