"""Similarity energies between a fixed volume and a warped moving volume.

Three choices: locally normalized cross-correlation (squared, so contrast
inversions are not penalized), local mutual information on overlapping
blocks with Parzen linear binning, and a plain SSD baseline. Each loss can
also return its gradient with respect to the warped intensities, which the
optimizer chains through the warp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import as_volume_array

KINDS = ("lncc", "mi", "ssd")

#: default block radius for local mutual information
MI_DEFAULT_RADIUS = 8


@dataclass
class SimilarityConfig:
    kind: str = "lncc"
    window_radius: int = 3
    mi_bins: int = 32
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown similarity kind {self.kind!r}; expected one of {KINDS}")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.mi_bins < 4:
            raise ValueError("mi_bins must be >= 4")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


def _check_pair(f, w):
    f = as_volume_array(f)
    w = as_volume_array(w)
    if f.shape != w.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {w.shape}")
    return f, w


# ---------------------------------------------------------------------------
# separable box sums
# ---------------------------------------------------------------------------

def _box_sum_axis(a: np.ndarray, radius: int, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    csum = np.cumsum(a, axis=0)
    hi = np.minimum(np.arange(n) + radius, n - 1)
    lo = np.arange(n) - radius
    out = csum[hi].copy()
    inner = lo > 0
    out[inner] -= csum[lo[inner] - 1]
    return np.moveaxis(out, 0, axis)


def box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the cubic window of the given radius, clamped at the edges."""
    out = a
    for axis in range(3):
        out = _box_sum_axis(out, radius, axis)
    return out


def box_count(shape, radius: int) -> np.ndarray:
    """Number of in-volume voxels in each clamped window (exact integers)."""
    per_axis = []
    for n in shape:
        idx = np.arange(n)
        per_axis.append(np.minimum(idx + radius, n - 1) - np.maximum(idx - radius, 0) + 1.0)
    return per_axis[0][:, None, None] * per_axis[1][None, :, None] * per_axis[2][None, None, :]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def ssd_loss(f, w, need_grad: bool = False):
    """Mean squared intensity difference."""
    f, w = _check_pair(f, w)
    diff = w - f
    value = float(np.mean(diff * diff))
    if not need_grad:
        return value
    return value, 2.0 * diff / diff.size


def lncc_loss(f, w, cfg: SimilarityConfig | None = None, need_grad: bool = False):
    """1 - mean squared local normalized cross-correlation.

    Local means/variances are taken over the cubic window of
    ``cfg.window_radius``; ``cfg.epsilon`` is added to each variance so flat
    regions stay finite. Value lies in [0, 1]; 0 means perfectly
    (anti-)correlated everywhere.
    """
    cfg = cfg or SimilarityConfig(kind="lncc")
    f, w = _check_pair(f, w)
    r = cfg.window_radius
    eps = cfg.epsilon
    n_win = box_count(f.shape, r)

    mean_f = box_sum(f, r) / n_win
    mean_w = box_sum(w, r) / n_win
    # windowed sums of squared deviations (not divided by the count), so the
    # epsilon stabilizer stays negligible wherever there is real contrast
    cross = box_sum(f * w, r) - n_win * mean_f * mean_w
    var_f = box_sum(f * f, r) - n_win * mean_f * mean_f
    var_w = box_sum(w * w, r) - n_win * mean_w * mean_w

    a = var_f + eps
    b = var_w + eps
    ncc2 = cross * cross / (a * b)
    value = float(1.0 - np.mean(ncc2))
    if not need_grad:
        return value

    # d ncc2(x) / dw(y) summed over windows x containing y turns back into
    # box sums because window membership is symmetric.
    m = f.size
    coef_a = cross / (a * b)
    coef_b = cross * cross / (a * b * b)
    grad = -(2.0 / m) * (
        f * box_sum(coef_a, r)
        - box_sum(coef_a * mean_f, r)
        - w * box_sum(coef_b, r)
        + box_sum(coef_b * mean_w, r)
    )
    return value, grad


def _mi_block_spans(n: int, radius: int) -> list[tuple[int, int]]:
    """Clamped [lo, hi] block extents along one axis, centers strided by r."""
    centers = list(range(radius, n, radius)) or [n // 2]
    return [(max(0, c - radius), min(n - 1, c + radius)) for c in centers]


def _hat_bins(values: np.ndarray, bins: int):
    """Linear (triangular) Parzen binning of intensities in [0, 1]."""
    scaled = values * (bins - 1)
    lower = np.clip(scaled.astype(np.int64), 0, bins - 2)
    t = scaled - lower
    return lower, t


def local_mi_loss(f, w, cfg: SimilarityConfig | None = None, need_grad: bool = False):
    """Negative mutual information averaged over overlapping local blocks.

    Blocks are cubic windows of ``cfg.window_radius`` strided by the radius;
    each block contributes the MI of its joint intensity histogram
    (``cfg.mi_bins`` per axis, linear Parzen binning so the loss is
    differentiable in the warped intensities). Lower is better; always <= 0.
    """
    cfg = cfg or SimilarityConfig(kind="mi", window_radius=MI_DEFAULT_RADIUS)
    f, w = _check_pair(f, w)
    bins = cfg.mi_bins
    spans = [_mi_block_spans(n, cfg.window_radius) for n in f.shape]

    total_mi = 0.0
    n_blocks = 0
    grad = np.zeros_like(w) if need_grad else None
    tiny = 1e-300

    for x_lo, x_hi in spans[0]:
        for y_lo, y_hi in spans[1]:
            for z_lo, z_hi in spans[2]:
                sel = (slice(x_lo, x_hi + 1), slice(y_lo, y_hi + 1), slice(z_lo, z_hi + 1))
                fb = f[sel].ravel()
                wb = w[sel].ravel()
                count = fb.size
                kf, tf = _hat_bins(fb, bins)
                kw, tw = _hat_bins(wb, bins)

                joint = np.zeros((bins, bins))
                np.add.at(joint, (kf, kw), (1.0 - tf) * (1.0 - tw))
                np.add.at(joint, (kf, kw + 1), (1.0 - tf) * tw)
                np.add.at(joint, (kf + 1, kw), tf * (1.0 - tw))
                np.add.at(joint, (kf + 1, kw + 1), tf * tw)
                joint /= count

                pf = joint.sum(axis=1)
                pw = joint.sum(axis=0)
                pos = joint > 0
                mi = float(np.sum(joint[pos] * np.log(joint[pos] / np.outer(pf, pw)[pos])))
                total_mi += mi
                n_blocks += 1

                if need_grad:
                    # d MI / dw_i = sum_ab k_a(f_i) k_b'(w_i) log(p_ab / p_b)
                    log_ratio = np.log(np.maximum(joint, tiny)) - np.log(np.maximum(pw, tiny))[None, :]
                    dk = float(bins - 1)
                    gb = (
                        (1.0 - tf) * (log_ratio[kf, kw + 1] - log_ratio[kf, kw])
                        + tf * (log_ratio[kf + 1, kw + 1] - log_ratio[kf + 1, kw])
                    ) * (dk / count)
                    grad[sel] -= gb.reshape(
                        (x_hi - x_lo + 1, y_hi - y_lo + 1, z_hi - z_lo + 1)
                    )

    value = -total_mi / n_blocks
    if not need_grad:
        return value
    return value, grad / n_blocks


def similarity_loss(f, w, cfg: SimilarityConfig, need_grad: bool = False):
    """Dispatch on cfg.kind."""
    if cfg.kind == "ssd":
        return ssd_loss(f, w, need_grad)
    if cfg.kind == "lncc":
        return lncc_loss(f, w, cfg, need_grad)
    return local_mi_loss(f, w, cfg, need_grad)
