"""Evaluation metrics: Dice overlap, Jacobian-determinant statistics, strain
energy, strain distributions, per-structure volume changes, and the
adaptive-parameter/energy scatter data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fieldops import (
    det3_array,
    frobenius_norm_array,
    identity_plus,
    jacobian_array,
    strain_array,
    trace_array,
)
from .regularizers import AdaptiveParams, _alpha_hat, _lambda_hat, _mu_hat
from .types import DisplacementField, LabelMap, as_displacement_array
from .warp import warp_labels

HISTOGRAM_BINS = 64

#: strain magnitudes above this flag excessive stretch
STRAIN_THRESHOLD = 1.0


@dataclass
class Histogram:
    """Uniform-bin histogram; edges has len(counts) + 1 entries (empty: both 0)."""

    edges: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls) -> "Histogram":
        return cls(np.array([]), np.array([], dtype=np.int64))


@dataclass
class MetricsReport:
    dice_per_label: dict[int, float] = field(default_factory=dict)
    mean_dice: float = float("nan")
    pct_jac_ge1: float = 0.0
    pct_jac_le0: float = 0.0
    strain_energy: float = 0.0
    neg_jac_histogram: Histogram = field(default_factory=Histogram.empty)
    strain_histogram: Histogram = field(default_factory=Histogram.empty)
    volume_changes: dict[int, float | None] = field(default_factory=dict)
    label_names: dict[int, str] = field(default_factory=dict)


def dice(a: LabelMap, b: LabelMap) -> tuple[dict[int, float], float]:
    """Per-label Dice 2|A∩B| / (|A|+|B|) and the mean over labels present in a.

    Background (label 0) is excluded; labels absent from both maps are
    excluded; a label present in only one map scores 0.
    """
    if a.dims != b.dims:
        raise ValueError(f"shape mismatch: {a.dims} vs {b.dims}")
    a_ids = set(a.ids())
    ids = sorted(a_ids | set(b.ids()))
    scores: dict[int, float] = {}
    for label in ids:
        in_a = a.labels == label
        in_b = b.labels == label
        denom = int(in_a.sum()) + int(in_b.sum())
        scores[label] = 2.0 * int(np.count_nonzero(in_a & in_b)) / denom
    in_first = [scores[label] for label in ids if label in a_ids]
    mean = float(np.mean(in_first)) if in_first else float("nan")
    return scores, mean


def _det_map(u) -> np.ndarray:
    return det3_array(identity_plus(jacobian_array(as_displacement_array(u))))


def jacobian_stats(u) -> tuple[float, float, Histogram]:
    """(% det >= 1, % det <= 0, histogram of the negative determinant values).

    Both bounds are inclusive, so with the strict interior (0, 1) the three
    bands partition the voxels. The histogram uses 64 uniform bins spanning
    [min_det, 0) and is empty when no voxel folds.
    """
    det = _det_map(u)
    n = det.size
    pct_ge1 = 100.0 * np.count_nonzero(det >= 1.0) / n
    pct_le0 = 100.0 * np.count_nonzero(det <= 0.0) / n
    neg = det[det < 0.0]
    if neg.size:
        counts, edges = np.histogram(neg, bins=HISTOGRAM_BINS, range=(float(neg.min()), 0.0))
        hist = Histogram(edges, counts)
    else:
        hist = Histogram.empty()
    return float(pct_ge1), float(pct_le0), hist


def strain_energy_metric(u) -> float:
    """Unit-coefficient elastic energy mean(trace(eta)^2 + ||eta||_F^2).

    A pure deformation statistic: using unit Lame coefficients keeps the
    number comparable across regularizer settings.
    """
    eta = strain_array(jacobian_array(as_displacement_array(u)))
    tr = trace_array(eta)
    frob2 = np.einsum("ij...,ij...->...", eta, eta)
    return float(np.mean(tr * tr + frob2))


def strain_distribution(u, threshold: float = STRAIN_THRESHOLD) -> tuple[Histogram, np.ndarray]:
    """Histogram of per-voxel strain magnitude ||eta||_F and the exceedance mask."""
    eta = strain_array(jacobian_array(as_displacement_array(u)))
    mag = np.sqrt(np.einsum("ij...,ij...->...", eta, eta))
    lo, hi = float(mag.min()), float(mag.max())
    if hi - lo <= HISTOGRAM_BINS * np.spacing(max(abs(lo), abs(hi), 1e-300)):
        hi = lo + 1.0  # (near-)constant magnitude: bins would collapse, widen
    counts, edges = np.histogram(mag, bins=HISTOGRAM_BINS, range=(lo, hi))
    return Histogram(edges, counts), mag > threshold


def volume_change(moving_labels: LabelMap, u: DisplacementField,
                  structures=None) -> dict[int, float | None]:
    """Percent absolute volume change per structure under the warp.

    Volumes are voxel counts; the warped count comes from nearest-neighbor
    label resampling. Structures absent from the moving map report None.
    """
    warped = warp_labels(moving_labels, u)
    if structures is None:
        structures = moving_labels.ids()
    out: dict[int, float | None] = {}
    for label in structures:
        label = int(label)
        before = int(np.count_nonzero(moving_labels.labels == label))
        if before == 0:
            out[label] = None
            continue
        after = int(np.count_nonzero(warped.labels == label))
        out[label] = 100.0 * abs(after - before) / before
    return out


@dataclass
class ParameterEnergyTable:
    """Per-voxel scatter records plus the analytic response curves."""

    scatter: dict[str, np.ndarray]
    curves: dict[str, np.ndarray]


def adaptive_response_curves(p: AdaptiveParams, g_max: float = 1.0,
                             num: int = 200) -> dict[str, np.ndarray]:
    """The coefficient laws sampled on a uniform grid g in [0, g_max]."""
    g = np.linspace(0.0, g_max, num)
    return {
        "g": g,
        "lambda_hat": _lambda_hat(g, p),
        "mu_hat": _mu_hat(g, p),
        "alpha_hat": _alpha_hat(g, p),
    }


def parameter_energy_table(u, p: AdaptiveParams, g_max: float = 1.0,
                           num_curve_points: int = 200) -> ParameterEnergyTable:
    """Scatter-export data relating g, the adaptive coefficients and the
    energy densities at every voxel."""
    jac = jacobian_array(as_displacement_array(u))
    g = frobenius_norm_array(jac)
    eta = strain_array(jac)
    tr = trace_array(eta)
    frob2 = np.einsum("ij...,ij...->...", eta, eta)
    lam = _lambda_hat(g, p)
    mu = _mu_hat(g, p)
    e_strain = lam * tr * tr
    e_shear = mu * frob2
    det = det3_array(identity_plus(jac))
    neg = np.maximum(0.0, -det)
    scatter = {
        "g": g.ravel(),
        "lambda_hat": lam.ravel(),
        "mu_hat": mu.ravel(),
        "alpha_hat": _alpha_hat(g, p).ravel(),
        "e_strain": e_strain.ravel(),
        "e_shear": e_shear.ravel(),
        "e_total": (e_strain + e_shear).ravel(),
        "folding_density": (neg * neg).ravel(),
    }
    return ParameterEnergyTable(scatter, adaptive_response_curves(p, g_max, num_curve_points))


def compute_report(fixed_labels: LabelMap, moving_labels: LabelMap, u: DisplacementField,
                   structures=None) -> MetricsReport:
    """Full evaluation: warp the moving labels by u and compare to the fixed."""
    if fixed_labels.dims != moving_labels.dims:
        raise ValueError(f"shape mismatch: {fixed_labels.dims} vs {moving_labels.dims}")
    if fixed_labels.dims != u.dims:
        raise ValueError(f"shape mismatch: labels {fixed_labels.dims} vs field {u.dims}")
    warped = warp_labels(moving_labels, u)
    dice_per_label, mean_dice = dice(fixed_labels, warped)
    pct_ge1, pct_le0, neg_hist = jacobian_stats(u)
    strain_hist, _ = strain_distribution(u)
    names = dict(fixed_labels.label_names or {})
    names.update(moving_labels.label_names or {})
    return MetricsReport(
        dice_per_label=dice_per_label,
        mean_dice=mean_dice,
        pct_jac_ge1=pct_ge1,
        pct_jac_le0=pct_le0,
        strain_energy=strain_energy_metric(u),
        neg_jac_histogram=neg_hist,
        strain_histogram=strain_hist,
        volume_changes=volume_change(moving_labels, u, structures),
        label_names=names,
    )
