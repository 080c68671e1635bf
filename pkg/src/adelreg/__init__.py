"""Adaptive elastic 3D deformable image registration.

Aligns a moving volume to a fixed volume by direct first-order minimization
of a composite energy: a similarity term (LNCC, local MI or SSD), an
elastic regularizer whose Lame coefficients adapt per voxel to the
deformation gradient norm, and a quadratic penalty on folded (negative
Jacobian determinant) voxels.
"""

from ._kernels import BACKEND as kernel_backend
from .fieldops import (
    EnergyDensities,
    deformation_jacobian_det,
    displacement_jacobian,
    energy_densities,
    gradient_norm,
    strain_tensor,
)
from .metrics import (
    Histogram,
    MetricsReport,
    ParameterEnergyTable,
    adaptive_response_curves,
    compute_report,
    dice,
    jacobian_stats,
    parameter_energy_table,
    strain_distribution,
    strain_energy_metric,
    volume_change,
)
from .optimizer import (
    EnergyBreakdown,
    NonFiniteEnergyError,
    OptimizationTrace,
    RegistrationConfig,
    default_config_for,
    energy_gradient,
    pyramid_downsample,
    register,
    total_energy,
    upsample_displacement,
)
from .regularizers import (
    AdaptiveParams,
    RegularizerReport,
    alpha_hat,
    bending_regularizer,
    dare_regularizer,
    diffusion_regularizer,
    elastic_regularizer,
    folding_penalty,
    lambda_hat,
    mu_hat,
    tv_regularizer,
)
from .similarity import SimilarityConfig, lncc_loss, local_mi_loss, ssd_loss
from .synth import ResampleExhaustedError, SynthPair, SynthSpec, endpoint_error, make_pair
from .types import (
    DisplacementField,
    LabelMap,
    ScalarField,
    TensorField,
    Volume,
    identity_displacement,
    normalize_intensity,
)
from .warp import warp_labels, warp_trilinear

__version__ = "0.1.0"

__all__ = [
    "AdaptiveParams",
    "DisplacementField",
    "EnergyBreakdown",
    "EnergyDensities",
    "Histogram",
    "LabelMap",
    "MetricsReport",
    "NonFiniteEnergyError",
    "OptimizationTrace",
    "ParameterEnergyTable",
    "RegistrationConfig",
    "RegularizerReport",
    "ResampleExhaustedError",
    "ScalarField",
    "SimilarityConfig",
    "SynthPair",
    "SynthSpec",
    "TensorField",
    "Volume",
    "adaptive_response_curves",
    "alpha_hat",
    "bending_regularizer",
    "compute_report",
    "dare_regularizer",
    "default_config_for",
    "deformation_jacobian_det",
    "dice",
    "diffusion_regularizer",
    "displacement_jacobian",
    "elastic_regularizer",
    "endpoint_error",
    "energy_densities",
    "energy_gradient",
    "folding_penalty",
    "gradient_norm",
    "identity_displacement",
    "jacobian_stats",
    "kernel_backend",
    "lambda_hat",
    "lncc_loss",
    "local_mi_loss",
    "make_pair",
    "mu_hat",
    "normalize_intensity",
    "parameter_energy_table",
    "pyramid_downsample",
    "register",
    "ssd_loss",
    "strain_distribution",
    "strain_energy_metric",
    "strain_tensor",
    "total_energy",
    "tv_regularizer",
    "upsample_displacement",
    "volume_change",
    "warp_labels",
    "warp_trilinear",
]
