"""Command-line entry point.

Subcommands: ``register`` (align a moving volume to a fixed one),
``evaluate`` (metric suite for a displacement against label maps),
``analyze`` (adaptive-parameter curves and per-voxel scatter tables) and
``synth`` (synthetic test pairs). Exit codes: 0 success, 2 usage or
validation error, 3 runtime failure, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fileio, metrics, synth
from .optimizer import (
    NonFiniteEnergyError,
    RegistrationConfig,
    register,
)
from .regularizers import AdaptiveParams
from .similarity import MI_DEFAULT_RADIUS, SimilarityConfig
from .types import normalize_intensity
from .warp import warp_trilinear

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adelreg",
        description="Adaptive elastic 3D deformable registration with folding prevention.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_reg = sub.add_parser("register", help="register a moving volume to a fixed volume")
    p_reg.add_argument("--fixed", required=True, help="fixed volume (.nii or .bin)")
    p_reg.add_argument("--moving", required=True, help="moving volume (.nii or .bin)")
    p_reg.add_argument("--out-dir", required=True)
    p_reg.add_argument("--similarity", choices=["lncc", "mi", "ssd"], default="lncc")
    p_reg.add_argument("--window-radius", type=int, default=None,
                       help="similarity window radius (default 3, or 8 for mi)")
    p_reg.add_argument("--mi-bins", type=int, default=32)
    p_reg.add_argument("--epsilon", type=float, default=1e-5)
    p_reg.add_argument("--regularizer",
                       choices=["dare", "elastic", "diffusion", "tv", "bending"],
                       default="dare")
    _add_adaptive_flags(p_reg)
    p_reg.add_argument("--elastic-lambda", type=float, default=1.0)
    p_reg.add_argument("--elastic-mu", type=float, default=0.5)
    p_reg.add_argument("--reg-weight", type=float, default=1.0)
    p_reg.add_argument("--folding-weight", type=float, default=None,
                       help="override; defaults to --c for dare and 0 otherwise")
    p_reg.add_argument("--levels", type=int, default=3)
    p_reg.add_argument("--iters", type=int, default=200)
    p_reg.add_argument("--step", type=float, default=0.1)
    p_reg.add_argument("--grad-tol", type=float, default=1e-4)
    p_reg.add_argument("--frozen-adaptive", action="store_true",
                       help="ablation: exclude the adaptive coefficients from the gradient")
    _add_common_flags(p_reg)

    p_eval = sub.add_parser("evaluate", help="metric suite for a computed displacement")
    p_eval.add_argument("--fixed-labels", required=True)
    p_eval.add_argument("--moving-labels", required=True)
    p_eval.add_argument("--displacement", required=True)
    p_eval.add_argument("--labels", default=None,
                        help="comma-separated structure IDs for volume change")
    p_eval.add_argument("--out-dir", required=True)
    _add_common_flags(p_eval)

    p_an = sub.add_parser("analyze", help="adaptive-parameter curves and scatter tables")
    p_an.add_argument("--displacement", default=None)
    p_an.add_argument("--curves-only", action="store_true",
                      help="emit only the analytic response curves")
    p_an.add_argument("--g-max", type=float, default=1.0)
    p_an.add_argument("--out-dir", required=True)
    _add_adaptive_flags(p_an)
    _add_common_flags(p_an)

    p_sy = sub.add_parser("synth", help="generate a synthetic registration pair")
    p_sy.add_argument("--dims", default="32,32,32")
    p_sy.add_argument("--deformation", choices=["gaussian-bumps", "dilation", "translation"],
                      default="gaussian-bumps")
    p_sy.add_argument("--amplitude", type=float, default=3.0)
    p_sy.add_argument("--sigma", type=float, default=6.0)
    p_sy.add_argument("--bumps", type=int, default=4)
    p_sy.add_argument("--dilation-scale", type=float, default=0.05)
    p_sy.add_argument("--translation", default="1,0,0")
    p_sy.add_argument("--texture", choices=["blob-phantom", "ramp", "checkerboard"],
                      default="blob-phantom")
    p_sy.add_argument("--blobs", type=int, default=200)
    p_sy.add_argument("--checker-period", type=int, default=4)
    p_sy.add_argument("--label-spheres", type=int, default=3)
    p_sy.add_argument("--format", choices=["bin", "nii"], default="bin")
    p_sy.add_argument("--out-dir", required=True)
    _add_common_flags(p_sy)

    return parser


def _add_adaptive_flags(parser) -> None:
    parser.add_argument("--lambda0", type=float, default=1.0)
    parser.add_argument("--mu0", type=float, default=0.5)
    parser.add_argument("--c", type=float, default=10.0)
    parser.add_argument("--delta", type=float, default=1.0)
    parser.add_argument("--beta0", type=float, default=1.0)
    parser.add_argument("--tau", type=float, default=0.05)
    parser.add_argument("--kappa", type=float, default=0.01)
    parser.add_argument("--theta", type=float, default=0.1)


def _add_common_flags(parser) -> None:
    parser.add_argument("--config", default=None, help="JSON file whose keys override flags")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=0,
                        help="0 = auto; computation is deterministic at any setting")
    parser.add_argument("--deterministic", action="store_true",
                        help="force deterministic reductions (already the default behavior)")


def _apply_config_file(args) -> None:
    if not args.config:
        return
    path = Path(args.config)
    if not path.exists():
        raise _UsageError(f"config file not found: {path}")
    overrides = json.loads(path.read_text())
    if not isinstance(overrides, dict):
        raise _UsageError(f"config file {path} must contain a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise _UsageError(f"config file {path}: unknown option {key!r}")
        setattr(args, dest, value)


class _UsageError(ValueError):
    pass


def _require_inputs(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise _UsageError(f"input file not found: {p}")


def _adaptive_params(args) -> AdaptiveParams:
    return AdaptiveParams(
        lambda0=args.lambda0, mu0=args.mu0, c=args.c, delta=args.delta,
        beta0=args.beta0, tau=args.tau, kappa=args.kappa, theta=args.theta,
    )


def _registration_config(args) -> RegistrationConfig:
    radius = args.window_radius
    if radius is None:
        radius = MI_DEFAULT_RADIUS if args.similarity == "mi" else 3
    sim = SimilarityConfig(kind=args.similarity, window_radius=radius,
                           mi_bins=args.mi_bins, epsilon=args.epsilon)
    return RegistrationConfig(
        similarity=sim,
        regularizer=args.regularizer,
        params=_adaptive_params(args),
        elastic_lambda=args.elastic_lambda,
        elastic_mu=args.elastic_mu,
        reg_weight=args.reg_weight,
        folding_weight=args.folding_weight,
        pyramid_levels=args.levels,
        iters_per_level=args.iters,
        step_size=args.step,
        grad_tol=args.grad_tol,
        seed=args.seed,
        frozen_adaptive=args.frozen_adaptive,
    )


def _cmd_register(args) -> int:
    _require_inputs(args.fixed, args.moving)
    cfg = _registration_config(args)

    fixed = fileio.read_volume(args.fixed)
    moving = fileio.read_volume(args.moving)
    if fixed.dims != moving.dims:
        raise _UsageError(f"shape mismatch: fixed {fixed.dims}, moving {moving.dims}")
    fixed_n = normalize_intensity(fixed)
    moving_n = normalize_intensity(moving)

    field, trace = register(fixed_n, moving_n, cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fileio.write_displacement(out_dir / "displacement.bin", field)
    warped = warp_trilinear(moving, field)  # original intensities, not normalized
    suffix = Path(args.moving).suffix
    fileio.write_volume(out_dir / f"warped{suffix}", warped)
    fileio.write_trace_csv(out_dir / "trace.csv", trace)
    print(f"registered: final energy {trace.records[-1].total:.6g}, "
          f"%|J|<=0 {trace.pct_jac_le0_per_level[-1]:.6g}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    _require_inputs(args.fixed_labels, args.moving_labels, args.displacement)
    structures = None
    if args.labels:
        structures = [int(tok) for tok in args.labels.split(",") if tok.strip()]

    fixed_labels = fileio.read_labels(args.fixed_labels)
    moving_labels = fileio.read_labels(args.moving_labels)
    field = fileio.read_displacement(args.displacement)
    report = metrics.compute_report(fixed_labels, moving_labels, field, structures)

    undefined = [str(k) for k, v in report.volume_changes.items() if v is None]
    if undefined:
        print(f"warning: structures absent from moving labels: {', '.join(undefined)}",
              file=sys.stderr)
    written = fileio.write_metrics_report(args.out_dir, report)
    print(f"wrote {len(written)} files to {args.out_dir} "
          f"(mean Dice {report.mean_dice:.6g}, %|J|<=0 {report.pct_jac_le0:.6g})")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    if args.displacement is None and not args.curves_only:
        raise _UsageError("provide --displacement or pass --curves-only")
    params = _adaptive_params(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.curves_only:
        curves = metrics.adaptive_response_curves(params, g_max=args.g_max)
        fileio.write_curves_csv(out_dir / "curves.csv", curves)
        print(f"wrote {out_dir / 'curves.csv'}")
        return EXIT_OK

    _require_inputs(args.displacement)
    field = fileio.read_displacement(args.displacement)
    table = metrics.parameter_energy_table(field, params, g_max=args.g_max)
    written = fileio.write_parameter_tables(out_dir, table)
    _, _, neg_hist = metrics.jacobian_stats(field)
    fileio.write_histogram_csv(out_dir / "neg_jacobian_hist.csv", neg_hist)
    strain_hist, _ = metrics.strain_distribution(field)
    fileio.write_histogram_csv(out_dir / "strain_hist.csv", strain_hist)
    print(f"wrote {len(written) + 2} files to {out_dir}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    dims = tuple(int(tok) for tok in args.dims.split(","))
    translation = tuple(float(tok) for tok in args.translation.split(","))
    if len(translation) != 3:
        raise _UsageError(f"translation needs 3 components, got {args.translation!r}")
    spec = synth.SynthSpec(
        dims=dims, seed=args.seed, deformation=args.deformation,
        bump_count=args.bumps, max_amplitude=args.amplitude, bump_sigma=args.sigma,
        dilation_scale=args.dilation_scale, translation=translation,
        texture=args.texture, n_blobs=args.blobs, checker_period=args.checker_period,
        label_spheres=args.label_spheres,
    )
    pair = synth.make_pair(spec)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "." + args.format
    fileio.write_volume(out_dir / f"fixed{ext}", pair.fixed)
    fileio.write_volume(out_dir / f"moving{ext}", pair.moving)
    fileio.write_displacement(out_dir / "u_gt.bin", pair.u_gt)
    fileio.write_labels(out_dir / f"labels_fixed{ext}", pair.labels_fixed)
    fileio.write_labels(out_dir / f"labels_moving{ext}", pair.labels_moving)
    print(f"wrote synthetic pair to {out_dir} "
          f"(min det {synth.min_deformation_det(pair.u_gt):.6g})")
    return EXIT_OK


_COMMANDS = {
    "register": _cmd_register,
    "evaluate": _cmd_evaluate,
    "analyze": _cmd_analyze,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except fileio.FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except synth.ResampleExhaustedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except NonFiniteEnergyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
