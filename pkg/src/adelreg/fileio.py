"""File formats: raw tensor files, a NIfTI-1 subset, and report tables.

Tensor files are a raw little-endian binary payload (``.bin``) plus a JSON
sidecar (same stem, ``.json``) declaring dims, spacing, dtype (f32/i32),
components (1 or 3) and the x-fastest row-major layout.

NIfTI support is deliberately narrow: uncompressed single-file ``.nii``,
little-endian, dim[0] = 3, datatypes float32/int16/uint8, with
scl_slope/scl_inter applied on read when the slope is nonzero. Compressed
files, detached headers and NIfTI-2 are rejected with distinct messages.

CSV columns are fixed per table kind; numbers are written with 6 significant
digits and a "." decimal separator regardless of locale.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .metrics import Histogram, MetricsReport, ParameterEnergyTable
from .optimizer import OptimizationTrace
from .types import DisplacementField, LabelMap, Volume


class FileFormatError(ValueError):
    """Malformed or unsupported file content."""


NIFTI_HEADER_SIZE = 348
NIFTI_MAGIC = b"n+1\x00"
NIFTI_MAGIC_DETACHED = b"ni1\x00"
GZIP_MAGIC = b"\x1f\x8b"

#: NIfTI datatype code -> numpy dtype (little-endian)
NIFTI_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}


def _fmt(x) -> str:
    """6 significant digits, locale independent."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".6g")


# ---------------------------------------------------------------------------
# tensor files (.bin + .json sidecar)
# ---------------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _write_tensor(path: Path, dims, spacing, dtype: str, components: int,
                  payload: np.ndarray) -> None:
    header = {
        "dims": list(int(d) for d in dims),
        "spacing": list(float(s) for s in spacing),
        "dtype": dtype,
        "components": components,
        "byte_order": "little",
        "layout": "x-fastest row-major",
    }
    np_dtype = np.dtype("<f4") if dtype == "f32" else np.dtype("<i4")
    path.write_bytes(payload.astype(np_dtype).tobytes())
    _sidecar_path(path).write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def _read_tensor(path: Path, expect_components: int, expect_dtype: str):
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FileFormatError(f"missing sidecar header {sidecar}")
    header = json.loads(sidecar.read_text())
    dims = tuple(int(d) for d in header["dims"])
    components = int(header.get("components", 1))
    dtype = header.get("dtype", "f32")
    if components != expect_components:
        raise FileFormatError(
            f"{path}: expected {expect_components} component(s), header says {components}"
        )
    if dtype != expect_dtype:
        raise FileFormatError(f"{path}: expected dtype {expect_dtype}, header says {dtype}")
    np_dtype = np.dtype("<f4") if dtype == "f32" else np.dtype("<i4")
    raw = path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * components * np_dtype.itemsize
    if len(raw) != expected:
        raise FileFormatError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    values = np.frombuffer(raw, dtype=np_dtype)
    spacing = tuple(float(s) for s in header.get("spacing", (1.0, 1.0, 1.0)))
    return dims, spacing, values


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------

def _parse_nifti_header(raw: bytes, path):
    if raw[:2] == GZIP_MAGIC:
        raise FileFormatError(f"{path}: compressed NIfTI not supported; decompress externally")
    if len(raw) < NIFTI_HEADER_SIZE:
        raise FileFormatError(f"{path}: truncated header")
    magic = raw[344:348]
    if magic == NIFTI_MAGIC_DETACHED:
        raise FileFormatError(f"{path}: unsupported NIfTI variant (detached header)")
    if magic != NIFTI_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}, not a NIfTI-1 file")
    sizeof_hdr = struct.unpack_from("<i", raw, 0)[0]
    if sizeof_hdr != NIFTI_HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == NIFTI_HEADER_SIZE:
            raise FileFormatError(f"{path}: big-endian NIfTI not supported")
        raise FileFormatError(f"{path}: bad sizeof_hdr {sizeof_hdr}")
    dim = struct.unpack_from("<8h", raw, 40)
    if dim[0] != 3:
        raise FileFormatError(f"{path}: only 3D volumes supported (dim[0] = {dim[0]})")
    datatype, _bitpix = struct.unpack_from("<2h", raw, 70)
    if datatype not in NIFTI_DTYPES:
        raise FileFormatError(f"{path}: unsupported datatype code {datatype}")
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset = struct.unpack_from("<f", raw, 108)[0]
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
    return {
        "dims": (dim[1], dim[2], dim[3]),
        "spacing": (pixdim[1], pixdim[2], pixdim[3]),
        "datatype": datatype,
        "vox_offset": int(vox_offset),
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
    }


def _read_nifti(path: Path):
    raw = path.read_bytes()
    hdr = _parse_nifti_header(raw, path)
    dims = hdr["dims"]
    if any(d < 2 for d in dims):
        raise FileFormatError(f"{path}: dims {dims} too small")
    dtype = NIFTI_DTYPES[hdr["datatype"]]
    count = dims[0] * dims[1] * dims[2]
    start = hdr["vox_offset"]
    if len(raw) < start + count * dtype.itemsize:
        raise FileFormatError(f"{path}: truncated payload")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=start)
    return hdr, data.reshape(dims, order="F")


def _write_nifti(path: Path, dims, spacing, datatype: int, payload: np.ndarray) -> None:
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    bitpix = NIFTI_DTYPES[datatype].itemsize * 8
    struct.pack_into("<2h", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2], 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, float(NIFTI_HEADER_SIZE + 4))
    struct.pack_into("<2f", hdr, 112, 0.0, 0.0)  # no intensity scaling on write
    hdr[344:348] = NIFTI_MAGIC
    body = payload.ravel(order="F").astype(NIFTI_DTYPES[datatype]).tobytes()
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + body)


# ---------------------------------------------------------------------------
# public readers / writers
# ---------------------------------------------------------------------------

def write_volume(path, v: Volume) -> None:
    path = Path(path)
    if path.suffix == ".nii":
        _write_nifti(path, v.dims, v.spacing, 16, v.data)
    elif path.suffix == ".bin":
        _write_tensor(path, v.dims, v.spacing, "f32", 1, v.flat())
    else:
        raise FileFormatError(f"unsupported volume extension {path.suffix!r} (use .nii or .bin)")


def read_volume(path) -> Volume:
    path = Path(path)
    if path.suffix == ".gz" or path.name.endswith(".nii.gz"):
        raise FileFormatError(f"{path}: compressed NIfTI not supported; decompress externally")
    if path.suffix == ".nii":
        hdr, data = _read_nifti(path)
        data = data.astype(np.float64)
        if hdr["scl_slope"] != 0.0:
            data = data * hdr["scl_slope"] + hdr["scl_inter"]
        return Volume(data, hdr["spacing"])
    if path.suffix == ".bin":
        dims, spacing, values = _read_tensor(path, 1, "f32")
        return Volume.from_flat(dims, values, spacing)
    raise FileFormatError(f"unsupported volume extension {path.suffix!r} (use .nii or .bin)")


def write_labels(path, labels: LabelMap) -> None:
    path = Path(path)
    if path.suffix == ".nii":
        if labels.labels.max(initial=0) > np.iinfo(np.int16).max:
            raise FileFormatError("label IDs exceed int16 range of the NIfTI writer")
        _write_nifti(path, labels.dims, (1.0, 1.0, 1.0), 4, labels.labels)
    elif path.suffix == ".bin":
        _write_tensor(path, labels.dims, (1.0, 1.0, 1.0), "i32", 1, labels.flat())
    else:
        raise FileFormatError(f"unsupported label extension {path.suffix!r} (use .nii or .bin)")


def read_labels(path) -> LabelMap:
    path = Path(path)
    if path.suffix == ".nii":
        hdr, data = _read_nifti(path)
        if hdr["datatype"] == 16:
            raise FileFormatError(f"{path}: label maps must use an integer datatype")
        if hdr["scl_slope"] not in (0.0, 1.0) or hdr["scl_inter"] != 0.0:
            raise FileFormatError(f"{path}: intensity scaling not supported for label maps")
        return LabelMap(data.astype(np.int32))
    if path.suffix == ".bin":
        dims, _spacing, values = _read_tensor(path, 1, "i32")
        return LabelMap.from_flat(dims, values)
    raise FileFormatError(f"unsupported label extension {path.suffix!r} (use .nii or .bin)")


def write_displacement(path, u: DisplacementField) -> None:
    """Tensor file with 3 interleaved f32 components (f64 rounds to f32)."""
    path = Path(path)
    if path.suffix != ".bin":
        raise FileFormatError("displacement fields are stored as .bin tensor files")
    _write_tensor(path, u.dims, (1.0, 1.0, 1.0), "f32", 3, u.flat())


def read_displacement(path) -> DisplacementField:
    path = Path(path)
    dims, _spacing, values = _read_tensor(path, 3, "f32")
    return DisplacementField.from_flat(dims, values)


# ---------------------------------------------------------------------------
# report tables
# ---------------------------------------------------------------------------

def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _histogram_rows(hist: Histogram):
    for i in range(len(hist.counts)):
        yield [_fmt(hist.edges[i]), _fmt(hist.edges[i + 1]), int(hist.counts[i])]


def write_trace_csv(path, trace: OptimizationTrace) -> None:
    rows = (
        [r.level, r.iteration, _fmt(r.sim), _fmt(r.strain), _fmt(r.shear),
         _fmt(r.folding), _fmt(r.total)]
        for r in trace.records
    )
    _write_csv(path, ["level", "iteration", "sim", "strain", "shear", "folding", "total"], rows)


def write_curves_csv(path, curves: dict[str, np.ndarray]) -> None:
    cols = ["g", "lambda_hat", "mu_hat", "alpha_hat"]
    rows = ([_fmt(curves[c][i]) for c in cols] for i in range(len(curves["g"])))
    _write_csv(path, cols, rows)


def write_scatter_csv(path, scatter: dict[str, np.ndarray]) -> None:
    cols = ["g", "lambda_hat", "mu_hat", "alpha_hat", "e_strain", "e_shear",
            "e_total", "folding_density"]
    rows = ([_fmt(scatter[c][i]) for c in cols] for i in range(len(scatter["g"])))
    _write_csv(path, cols, rows)


def write_histogram_csv(path, hist: Histogram) -> None:
    _write_csv(path, ["bin_left", "bin_right", "count"], _histogram_rows(hist))


def _label_name(report: MetricsReport, label: int) -> str:
    return report.label_names.get(label, "")


def write_metrics_report(out_dir, report: MetricsReport) -> list[Path]:
    """Write the JSON mirror plus the fixed set of CSV tables; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    payload = {
        "dice_per_label": {str(k): v for k, v in sorted(report.dice_per_label.items())},
        "mean_dice": report.mean_dice,
        "pct_jac_ge1": report.pct_jac_ge1,
        "pct_jac_le0": report.pct_jac_le0,
        "strain_energy": report.strain_energy,
        "volume_changes": {str(k): v for k, v in sorted(report.volume_changes.items())},
        "label_names": {str(k): v for k, v in sorted(report.label_names.items())},
        "neg_jac_histogram": {
            "edges": [float(e) for e in report.neg_jac_histogram.edges],
            "counts": [int(c) for c in report.neg_jac_histogram.counts],
        },
        "strain_histogram": {
            "edges": [float(e) for e in report.strain_histogram.edges],
            "counts": [int(c) for c in report.strain_histogram.counts],
        },
    }
    json_path = out_dir / "metrics.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    written.append(json_path)

    path = out_dir / "summary.csv"
    _write_csv(
        path,
        ["mean_dice", "pct_jac_ge1", "pct_jac_le0", "strain_energy"],
        [[_fmt(report.mean_dice), _fmt(report.pct_jac_ge1), _fmt(report.pct_jac_le0),
          _fmt(report.strain_energy)]],
    )
    written.append(path)

    path = out_dir / "dice.csv"
    _write_csv(
        path,
        ["label", "name", "dice"],
        ([label, _label_name(report, label), _fmt(score)]
         for label, score in sorted(report.dice_per_label.items())),
    )
    written.append(path)

    path = out_dir / "volume_change.csv"
    _write_csv(
        path,
        ["label", "name", "percent"],
        ([label, _label_name(report, label), "undefined" if pct is None else _fmt(pct)]
         for label, pct in sorted(report.volume_changes.items())),
    )
    written.append(path)

    for name, hist in (("neg_jacobian_hist.csv", report.neg_jac_histogram),
                       ("strain_hist.csv", report.strain_histogram)):
        path = out_dir / name
        write_histogram_csv(path, hist)
        written.append(path)
    return written


def write_parameter_tables(out_dir, table: ParameterEnergyTable) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves_path = out_dir / "curves.csv"
    write_curves_csv(curves_path, table.curves)
    scatter_path = out_dir / "scatter.csv"
    write_scatter_csv(scatter_path, table.scatter)
    return [curves_path, scatter_path]


def write_report(path, report) -> list[Path]:
    """Serialize any report object to its table files.

    MetricsReport and ParameterEnergyTable expand into a directory of CSVs
    (plus the JSON mirror for metrics); an OptimizationTrace writes a single
    CSV at the given path.
    """
    if isinstance(report, MetricsReport):
        return write_metrics_report(path, report)
    if isinstance(report, ParameterEnergyTable):
        return write_parameter_tables(path, report)
    if isinstance(report, OptimizationTrace):
        write_trace_csv(path, report)
        return [Path(path)]
    raise TypeError(f"cannot serialize report of type {type(report).__name__}")
