import json
import math
import struct
from pathlib import Path

import numpy as np
import pytest

from adelreg import fileio, metrics
from adelreg.metrics import MetricsReport
from adelreg.optimizer import EnergyBreakdown, OptimizationTrace
from adelreg.regularizers import AdaptiveParams
from adelreg.types import DisplacementField, LabelMap, Volume, identity_displacement

GOLDEN = Path(__file__).parent / "golden"


def _nifti_header(dims=(8, 8, 8), datatype=16, slope=0.0, inter=0.0, magic=b"n+1\x00",
                  sizeof=348, big_endian=False):
    hdr = bytearray(348)
    struct.pack_into(">i" if big_endian else "<i", hdr, 0, sizeof)
    struct.pack_into("<8h", hdr, 40, 3, *dims, 1, 1, 1, 1)
    bitpix = {2: 8, 4: 16, 16: 32}.get(datatype, 0)
    struct.pack_into("<2h", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, 1.0, 1.0, 1.0, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, slope, inter)
    hdr[344:348] = magic
    return bytes(hdr)


class TestTensorRoundTrips:
    def test_volume_f32_exact(self, rng, tmp_path):
        v = Volume(rng.random((4, 5, 6)).astype(np.float32).astype(np.float64),
                   (0.5, 1.0, 2.5))
        fileio.write_volume(tmp_path / "v.bin", v)
        back = fileio.read_volume(tmp_path / "v.bin")
        assert np.array_equal(back.data, v.data)
        assert back.spacing == v.spacing

    def test_labels_exact(self, rng, tmp_path):
        lm = LabelMap(rng.integers(0, 7, (4, 4, 4)).astype(np.int32), {1: "a"})
        fileio.write_labels(tmp_path / "l.bin", lm)
        assert np.array_equal(fileio.read_labels(tmp_path / "l.bin").labels, lm.labels)

    def test_displacement_rounds_to_f32(self, tmp_path):
        u = identity_displacement((4, 4, 4))
        u.vectors[0, 1, 2, 3] = 0.1  # not representable in f32
        fileio.write_displacement(tmp_path / "u.bin", u)
        back = fileio.read_displacement(tmp_path / "u.bin")
        assert back.vectors[0, 1, 2, 3] == np.float32(0.1)
        assert back.vectors[0, 1, 2, 3] != 0.1

    def test_zero_field_exact(self, tmp_path):
        u = identity_displacement((3, 4, 5))
        fileio.write_displacement(tmp_path / "u.bin", u)
        assert np.array_equal(fileio.read_displacement(tmp_path / "u.bin").vectors, u.vectors)

    def test_payload_layout_is_x_fastest_interleaved(self, rng, tmp_path):
        u = DisplacementField(rng.normal(size=(3, 3, 3, 3)).astype(np.float32))
        fileio.write_displacement(tmp_path / "u.bin", u)
        raw = np.frombuffer((tmp_path / "u.bin").read_bytes(), dtype="<f4")
        nx = 3
        for c in range(3):
            for x in range(3):
                assert raw[c + 3 * x] == np.float32(u.vectors[c, x, 0, 0])

    def test_sidecar_mismatch_errors(self, rng, tmp_path):
        u = identity_displacement((4, 4, 4))
        fileio.write_displacement(tmp_path / "u.bin", u)
        sidecar = json.loads((tmp_path / "u.json").read_text())
        sidecar["dims"] = [4, 4, 5]
        (tmp_path / "u.json").write_text(json.dumps(sidecar))
        with pytest.raises(fileio.FileFormatError, match="truncated payload"):
            fileio.read_displacement(tmp_path / "u.bin")
        v = Volume(rng.random((4, 4, 4)))
        fileio.write_volume(tmp_path / "v.bin", v)
        with pytest.raises(fileio.FileFormatError, match="component"):
            fileio.read_displacement(tmp_path / "v.bin")

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "orphan.bin").write_bytes(b"\x00" * 16)
        with pytest.raises(fileio.FileFormatError, match="sidecar"):
            fileio.read_volume(tmp_path / "orphan.bin")


class TestNifti:
    def test_round_trip_f32(self, rng, tmp_path):
        v = Volume(rng.random((5, 6, 7)).astype(np.float32).astype(np.float64),
                   (0.9, 1.1, 1.3))
        fileio.write_volume(tmp_path / "v.nii", v)
        back = fileio.read_volume(tmp_path / "v.nii")
        assert np.array_equal(back.data, v.data)
        assert np.allclose(back.spacing, v.spacing, rtol=1e-6)  # pixdim is f32

    def test_label_round_trip(self, rng, tmp_path):
        lm = LabelMap(rng.integers(0, 30, (6, 6, 6)).astype(np.int32))
        fileio.write_labels(tmp_path / "l.nii", lm)
        assert np.array_equal(fileio.read_labels(tmp_path / "l.nii").labels, lm.labels)

    def test_slope_inter_applied(self, tmp_path):
        payload = np.full(512, 0.5, dtype="<f4").tobytes()
        (tmp_path / "s.nii").write_bytes(
            _nifti_header(slope=2.0, inter=1.0) + b"\x00" * 4 + payload
        )
        v = fileio.read_volume(tmp_path / "s.nii")
        assert np.all(v.data == 2.0)  # 2.0 * 0.5 + 1.0

    def test_zero_slope_means_no_scaling(self, tmp_path):
        payload = np.full(512, 0.5, dtype="<f4").tobytes()
        (tmp_path / "s.nii").write_bytes(
            _nifti_header(slope=0.0, inter=9.0) + b"\x00" * 4 + payload
        )
        assert np.all(fileio.read_volume(tmp_path / "s.nii").data == 0.5)

    def test_int16_payload(self, tmp_path):
        payload = np.arange(512, dtype="<i2").tobytes()
        (tmp_path / "i.nii").write_bytes(_nifti_header(datatype=4) + b"\x00" * 4 + payload)
        v = fileio.read_volume(tmp_path / "i.nii")
        assert v.data.ravel(order="F")[5] == 5.0

    def test_detached_header_rejected(self, tmp_path):
        (tmp_path / "d.nii").write_bytes(
            _nifti_header(magic=b"ni1\x00") + b"\x00" * 4 + b"\x00" * 2048
        )
        with pytest.raises(fileio.FileFormatError, match="unsupported NIfTI variant"):
            fileio.read_volume(tmp_path / "d.nii")

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "b.nii").write_bytes(
            _nifti_header(magic=b"xxxx") + b"\x00" * 4 + b"\x00" * 2048
        )
        with pytest.raises(fileio.FileFormatError, match="bad magic"):
            fileio.read_volume(tmp_path / "b.nii")

    def test_unsupported_datatype_rejected(self, tmp_path):
        (tmp_path / "u.nii").write_bytes(_nifti_header(datatype=64) + b"\x00" * 2052)
        with pytest.raises(fileio.FileFormatError, match="unsupported datatype code 64"):
            fileio.read_volume(tmp_path / "u.nii")

    def test_truncated_payload_rejected(self, tmp_path):
        (tmp_path / "t.nii").write_bytes(_nifti_header() + b"\x00" * 4 + b"\x00" * 100)
        with pytest.raises(fileio.FileFormatError, match="truncated payload"):
            fileio.read_volume(tmp_path / "t.nii")

    def test_big_endian_rejected(self, tmp_path):
        (tmp_path / "be.nii").write_bytes(_nifti_header(big_endian=True) + b"\x00" * 2052)
        with pytest.raises(fileio.FileFormatError, match="big-endian"):
            fileio.read_volume(tmp_path / "be.nii")

    def test_gzip_rejected(self, tmp_path):
        (tmp_path / "c.nii").write_bytes(b"\x1f\x8b" + b"\x00" * 400)
        with pytest.raises(fileio.FileFormatError, match="compressed"):
            fileio.read_volume(tmp_path / "c.nii")
        (tmp_path / "c.nii.gz").write_bytes(b"\x1f\x8b" + b"\x00" * 400)
        with pytest.raises(fileio.FileFormatError, match="compressed"):
            fileio.read_volume(tmp_path / "c.nii.gz")

    def test_4d_rejected(self, tmp_path):
        hdr = bytearray(_nifti_header())
        struct.pack_into("<8h", hdr, 40, 4, 8, 8, 8, 2, 1, 1, 1)
        (tmp_path / "f.nii").write_bytes(bytes(hdr) + b"\x00" * 8192)
        with pytest.raises(fileio.FileFormatError, match="only 3D"):
            fileio.read_volume(tmp_path / "f.nii")

    def test_labels_refuse_float_datatype(self, rng, tmp_path):
        v = Volume(rng.random((4, 4, 4)))
        fileio.write_volume(tmp_path / "v.nii", v)
        with pytest.raises(fileio.FileFormatError, match="integer datatype"):
            fileio.read_labels(tmp_path / "v.nii")


class TestReportTables:
    def test_fig1_row_at_zero_gradient(self, tmp_path):
        curves = metrics.adaptive_response_curves(AdaptiveParams(), g_max=1.0, num=3)
        fileio.write_curves_csv(tmp_path / "c.csv", curves)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "g,lambda_hat,mu_hat,alpha_hat"
        # mu_hat(0) = 0.5*(1 + sigmoid(5)) = 0.9966535745...; 6 significant
        # digits round to 0.996654
        assert lines[1] == "0,2,0.996654,2"
        sigma5 = 1.0 / (1.0 + math.exp(-5.0))
        assert float(lines[1].split(",")[2]) == pytest.approx(0.5 * (1 + sigma5), abs=5e-7)

    def test_empty_dice_report_header_only(self, tmp_path):
        report = MetricsReport()
        fileio.write_metrics_report(tmp_path, report)
        assert (tmp_path / "dice.csv").read_text() == "label,name,dice\n"

    def test_trace_csv_one_row_per_record(self, tmp_path):
        records = [
            EnergyBreakdown(sim=0.1 * i, strain=0.0, shear=0.0, folding=0.0,
                            total=0.1 * i, level=0, iteration=i)
            for i in range(5)
        ]
        fileio.write_trace_csv(tmp_path / "t.csv", OptimizationTrace(records=records))
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert len(lines) == 6
        assert lines[0] == "level,iteration,sim,strain,shear,folding,total"

    def test_volume_change_undefined_cell(self, tmp_path):
        report = MetricsReport(volume_changes={1: 12.5, 2: None})
        fileio.write_metrics_report(tmp_path, report)
        lines = (tmp_path / "volume_change.csv").read_text().splitlines()
        assert lines[1] == "1,,12.5"
        assert lines[2] == "2,,undefined"

    def test_metrics_json_mirror(self, rng, tmp_path):
        labels = LabelMap(rng.integers(0, 3, (6, 6, 6)).astype(np.int32))
        report = metrics.compute_report(labels, labels, identity_displacement((6, 6, 6)))
        fileio.write_metrics_report(tmp_path, report)
        payload = json.loads((tmp_path / "metrics.json").read_text())
        assert payload["mean_dice"] == 1.0
        assert payload["pct_jac_le0"] == 0.0
        assert payload["strain_energy"] == 0.0
        assert set(payload["dice_per_label"]) == {"1", "2"}


class TestGoldenFixtures:
    def test_curves_default(self, tmp_path):
        curves = metrics.adaptive_response_curves(AdaptiveParams(), g_max=1.0, num=200)
        fileio.write_curves_csv(tmp_path / "curves.csv", curves)
        assert (tmp_path / "curves.csv").read_bytes() == \
            (GOLDEN / "curves_default.csv").read_bytes()

    def test_metrics_identity(self, tmp_path):
        labels = np.zeros((8, 8, 8), dtype=np.int32)
        labels[2:6, 2:6, 2:6] = 1
        labels[3:5, 3:5, 3:5] = 2
        lm = LabelMap(labels, {1: "outer", 2: "inner"})
        report = metrics.compute_report(lm, lm, identity_displacement((8, 8, 8)))
        fileio.write_metrics_report(tmp_path, report)
        for name in ("summary.csv", "dice.csv", "volume_change.csv",
                     "neg_jacobian_hist.csv", "strain_hist.csv", "metrics.json"):
            assert (tmp_path / name).read_bytes() == \
                (GOLDEN / "metrics_identity" / name).read_bytes(), name

    def test_trace_schema(self, tmp_path):
        trace = OptimizationTrace(records=[
            EnergyBreakdown(sim=0.5, strain=0.25, shear=0.125, folding=0.0,
                            total=0.875, level=1, iteration=0),
            EnergyBreakdown(sim=0.25, strain=0.125, shear=0.0625, folding=0.0,
                            total=0.4375, level=1, iteration=1),
            EnergyBreakdown(sim=0.125, strain=0.0625, shear=0.03125, folding=0.015625,
                            total=0.234375, level=0, iteration=0),
        ])
        fileio.write_trace_csv(tmp_path / "t.csv", trace)
        assert (tmp_path / "t.csv").read_bytes() == (GOLDEN / "trace_schema.csv").read_bytes()

    def test_scatter_zero_field(self, tmp_path):
        table = metrics.parameter_energy_table(identity_displacement((2, 2, 2)),
                                               AdaptiveParams())
        fileio.write_scatter_csv(tmp_path / "s.csv", table.scatter)
        assert (tmp_path / "s.csv").read_bytes() == (GOLDEN / "scatter_zero.csv").read_bytes()


def test_write_report_dispatch(tmp_path, rng):
    labels = LabelMap(rng.integers(0, 3, (6, 6, 6)).astype(np.int32))
    report = metrics.compute_report(labels, labels, identity_displacement((6, 6, 6)))
    written = fileio.write_report(tmp_path / "m", report)
    assert (tmp_path / "m" / "metrics.json") in written

    trace = OptimizationTrace(records=[EnergyBreakdown(0.1, 0.0, 0.0, 0.0, 0.1)])
    assert fileio.write_report(tmp_path / "t.csv", trace) == [tmp_path / "t.csv"]

    table = metrics.parameter_energy_table(identity_displacement((4, 4, 4)),
                                           AdaptiveParams())
    written = fileio.write_report(tmp_path / "p", table)
    assert len(written) == 2

    with pytest.raises(TypeError):
        fileio.write_report(tmp_path / "x", object())


def test_unsupported_extension(tmp_path, rng):
    v = Volume(rng.random((4, 4, 4)))
    with pytest.raises(fileio.FileFormatError, match="unsupported volume extension"):
        fileio.write_volume(tmp_path / "v.dcm", v)
    with pytest.raises(fileio.FileFormatError, match="unsupported volume extension"):
        fileio.read_volume(tmp_path / "v.dcm")
