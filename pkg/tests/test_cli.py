import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from adelreg import fileio
from adelreg.cli import main
from adelreg.synth import SynthSpec, make_pair


def _write_pair(tmp_path, dims=(12, 12, 12), seed=11, amplitude=1.0, sigma=3.0):
    pair = make_pair(SynthSpec(dims=dims, seed=seed, max_amplitude=amplitude,
                               bump_sigma=sigma))
    fileio.write_volume(tmp_path / "fixed.bin", pair.fixed)
    fileio.write_volume(tmp_path / "moving.bin", pair.moving)
    fileio.write_labels(tmp_path / "labels_fixed.bin", pair.labels_fixed)
    fileio.write_labels(tmp_path / "labels_moving.bin", pair.labels_moving)
    return pair


class TestRegister:
    def test_identity_pair_outputs(self, tmp_path):
        pair = _write_pair(tmp_path, amplitude=0.0)
        out = tmp_path / "out"
        code = main([
            "register", "--fixed", str(tmp_path / "fixed.bin"),
            "--moving", str(tmp_path / "fixed.bin"),
            "--out-dir", str(out), "--levels", "2", "--iters", "30",
        ])
        assert code == 0
        u = fileio.read_displacement(out / "displacement.bin")
        assert float(np.sqrt((u.vectors**2).sum(axis=0)).mean()) <= 0.05
        warped = fileio.read_volume(out / "warped.bin")
        # f32 round trip of the unmoved input
        assert np.array_equal(warped.data,
                              pair.fixed.data.astype(np.float32).astype(np.float64))
        assert (out / "trace.csv").exists()

    def test_output_format_follows_moving_input(self, tmp_path):
        pair = _write_pair(tmp_path, amplitude=0.5)
        fileio.write_volume(tmp_path / "fixed.nii", pair.fixed)
        fileio.write_volume(tmp_path / "moving.nii", pair.moving)
        out = tmp_path / "out"
        code = main([
            "register", "--fixed", str(tmp_path / "fixed.nii"),
            "--moving", str(tmp_path / "moving.nii"),
            "--out-dir", str(out), "--levels", "1", "--iters", "5",
        ])
        assert code == 0
        assert (out / "warped.nii").exists()

    def test_missing_input_exits_2(self, tmp_path, capsys):
        code = main(["register", "--fixed", "/no/such/file.bin",
                     "--moving", "/no/such/other.bin", "--out-dir", str(tmp_path)])
        assert code == 2
        assert "/no/such/file.bin" in capsys.readouterr().err

    def test_invalid_flag_value_exits_2(self, tmp_path, capsys):
        _write_pair(tmp_path, amplitude=0.5)
        out = tmp_path / "never"
        code = main([
            "register", "--fixed", str(tmp_path / "fixed.bin"),
            "--moving", str(tmp_path / "moving.bin"), "--out-dir", str(out),
            "--regularizer", "dare", "--lambda0", "-1",
        ])
        assert code == 2
        assert "lambda0" in capsys.readouterr().err
        assert not out.exists()  # no partial outputs

    def test_shape_mismatch_exits_2(self, tmp_path):
        _write_pair(tmp_path, amplitude=0.5)
        other = make_pair(SynthSpec(dims=(8, 8, 8), seed=1, max_amplitude=0.0))
        fileio.write_volume(tmp_path / "small.bin", other.fixed)
        code = main([
            "register", "--fixed", str(tmp_path / "fixed.bin"),
            "--moving", str(tmp_path / "small.bin"), "--out-dir", str(tmp_path / "x"),
        ])
        assert code == 2

    def test_bad_file_format_exits_4(self, tmp_path):
        (tmp_path / "junk.nii").write_bytes(b"\x1f\x8b" + b"\x00" * 400)
        code = main(["register", "--fixed", str(tmp_path / "junk.nii"),
                     "--moving", str(tmp_path / "junk.nii"),
                     "--out-dir", str(tmp_path / "x")])
        assert code == 4

    @pytest.mark.parametrize("flags", [
        ["--similarity", "mi", "--mi-bins", "8"],
        ["--similarity", "ssd"],
        ["--regularizer", "elastic"],
        ["--regularizer", "tv"],
        ["--regularizer", "bending"],
        ["--regularizer", "dare", "--frozen-adaptive"],
    ])
    def test_variant_smoke(self, tmp_path, flags):
        _write_pair(tmp_path, dims=(10, 10, 10), amplitude=0.8)
        out = tmp_path / "out"
        code = main([
            "register", "--fixed", str(tmp_path / "fixed.bin"),
            "--moving", str(tmp_path / "moving.bin"), "--out-dir", str(out),
            "--levels", "1", "--iters", "5",
        ] + flags)
        assert code == 0
        assert (out / "displacement.bin").exists()


class TestEvaluate:
    def test_identity_metrics(self, tmp_path):
        _write_pair(tmp_path, amplitude=0.0)
        fileio.write_displacement(tmp_path / "u.bin",
                                  make_pair(SynthSpec(dims=(12, 12, 12), seed=1,
                                                      max_amplitude=0.0)).u_gt)
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--fixed-labels", str(tmp_path / "labels_fixed.bin"),
            "--moving-labels", str(tmp_path / "labels_moving.bin"),
            "--displacement", str(tmp_path / "u.bin"), "--out-dir", str(out),
        ])
        assert code == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["mean_dice"] == 1.0
        assert payload["pct_jac_le0"] == 0.0
        assert payload["strain_energy"] == 0.0

    def test_missing_structure_warns_but_succeeds(self, tmp_path, capsys):
        _write_pair(tmp_path, amplitude=0.0)
        fileio.write_displacement(tmp_path / "u.bin",
                                  make_pair(SynthSpec(dims=(12, 12, 12), seed=1,
                                                      max_amplitude=0.0)).u_gt)
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--fixed-labels", str(tmp_path / "labels_fixed.bin"),
            "--moving-labels", str(tmp_path / "labels_moving.bin"),
            "--displacement", str(tmp_path / "u.bin"),
            "--labels", "1,99", "--out-dir", str(out),
        ])
        assert code == 0
        assert "99" in capsys.readouterr().err
        assert "99,,undefined" in (out / "volume_change.csv").read_text()

    def test_dims_mismatch_exits_2(self, tmp_path):
        _write_pair(tmp_path, amplitude=0.0)
        small = make_pair(SynthSpec(dims=(8, 8, 8), seed=1, max_amplitude=0.0))
        fileio.write_displacement(tmp_path / "u.bin", small.u_gt)
        code = main([
            "evaluate", "--fixed-labels", str(tmp_path / "labels_fixed.bin"),
            "--moving-labels", str(tmp_path / "labels_moving.bin"),
            "--displacement", str(tmp_path / "u.bin"), "--out-dir", str(tmp_path / "x"),
        ])
        assert code == 2


class TestAnalyze:
    def test_curves_only(self, tmp_path):
        out = tmp_path / "an"
        assert main(["analyze", "--curves-only", "--out-dir", str(out)]) == 0
        lines = (out / "curves.csv").read_text().splitlines()
        assert len(lines) == 201
        assert lines[1] == "0,2,0.996654,2"

    def test_with_field_emits_scatter_and_histograms(self, tmp_path):
        pair = make_pair(SynthSpec(dims=(10, 10, 10), seed=3, max_amplitude=1.0,
                                   bump_sigma=3.0))
        fileio.write_displacement(tmp_path / "u.bin", pair.u_gt)
        out = tmp_path / "an"
        code = main(["analyze", "--displacement", str(tmp_path / "u.bin"),
                     "--out-dir", str(out)])
        assert code == 0
        for name in ("curves.csv", "scatter.csv", "neg_jacobian_hist.csv",
                     "strain_hist.csv"):
            assert (out / name).exists(), name
        scatter = (out / "scatter.csv").read_text().splitlines()
        assert len(scatter) == 1 + 10**3

    def test_no_input_exits_2(self, tmp_path):
        assert main(["analyze", "--out-dir", str(tmp_path)]) == 2

    def test_zero_field_scatter_collapses(self, tmp_path):
        zero = make_pair(SynthSpec(dims=(8, 8, 8), seed=1, max_amplitude=0.0)).u_gt
        fileio.write_displacement(tmp_path / "u.bin", zero)
        out = tmp_path / "an"
        assert main(["analyze", "--displacement", str(tmp_path / "u.bin"),
                     "--out-dir", str(out)]) == 0
        rows = set((out / "scatter.csv").read_text().splitlines()[1:])
        assert len(rows) == 1


class TestSynth:
    def test_zero_amplitude_payloads_identical(self, tmp_path):
        out = tmp_path / "syn"
        code = main(["synth", "--dims", "10,10,10", "--amplitude", "0",
                     "--seed", "3", "--out-dir", str(out)])
        assert code == 0
        assert (out / "fixed.bin").read_bytes() == (out / "moving.bin").read_bytes()

    def test_same_seed_byte_identical(self, tmp_path):
        args = ["synth", "--dims", "10,10,10", "--amplitude", "1", "--sigma", "3",
                "--seed", "5"]
        assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
        assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
        match, mismatch, errors = filecmp.cmpfiles(
            tmp_path / "a", tmp_path / "b",
            [p.name for p in (tmp_path / "a").iterdir()], shallow=False,
        )
        assert not mismatch and not errors

    def test_amplitude_too_large_exits_3(self, tmp_path):
        code = main(["synth", "--dims", "10,10,10", "--amplitude", "50",
                     "--sigma", "2", "--out-dir", str(tmp_path / "x")])
        assert code == 3

    def test_nii_format(self, tmp_path):
        out = tmp_path / "syn"
        code = main(["synth", "--dims", "10,10,10", "--amplitude", "0.5",
                     "--sigma", "3", "--format", "nii", "--out-dir", str(out)])
        assert code == 0
        assert (out / "fixed.nii").exists()
        fileio.read_volume(out / "fixed.nii")


class TestConfigFile:
    def test_config_overrides_flags(self, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"amplitude": 0.0, "seed": 9}))
        out = tmp_path / "syn"
        code = main(["synth", "--dims", "10,10,10", "--amplitude", "2",
                     "--config", str(tmp_path / "cfg.json"), "--out-dir", str(out)])
        assert code == 0
        assert (out / "fixed.bin").read_bytes() == (out / "moving.bin").read_bytes()

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        (tmp_path / "cfg.json").write_text(json.dumps({"warp-speed": 9}))
        code = main(["synth", "--dims", "10,10,10",
                     "--config", str(tmp_path / "cfg.json"), "--out-dir", str(tmp_path)])
        assert code == 2
        assert "warp-speed" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path):
        code = main(["synth", "--config", str(tmp_path / "none.json"),
                     "--out-dir", str(tmp_path)])
        assert code == 2


def test_end_to_end_pipeline_deterministic(tmp_path):
    """synth -> register -> evaluate twice; every artifact byte-identical."""
    def run(base: Path):
        base.mkdir()
        assert main(["synth", "--dims", "12,12,12", "--seed", "11", "--amplitude", "1",
                     "--sigma", "3", "--out-dir", str(base / "synth"),
                     "--threads", "1"]) == 0
        assert main(["register", "--fixed", str(base / "synth" / "fixed.bin"),
                     "--moving", str(base / "synth" / "moving.bin"),
                     "--out-dir", str(base / "reg"), "--levels", "2", "--iters", "25",
                     "--threads", "1", "--seed", "0"]) == 0
        assert main(["evaluate", "--fixed-labels", str(base / "synth" / "labels_fixed.bin"),
                     "--moving-labels", str(base / "synth" / "labels_moving.bin"),
                     "--displacement", str(base / "reg" / "displacement.bin"),
                     "--out-dir", str(base / "eval"), "--threads", "1"]) == 0

    run(tmp_path / "one")
    run(tmp_path / "two")
    files_one = sorted(p.relative_to(tmp_path / "one")
                       for p in (tmp_path / "one").rglob("*") if p.is_file())
    files_two = sorted(p.relative_to(tmp_path / "two")
                       for p in (tmp_path / "two").rglob("*") if p.is_file())
    assert files_one == files_two
    for rel in files_one:
        assert (tmp_path / "one" / rel).read_bytes() == \
            (tmp_path / "two" / rel).read_bytes(), rel
