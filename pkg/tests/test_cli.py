"""End-to-end command tests: every subcommand through main(), real files."""

import json

import numpy as np
import pytest

from msdeblur.cli import (
    UsageError,
    apply_overrides,
    main,
    parse_kernel_size,
    read_config_file,
)
from msdeblur.imgmath import read_kernel_txt, read_png, write_png
from msdeblur.metrics import metric_report
from msdeblur.optimizer import RunConfig

SMALL_DEBLUR = ["--scales", "2", "--base-width", "4", "--width-cap", "8"]


def make_sharp(path, seed=0, shape=(32, 32)):
    rng = np.random.default_rng(seed)
    write_png(path, rng.uniform(0.1, 0.9, size=shape))
    return path


class TestParseKernelSize:
    def test_square(self):
        assert parse_kernel_size("7") == (7, 7)

    @pytest.mark.parametrize("text", ["5x7", "5,7"])
    def test_rectangular(self, text):
        assert parse_kernel_size(text) == (5, 7)

    @pytest.mark.parametrize("text", ["4", "5x4", "0", "-3", "3x3x3", "five"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_kernel_size(text)


class TestConfigFile:
    def test_parse_skips_blanks_and_comments(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# a comment\n\nlambda_h = 3.5\nmax_iters=7\n")
        assert read_config_file(cfg) == {"lambda_h": "3.5", "max_iters": "7"}

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("lambda_h 3.5\n")
        with pytest.raises(UsageError, match="key=value"):
            read_config_file(cfg)

    def test_apply_routes_sections(self):
        cfg = apply_overrides(
            RunConfig(),
            {"lambda_h": "3.5", "scales": "2", "lambda_x": "1.5", "timing": "false"},
        )
        assert cfg.solver.lambda_h == 3.5
        assert cfg.generator.scales == 2
        assert cfg.loss.lambda_x == 1.5
        assert cfg.timing is False

    def test_unknown_key_rejected(self):
        with pytest.raises(UsageError, match="unknown config key"):
            apply_overrides(RunConfig(), {"lamda_h": "3.5"})

    def test_bad_value_rejected(self):
        with pytest.raises(UsageError, match="bad value"):
            apply_overrides(RunConfig(), {"max_iters": "many"})


class TestSynthCommand:
    def test_writes_all_artifacts(self, tmp_path):
        sharp = make_sharp(tmp_path / "sharp.png")
        code = main(
            ["synth", str(sharp), "--kernel", "walk:20,3", "--out", str(tmp_path / "o")]
        )
        assert code == 0
        out = tmp_path / "o"
        assert (out / "sharp_blurred.png").exists()
        kernel = read_kernel_txt(out / "sharp_kernel.txt")
        assert np.all(kernel >= 0.0)
        assert kernel.sum() == pytest.approx(1.0)
        manifest = json.loads((out / "sharp_manifest.json").read_text())
        assert manifest["kernel_spec"] == "walk:20,3"
        assert manifest["noise_sigma"] == 0.01

    def test_delta_no_noise_reproduces_input(self, tmp_path):
        sharp = make_sharp(tmp_path / "sharp.png")
        code = main(
            ["synth", str(sharp), "--kernel", "motion:1,0", "--noise-sigma", "0",
             "--out", str(tmp_path)]
        )
        assert code == 0
        assert np.array_equal(read_png(tmp_path / "sharp_blurred.png"), read_png(sharp))

    def test_round_trip_eval_gives_perfect_scores(self, tmp_path, capsys):
        sharp = make_sharp(tmp_path / "sharp.png")
        main(["synth", str(sharp), "--kernel", "motion:1,0", "--noise-sigma", "0",
              "--out", str(tmp_path)])
        capsys.readouterr()
        code = main(["eval", str(tmp_path / "sharp_blurred.png"), str(sharp)])
        report = json.loads(capsys.readouterr().out)
        assert code == 0
        assert report["ssim"] == 1.0
        assert report["psnr"] == 100.0

    def test_one_percent_noise_sits_near_forty_db(self, tmp_path, capsys):
        sharp = make_sharp(tmp_path / "sharp.png", seed=5, shape=(128, 128))
        main(["synth", str(sharp), "--kernel", "motion:1,0", "--out", str(tmp_path)])
        capsys.readouterr()
        main(["eval", str(tmp_path / "sharp_blurred.png"), str(sharp)])
        report = json.loads(capsys.readouterr().out)
        assert report["psnr"] == pytest.approx(40.0, abs=0.2)

    def test_same_seed_same_bytes(self, tmp_path):
        sharp = make_sharp(tmp_path / "sharp.png")
        for sub in ("a", "b"):
            main(["synth", str(sharp), "--kernel", "motion:5,45", "--seed", "9",
                  "--out", str(tmp_path / sub)])
        blurred = lambda sub: (tmp_path / sub / "sharp_blurred.png").read_bytes()
        assert blurred("a") == blurred("b")

    def test_unreadable_input_is_usage_error(self, tmp_path):
        code = main(["synth", str(tmp_path / "missing.png"), "--kernel", "motion:5,0"])
        assert code == 1

    def test_malformed_spec_is_usage_error(self, tmp_path):
        sharp = make_sharp(tmp_path / "sharp.png")
        assert main(["synth", str(sharp), "--kernel", "motion:5"]) == 1
        assert main(["synth", str(sharp), "--kernel", "bogus:1,2"]) == 1

    def test_dump_float_writes_f32(self, tmp_path):
        sharp = make_sharp(tmp_path / "sharp.png")
        main(["synth", str(sharp), "--kernel", "motion:3,0", "--dump-float",
              "--out", str(tmp_path)])
        dump = np.load(tmp_path / "sharp_blurred.npy")
        assert dump.dtype == np.float32
        assert dump.shape == (32, 32)


@pytest.fixture()
def blurred_file(tmp_path):
    sharp = make_sharp(tmp_path / "sharp.png")
    main(["synth", str(sharp), "--kernel", "motion:5,30", "--out", str(tmp_path)])
    return tmp_path / "sharp_blurred.png"


class TestDeblurCommand:
    def test_single_iteration_plumbing(self, tmp_path, blurred_file):
        out = tmp_path / "run"
        code = main(
            ["deblur", str(blurred_file), "--kernel-size", "5", "--iters", "1",
             *SMALL_DEBLUR, "--out", str(out)]
        )
        assert code == 0
        restored = read_png(out / "sharp_blurred_deblurred.png")
        assert restored.shape == (32, 32)
        kernel = read_kernel_txt(out / "sharp_blurred_kernel.txt")
        assert kernel.shape == (5, 5)
        assert kernel.sum() == pytest.approx(1.0)
        assert (out / "sharp_blurred_kernel.png").exists()
        trace = (out / "sharp_blurred_trace.csv").read_text().splitlines()
        assert trace[0] == "iter,loss,fid_s0,fid_s1,tv,lr,ms"
        assert len(trace) == 2
        summary = json.loads((out / "sharp_blurred_summary.json").read_text())
        assert summary["n_iters"] == 1
        assert summary["config"]["kernel_size"] == [5, 5]
        assert "delta_fallbacks" in summary and "refine_fell_back" in summary

    def test_no_timing_zeroes_ms_column(self, tmp_path, blurred_file):
        out = tmp_path / "run"
        main(["deblur", str(blurred_file), "--kernel-size", "5", "--iters", "2",
              *SMALL_DEBLUR, "--no-timing", "--out", str(out)])
        rows = (out / "sharp_blurred_trace.csv").read_text().splitlines()[1:]
        assert all(row.endswith(",0") for row in rows)

    def test_repeat_runs_are_byte_identical(self, tmp_path, blurred_file):
        args = ["deblur", str(blurred_file), "--kernel-size", "5", "--iters", "2",
                *SMALL_DEBLUR, "--no-timing", "--dump-float"]
        for sub in ("a", "b"):
            assert main([*args, "--out", str(tmp_path / sub)]) == 0
        for name in (
            "sharp_blurred_trace.csv",
            "sharp_blurred_deblurred.npy",
            "sharp_blurred_kernel.npy",
            "sharp_blurred_deblurred.png",
        ):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes(), name

    def test_single_scale_ablation_runs(self, tmp_path, blurred_file):
        out = tmp_path / "run"
        code = main(
            ["deblur", str(blurred_file), "--kernel-size", "5", "--iters", "1",
             "--scales", "1", "--base-width", "4", "--width-cap", "8",
             "--save-scales", "--out", str(out)]
        )
        assert code == 0
        summary = json.loads((out / "sharp_blurred_summary.json").read_text())
        assert summary["config"]["generator"]["scales"] == 1
        assert (out / "sharp_blurred_scale0.png").exists()
        assert not (out / "sharp_blurred_scale1.png").exists()
        trace = (out / "sharp_blurred_trace.csv").read_text().splitlines()
        assert trace[0] == "iter,loss,fid_s0,tv,lr,ms"

    def test_reference_and_true_kernel_metrics(self, tmp_path, blurred_file):
        out = tmp_path / "run"
        main(["deblur", str(blurred_file), "--kernel-size", "5", "--iters", "1",
              *SMALL_DEBLUR, "--reference", str(tmp_path / "sharp.png"),
              "--true-kernel", str(tmp_path / "sharp_kernel.txt"), "--out", str(out)])
        summary = json.loads((out / "sharp_blurred_summary.json").read_text())
        assert summary["psnr_gain_db"] == pytest.approx(
            summary["psnr_restored"] - summary["psnr_blurred"]
        )
        assert 0.0 <= summary["kernel_ncc"] <= 1.0 + 1e-12

    def test_config_file_layering(self, tmp_path, blurred_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# overrides\nlambda_h=3.5\nmax_iters=5\nbase_width=4\n"
                       "width_cap=8\nscales=2\n")
        out = tmp_path / "run"
        code = main(
            ["deblur", str(blurred_file), "--kernel-size", "5", "--config", str(cfg),
             "--iters", "1", "--out", str(out)]
        )
        assert code == 0
        summary = json.loads((out / "sharp_blurred_summary.json").read_text())
        assert summary["config"]["solver"]["lambda_h"] == 3.5  # from the file
        assert summary["n_iters"] == 1  # flag beats the file

    def test_preset_constants_echoed(self, tmp_path, blurred_file):
        out = tmp_path / "run"
        main(["deblur", str(blurred_file), "--kernel-size", "5", "--preset", "kohler",
              "--iters", "1", *SMALL_DEBLUR, "--out", str(out)])
        summary = json.loads((out / "sharp_blurred_summary.json").read_text())
        assert summary["preset"] == "kohler"
        assert summary["config"]["solver"]["lambda_h"] == 120.0
        assert summary["config"]["loss"]["lambda_x"] == 1.0
        assert summary["config"]["lr"] == 0.01

    def test_unknown_config_key_is_usage_error(self, tmp_path, blurred_file):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("lamda_h=3.5\n")
        code = main(["deblur", str(blurred_file), "--kernel-size", "5",
                     "--config", str(cfg)])
        assert code == 1

    def test_divergence_exits_2_with_partial_trace(self, tmp_path, blurred_file):
        out = tmp_path / "run"
        code = main(
            ["deblur", str(blurred_file), "--kernel-size", "5", "--iters", "30",
             *SMALL_DEBLUR, "--lr", "1e150", "--out", str(out)]
        )
        assert code == 2
        trace = (out / "sharp_blurred_trace.csv").read_text().splitlines()
        assert 2 <= len(trace) < 31
        summary = json.loads((out / "sharp_blurred_summary.json").read_text())
        assert summary["aborted"] is True
        assert not (out / "sharp_blurred_deblurred.png").exists()

    def test_checkpoints_written(self, tmp_path, blurred_file):
        out = tmp_path / "run"
        main(["deblur", str(blurred_file), "--kernel-size", "5", "--iters", "2",
              *SMALL_DEBLUR, "--checkpoint-every", "1", "--out", str(out)])
        ckpts = sorted((out / "sharp_blurred_checkpoints").iterdir())
        assert [p.name for p in ckpts] == ["params_000001.ckpt", "params_000002.ckpt"]


class TestEvalCommand:
    def test_mismatched_dims_single_pair(self, tmp_path):
        a = make_sharp(tmp_path / "a.png", shape=(16, 16))
        b = make_sharp(tmp_path / "b.png", shape=(16, 20))
        assert main(["eval", str(a), str(b)]) == 1

    def test_mixed_file_and_directory(self, tmp_path):
        a = make_sharp(tmp_path / "a.png")
        assert main(["eval", str(a), str(tmp_path)]) == 1

    def test_batch_rows_and_average(self, tmp_path, capsys):
        res, ref = tmp_path / "res", tmp_path / "ref"
        res.mkdir(), ref.mkdir()
        rng = np.random.default_rng(2)
        for i in range(3):
            clean = rng.uniform(0.2, 0.8, size=(16, 16))
            write_png(ref / f"im{i}.png", clean)
            write_png(res / f"im{i}.png", np.clip(clean + 0.02, 0, 1))
        code = main(["eval", str(res), str(ref)])
        lines = capsys.readouterr().out.splitlines()
        assert code == 0
        assert lines[0] == "name,psnr,ssim,status"
        assert len(lines) == 5  # header + 3 rows + average
        assert lines[-1].startswith("average,")
        psnrs = [float(line.split(",")[1]) for line in lines[1:4]]
        avg = float(lines[-1].split(",")[1])
        assert avg == pytest.approx(np.mean(psnrs))
        # rows match the library scores exactly
        row0 = lines[1].split(",")
        expected = metric_report(read_png(res / "im0.png"), read_png(ref / "im0.png"))
        assert float(row0[1]) == expected.psnr
        assert float(row0[2]) == expected.ssim

    def test_batch_mismatch_excluded_and_flagged(self, tmp_path, capsys):
        res, ref = tmp_path / "res", tmp_path / "ref"
        res.mkdir(), ref.mkdir()
        make_sharp(res / "ok.png", seed=1)
        make_sharp(ref / "ok.png", seed=1)
        make_sharp(res / "bad.png", seed=2, shape=(16, 16))
        make_sharp(ref / "bad.png", seed=2, shape=(16, 20))
        make_sharp(res / "orphan.png", seed=3)
        code = main(["eval", str(res), str(ref)])
        lines = capsys.readouterr().out.splitlines()
        assert code == 2
        by_name = {line.split(",")[0]: line for line in lines[1:]}
        assert by_name["bad.png"].endswith("dim-mismatch")
        assert by_name["orphan.png"].endswith("missing-reference")
        assert by_name["average"].endswith("1/3")

    def test_report_file_written(self, tmp_path, capsys):
        a = make_sharp(tmp_path / "a.png")
        report = tmp_path / "report.json"
        code = main(["eval", str(a), str(a), "--report", str(report)])
        capsys.readouterr()
        assert code == 0
        assert json.loads(report.read_text())["ssim"] == 1.0

    def test_luminance_aggregation_flag(self, tmp_path, capsys):
        rng = np.random.default_rng(4)
        img = rng.uniform(0.2, 0.8, size=(16, 16, 3))
        a = tmp_path / "a.png"
        write_png(a, img)
        main(["eval", str(a), str(a), "--luminance"])
        report = json.loads(capsys.readouterr().out)
        assert report["aggregation"] == "luminance"
        assert report["ssim"] == 1.0
