"""CLI surface: subcommands, exit codes, file outputs."""

import os

import numpy as np
import pytest

from aspdc import synth
from aspdc.cli import main
from aspdc.imageio import read_png, write_png
from aspdc.synth import CorpusSpec, make_corpus


def run(argv):
    return main(argv)


@pytest.fixture()
def sharp_png(tmp_path):
    img = synth.sharp_image(np.random.default_rng(0), 32)
    path = tmp_path / "sharp.png"
    write_png(path, img)
    return path


class TestSynthCmd:
    def test_writes_corpus(self, tmp_path):
        out = tmp_path / "corpus"
        assert run(["synth", "--out", str(out), "--seed", "1", "--count", "2", "--size", "32"]) == 0
        names = sorted(os.listdir(out))
        assert names == ["blur_0000.png", "blur_0001.png", "manifest.txt",
                         "sharp_0000.png", "sharp_0001.png"]


class TestDeblurCmd:
    def test_zeroinit_identity(self, tmp_path, sharp_png):
        out = tmp_path / "out.png"
        code = run(["deblur", "--ckpt", "zeroinit", "--in", str(sharp_png),
                    "--out", str(out), "--width", "4", "--modules", "1"])
        assert code == 0
        np.testing.assert_array_equal(read_png(out), read_png(sharp_png))

    def test_non_multiple_of_4_padded(self, tmp_path):
        img = synth.sharp_image(np.random.default_rng(1), 30)[:30, :27]
        src = tmp_path / "odd.png"
        write_png(src, img)
        out = tmp_path / "odd_out.png"
        code = run(["deblur", "--ckpt", "zeroinit", "--in", str(src),
                    "--out", str(out), "--width", "4", "--modules", "1"])
        assert code == 0
        assert read_png(out).shape == (30, 27, 3)

    def test_missing_input_is_io_error(self, tmp_path):
        code = run(["deblur", "--ckpt", "zeroinit", "--in", str(tmp_path / "nope.png"),
                    "--out", str(tmp_path / "o.png"), "--width", "4", "--modules", "1"])
        assert code == 2

    def test_missing_checkpoint_is_io_error(self, tmp_path, sharp_png):
        code = run(["deblur", "--ckpt", str(tmp_path / "nope.ckpt"), "--in", str(sharp_png),
                    "--out", str(tmp_path / "o.png")])
        assert code == 2


class TestEvalCmd:
    def test_identical_pair(self, tmp_path, sharp_png):
        out = tmp_path / "report.csv"
        code = run(["eval", "--pred", str(sharp_png), "--target", str(sharp_png),
                    "--out", str(out)])
        assert code == 0
        lines = open(out, encoding="utf-8").read().strip().splitlines()
        assert lines[0] == "name,psnr_db,ssim,diff_mean,diff_var"
        fields = lines[1].split(",")
        assert fields[1] == "inf"
        assert float(fields[2]) == pytest.approx(1.0)
        assert float(fields[3]) == 0.0 and float(fields[4]) == 0.0

    def test_count_mismatch_usage_error(self, tmp_path, sharp_png):
        code = run(["eval", "--pred", str(sharp_png), str(sharp_png),
                    "--target", str(sharp_png), "--out", str(tmp_path / "r.csv")])
        assert code == 1


class TestUsage:
    def test_unknown_command_exit_1(self):
        assert run(["frobnicate"]) == 1

    def test_missing_required_flag_exit_1(self):
        assert run(["synth"]) == 1

    def test_bad_config_exit_1(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[net]\nbase_widht = 8\n")
        code = run(["synth", "--out", str(tmp_path / "c"), "--config", str(cfg)])
        assert code == 1


class TestTrainAndPipeline:
    def test_train_deblur_and_dump_attn(self, tmp_path):
        corpus = tmp_path / "corpus"
        make_corpus(corpus, CorpusSpec(seed=2, count=2, size=32))
        run_dir = tmp_path / "run"
        code = run(["train-deblur", "--corpus", str(corpus), "--run", str(run_dir),
                    "--seed", "0", "--steps", "4", "--batch", "2", "--crop", "32",
                    "--width", "4", "--modules", "1"])
        assert code == 0
        ckpt = run_dir / "final.ckpt"
        assert ckpt.exists()
        assert (run_dir / "metrics.csv").exists() and (run_dir / "config.txt").exists()

        attn_dir = tmp_path / "attn"
        code = run(["dump-attn", "--ckpt", str(ckpt), "--in", str(corpus / "blur_0000.png"),
                    "--out", str(attn_dir)])
        assert code == 0
        maps = sorted(os.listdir(attn_dir))
        assert maps == [f"attn_{i}.png" for i in range(1, 5)]
        one = read_png(attn_dir / "attn_1.png")
        assert one.shape == (8, 8, 3)  # 32/4 bottleneck, grayscale written as RGB

    def test_train_reblur_and_reblur_cmd(self, tmp_path):
        corpus = tmp_path / "corpus"
        make_corpus(corpus, CorpusSpec(seed=3, count=2, size=32))
        run_dir = tmp_path / "rrun"
        code = run(["train-reblur", "--corpus", str(corpus), "--run", str(run_dir),
                    "--seed", "0", "--steps", "4", "--batch", "2", "--crop", "32",
                    "--width", "4"])
        assert code == 0
        out = tmp_path / "reblurred.png"
        code = run(["reblur", "--ckpt", str(run_dir / "final.ckpt"),
                    "--sharp", str(corpus / "sharp_0000.png"),
                    "--blurred", str(corpus / "blur_0000.png"), "--out", str(out)])
        assert code == 0
        assert read_png(out).shape == (32, 32, 3)

    def test_finetune_lam_sweep_layout(self, tmp_path):
        corpus = tmp_path / "corpus"
        make_corpus(corpus, CorpusSpec(seed=4, count=2, size=32))
        drun, rrun = tmp_path / "drun", tmp_path / "rrun"
        run(["train-deblur", "--corpus", str(corpus), "--run", str(drun), "--steps", "2",
             "--batch", "2", "--crop", "32", "--width", "4", "--modules", "1"])
        run(["train-reblur", "--corpus", str(corpus), "--run", str(rrun), "--steps", "2",
             "--batch", "2", "--crop", "32", "--width", "4"])
        frun = tmp_path / "frun"
        code = run(["finetune", "--corpus", str(corpus), "--run", str(frun),
                    "--deblur-ckpt", str(drun / "final.ckpt"),
                    "--reblur-ckpt", str(rrun / "final.ckpt"),
                    "--lam", "0.01,0.1,1", "--steps", "2", "--batch", "2", "--crop", "32"])
        assert code == 0
        for lam in ("0.01", "0.1", "1"):
            assert (frun / f"lam_{lam}" / "final.ckpt").exists()
            assert (frun / f"lam_{lam}" / "metrics.csv").exists()
