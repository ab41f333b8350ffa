import shutil
from pathlib import Path

import pytest
import yaml

from psnet.cli import build_parser, main
from psnet.report import read_report

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def gt_copies(make_dataset, tmp_dir):
    """A dataset plus a prediction tree that copies its ground truth."""
    root = make_dataset(count=2, n_frames=3)
    pred = tmp_dir / "pred"
    for seq in ("seq0", "seq1"):
        shutil.copytree(root / seq / "gt", pred / seq)
    return root, pred


class TestParser:
    def test_invalid_stage(self):
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args(["train", "--stage", "4", "--config", "x.yaml"])
        assert info.value.code == 2

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestEval:
    def test_perfect_predictions(self, gt_copies, tmp_dir, capsys):
        root, pred = gt_copies
        report = tmp_dir / "report.txt"
        assert main(["eval", "--pred", str(pred), "--gt", str(root),
                     "--report", str(report), "--xlsx"]) == 0
        out = capsys.readouterr().out
        assert "seq0" in out and "ALL" in out
        assert report.is_file()
        assert report.with_suffix(".json").is_file()
        assert report.with_suffix(".xlsx").is_file()
        scores = read_report(report.with_suffix(".json")).aggregate
        assert scores.triple() == pytest.approx((1.0, 1.0, 0.0))

    def test_missing_sequence_fails(self, gt_copies, tmp_dir, caplog):
        root, pred = gt_copies
        shutil.rmtree(pred / "seq1")
        code = main(["eval", "--pred", str(pred), "--gt", str(root),
                     "--report", str(tmp_dir / "report.txt")])
        assert code == 1
        assert "seq1" in caplog.text


class TestSynth:
    def test_writes_clips(self, tmp_dir, capsys):
        spec = tmp_dir / "clips.yaml"
        spec.write_text(yaml.safe_dump({"random": {"count": 2, "size": [32, 32],
                                                   "n_frames": 3}}))
        assert main(["synth", "--spec", str(spec), "--output", str(tmp_dir / "synth")]) == 0
        assert "2 clips written" in capsys.readouterr().out
        assert len(list((tmp_dir / "synth" / "random001" / "flow").iterdir())) == 2

    def test_bad_spec(self, tmp_dir):
        spec = tmp_dir / "clips.yaml"
        spec.write_text("clips:\n  a:\n    shape: star\n")
        assert main(["synth", "--spec", str(spec), "--output", str(tmp_dir / "synth")]) == 1


class TestTrainInferOverlay:
    def test_pipeline(self, make_dataset, tmp_dir, capsys):
        root = make_dataset(count=1, n_frames=3)
        ckpt_dir = tmp_dir / "ckpt"
        config = tmp_dir / "config.yaml"
        config.write_text(yaml.safe_dump({
            "model": {"backbone": {"name": "tiny"}, "decoder_width": 16, "input_size": [64, 64]},
            "stages": {3: {"dataset_root": str(root), "batch_size": 2, "max_steps": 1,
                           "from_scratch": True, "checkpoint_dir": str(ckpt_dir)}},
        }))
        assert main(["train", "--stage", "3", "--config", str(config)]) == 0
        ckpt = ckpt_dir / "stage3_final.pt"
        assert str(ckpt) in capsys.readouterr().out

        out = tmp_dir / "out"
        assert main(["infer", "--ckpt", str(ckpt), "--input", str(root),
                     "--output", str(out)]) == 0
        assert "2 maps written" in capsys.readouterr().out

        rgb, flow = root / "seq0" / "rgb" / "00000.png", root / "seq0" / "flow" / "00000.png"
        assert main(["infer", "--ckpt", str(ckpt), "--input", str(rgb), "--flow", str(flow),
                     "--output", str(tmp_dir / "single")]) == 0
        assert "1 maps written" in capsys.readouterr().out
        assert (tmp_dir / "single" / "00000.png").is_file()

        assert main(["overlay", "--pred", str(out), "--rgb", str(root),
                     "--output", str(tmp_dir / "overlay")]) == 0
        assert (tmp_dir / "overlay" / "seq0" / "00000.png").is_file()

    def test_missing_config(self, tmp_dir):
        assert main(["train", "--stage", "1", "--config", str(tmp_dir / "none.yaml")]) == 1


def test_info(capsys):
    assert main(["info", "--config", str(CONFIGS / "tiny.yaml")]) == 0
    out = capsys.readouterr().out
    assert "ablation: full" in out
    assert "total" in out and "fusion" in out
