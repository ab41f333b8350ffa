import logging

import pytest
import torch

from psnet.backbone import (
    LEVELS,
    Branch,
    DualStreamEncoder,
    FeaturePyramid,
    PyramidProjection,
    ResNetEncoder,
    TinyEncoder,
    check_input_size,
)
from psnet.config import BackboneConfig
from psnet.exceptions import InputShapeError


class TestInputSize:
    def test_non_divisible_width_named(self):
        with pytest.raises(InputShapeError, match="width 100"):
            check_input_size(96, 100)

    def test_non_divisible_height_named(self):
        with pytest.raises(InputShapeError, match="height 100"):
            check_input_size(100, 96)

    def test_encode_rejects_bad_size(self):
        enc = DualStreamEncoder(BackboneConfig(name="tiny"))
        with pytest.raises(InputShapeError, match="width"):
            enc.encode(torch.zeros(1, 3, 64, 100), Branch.APPEARANCE)

    def test_encode_rejects_channels(self):
        enc = DualStreamEncoder(BackboneConfig(name="tiny"))
        with pytest.raises(InputShapeError):
            enc.encode(torch.zeros(1, 2, 64, 64), Branch.MOTION)


class TestTinyEncoder:
    @pytest.mark.parametrize("size", [64, 96, 128])
    def test_level_strides(self, size):
        enc = DualStreamEncoder(BackboneConfig(name="tiny", width=8))
        pyramid = enc.encode(torch.randn(2, 3, size, size), Branch.APPEARANCE)
        for i, channels in zip(LEVELS, (8, 16, 32, 64)):
            assert pyramid[i].shape == (2, channels, size >> i, size >> i)

    def test_level_one_is_half_resolution(self):
        feats = TinyEncoder(width=8)(torch.randn(1, 3, 64, 64))
        assert feats[1].shape[-2:] == (32, 32)

    def test_deterministic_given_seed(self):
        x = torch.randn(1, 3, 64, 64)
        outs = []
        for _ in range(2):
            torch.manual_seed(7)
            enc = TinyEncoder(width=8).eval()
            outs.append(enc(x)[5])
        assert torch.equal(outs[0], outs[1])


class TestDualStream:
    def test_streams_do_not_share_parameters(self):
        enc = DualStreamEncoder(BackboneConfig(name="tiny"))
        a = {id(p) for p in enc.appearance.parameters()}
        m = {id(p) for p in enc.motion.parameters()}
        assert a and m and not (a & m)

    def test_updating_one_stream_leaves_other(self):
        enc = DualStreamEncoder(BackboneConfig(name="tiny")).eval()
        x = torch.randn(1, 3, 64, 64)
        before = enc.encode(x, Branch.MOTION)[5].clone()
        with torch.no_grad():
            for p in enc.appearance.parameters():
                p.add_(1.0)
        assert torch.equal(enc.encode(x, Branch.MOTION)[5], before)

    def test_streams_differ_on_identical_input(self):
        torch.manual_seed(0)
        enc = DualStreamEncoder(BackboneConfig(name="tiny")).eval()
        x = torch.randn(1, 3, 64, 64)
        with torch.no_grad():
            app, mot = enc.encode(x, Branch.APPEARANCE), enc.encode(x, Branch.MOTION)
        for i in LEVELS:
            assert not torch.allclose(app[i], mot[i])

    def test_branch_other(self):
        assert Branch.APPEARANCE.other is Branch.MOTION
        assert Branch.MOTION.other is Branch.APPEARANCE


class TestResNet:
    def test_level_channels_and_random_init_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="psnet.backbone"):
            enc = ResNetEncoder(pretrained_path=None).eval()
        assert "random init" in caplog.text
        with torch.no_grad():
            feats = enc(torch.randn(1, 3, 64, 64))
        for i, channels in zip(LEVELS, BackboneConfig().level_channels()):
            assert feats[i].shape == (1, channels, 64 >> i, 64 >> i)


class TestProjection:
    def test_projects_every_level(self, make_pyramid):
        raw = FeaturePyramid(
            {i: torch.randn(2, c, 64 >> i, 64 >> i) for i, c in zip(LEVELS, (8, 16, 32, 64))},
            Branch.APPEARANCE,
        )
        out = PyramidProjection((8, 16, 32, 64), 16)(raw)
        assert out.projected
        assert out.channels() == (16, 16, 16, 16)
        out.check_strides((64, 64))

    def test_channel_mismatch(self, make_pyramid):
        proj = PyramidProjection((8, 16, 32, 64), 16)
        with pytest.raises(InputShapeError):
            proj(make_pyramid(channels=8))

    def test_missing_level(self):
        with pytest.raises(InputShapeError):
            FeaturePyramid({2: torch.zeros(1, 1, 4, 4)}, Branch.APPEARANCE)
