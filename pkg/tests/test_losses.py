import math

import pytest
import torch

from psnet.backbone import LEVELS
from psnet.exceptions import ContractError, InputShapeError, NonFiniteLossError
from psnet.losses import (
    bce_loss,
    branch_loss,
    downsample_gt,
    saliency_loss,
    ssim_loss,
    stream_loss,
    total_loss,
)
from psnet.network import PSNet, StreamOutput


def binary_gt(size=32, batch=2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return (torch.rand(batch, 1, size, size, generator=gen) > 0.5).float()


class TestBce:
    def test_half_prediction_is_ln2(self):
        gt = binary_gt()
        assert bce_loss(torch.full_like(gt, 0.5), gt).item() == pytest.approx(math.log(2), abs=1e-6)

    def test_saturated_prediction_is_finite(self):
        gt = binary_gt()
        assert math.isfinite(bce_loss(1 - gt, gt).item())

    def test_shape_mismatch(self):
        with pytest.raises(InputShapeError):
            bce_loss(torch.rand(1, 1, 8, 8), torch.rand(1, 1, 4, 4))


class TestSsim:
    def test_identical_maps(self):
        x = torch.rand(2, 1, 32, 32, dtype=torch.float64)
        assert abs(ssim_loss(x, x).item()) < 1e-7

    def test_inverted_checkerboard_exceeds_one(self):
        idx = torch.arange(32)
        board = ((idx[:, None] + idx[None, :]) % 2).float()[None, None]
        assert ssim_loss(board, 1 - board).item() > 1

    def test_maps_smaller_than_window(self):
        x = torch.rand(1, 1, 8, 8, dtype=torch.float64)
        assert abs(ssim_loss(x, x).item()) < 1e-7
        assert ssim_loss(x, 1 - x).item() > 0

    @pytest.mark.parametrize("size", [1, 4])
    def test_tiny_maps_are_reflection_padded(self, size):
        x = torch.rand(1, 1, size, size, dtype=torch.float64)
        assert abs(ssim_loss(x, x).item()) < 1e-7
        if size > 1:
            assert ssim_loss(x, 1 - x).item() > 0

    def test_constant_tiny_maps(self):
        # constant maps reduce to the luminance term
        a, b, c1 = 0.2, 0.6, 0.01**2
        pred = torch.full((1, 1, 4, 4), a, dtype=torch.float64)
        gt = torch.full((1, 1, 4, 4), b, dtype=torch.float64)
        expected = 1 - (2 * a * b + c1) / (a * a + b * b + c1)
        assert ssim_loss(pred, gt).item() == pytest.approx(expected, abs=1e-6)

    def test_tiny_maps_have_gradients(self):
        pred = torch.rand(2, 1, 4, 4, dtype=torch.float64, requires_grad=True)
        gt = (torch.rand(2, 1, 4, 4, dtype=torch.float64) > 0.5).double()
        ssim_loss(pred, gt).backward()
        assert torch.isfinite(pred.grad).all() and pred.grad.abs().sum() > 0

    def test_needs_single_channel(self):
        with pytest.raises(InputShapeError):
            ssim_loss(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16))

    def test_saliency_loss_is_sum(self):
        pred, gt = torch.rand(2, 1, 32, 32), binary_gt()
        total = saliency_loss(pred, gt)
        assert total.item() == pytest.approx((bce_loss(pred, gt) + ssim_loss(pred, gt)).item())


class TestDownsample:
    def test_rebinarized(self):
        small = downsample_gt(binary_gt(size=32), (8, 8))
        assert small.shape == (2, 1, 8, 8)
        assert set(small.unique().tolist()) <= {0.0, 1.0}

    def test_block_majority(self):
        gt = torch.zeros(1, 1, 4, 4)
        gt[..., :2, :2] = 1
        gt[..., 0, 2] = 1
        assert downsample_gt(gt, (2, 2))[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


class TestBranchLoss:
    def masks(self, size=64, value=0.5):
        return {i: torch.full((2, 1, size >> i, size >> i), value) for i in LEVELS}

    def test_terms_add_up(self):
        gt = binary_gt(size=64)
        s = torch.rand(2, 1, 16, 16)
        mask5 = torch.full((2, 1, 2, 2), 0.5)
        full = branch_loss(s, mask5, self.masks(), gt, 0.6, 0.4)
        s_up = torch.nn.functional.interpolate(s, size=(64, 64), mode="bilinear",
                                               align_corners=False)
        expected = saliency_loss(s_up, gt) + 0.6 * math.log(2) + 4 * 0.4 * math.log(2)
        assert full.item() == pytest.approx(expected.item(), rel=1e-5)

    def test_without_gdr_mask(self):
        gt = binary_gt(size=64)
        s = torch.rand(2, 1, 16, 16)
        mask5 = torch.full((2, 1, 2, 2), 0.5)
        with_mask = branch_loss(s, mask5, self.masks(), gt)
        without = branch_loss(s, None, self.masks(), gt)
        assert with_mask.item() - without.item() == pytest.approx(0.6 * math.log(2), rel=1e-5)

    def test_missing_level(self):
        masks = self.masks()
        del masks[3]
        with pytest.raises(ContractError, match="3"):
            branch_loss(torch.rand(2, 1, 16, 16), None, masks, binary_gt(size=64))


class TestTotalLoss:
    @pytest.fixture
    def model_and_batch(self, make_config):
        torch.manual_seed(0)
        cfg = make_config()
        model = PSNet(cfg.model)
        gen = torch.Generator().manual_seed(1)
        rgb = torch.randn(2, 3, 64, 64, generator=gen)
        flow = torch.randn(2, 3, 64, 64, generator=gen)
        return model, rgb, flow, binary_gt(size=64)

    def test_additivity(self, model_and_batch):
        model, rgb, flow, gt = model_and_batch
        bundle = total_loss(model(rgb, flow), gt)
        assert torch.equal(bundle.l_total, bundle.l_sal_final + bundle.l_appearance + bundle.l_motion)
        assert sum(bundle.terms.values()) == pytest.approx(bundle.l_total.item(), rel=1e-5)

    def test_term_names(self, model_and_batch):
        model, rgb, flow, gt = model_and_batch
        terms = total_loss(model(rgb, flow), gt).terms
        assert "sal_final" in terms
        for branch in ("appearance", "motion"):
            assert f"{branch}.sal" in terms and f"{branch}.mask5" in terms
            assert all(f"{branch}.mask_s{i}" in terms for i in LEVELS)

    def test_log_fields_sorted(self, model_and_batch):
        model, rgb, flow, gt = model_and_batch
        fields = total_loss(model(rgb, flow), gt).log_fields().split()
        assert fields[0].startswith("l_total=")
        names = [f.split("=")[0] for f in fields[1:]]
        assert names == sorted(names)

    def test_nan_names_term(self):
        gt = binary_gt(size=64)
        out = StreamOutput(saliency=torch.full((2, 1, 64, 64), float("nan")),
                           prediction=torch.zeros(2, 1, 16, 16))
        with pytest.raises(NonFiniteLossError) as info:
            stream_loss(out, gt, "appearance")
        assert info.value.term == "appearance.sal"

    def test_perfect_prediction_is_small(self):
        gt = torch.zeros(1, 1, 32, 32)
        gt[..., 8:24, 8:24] = 1
        assert saliency_loss(gt.clone(), gt).item() < 1e-4


class TestFiniteDifferences:
    def test_parameter_gradients(self, make_config):
        torch.manual_seed(0)
        cfg = make_config()
        model = PSNet(cfg.model).double().eval()
        gen = torch.Generator().manual_seed(2)
        rgb = torch.randn(2, 3, 64, 64, generator=gen, dtype=torch.float64)
        flow = torch.randn(2, 3, 64, 64, generator=gen, dtype=torch.float64)
        gt = binary_gt(size=64).double()

        def loss() -> torch.Tensor:
            return total_loss(model(rgb, flow), gt, cfg.model.lambda1, cfg.model.lambda2).l_total

        model.zero_grad()
        loss().backward()
        params = [p for p in model.parameters() if p.requires_grad]
        picks = []
        for _ in range(30):
            p = params[int(torch.randint(len(params), (1,), generator=gen))]
            picks.append((p, int(torch.randint(p.numel(), (1,), generator=gen))))

        h = 1e-5
        good = 0
        with torch.no_grad():
            for p, idx in picks:
                flat = p.view(-1)
                analytic = p.grad.view(-1)[idx].item()
                orig = flat[idx].item()
                flat[idx] = orig + h
                up = loss().item()
                flat[idx] = orig - h
                down = loss().item()
                flat[idx] = orig
                numeric = (up - down) / (2 * h)
                scale = max(abs(analytic), abs(numeric))
                if abs(analytic - numeric) <= 1e-3 * scale + 1e-8:
                    good += 1
        assert good >= 29
