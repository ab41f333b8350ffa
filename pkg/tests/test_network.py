import pytest
import torch

from psnet.backbone import LEVELS, Branch
from psnet.config import Ablation
from psnet.exceptions import InputShapeError
from psnet.network import PSNet, PSNetOutput, SingleStreamNet, count_parameters


def inputs(size, batch=1, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return (
        torch.randn(batch, 3, size, size, generator=gen),
        torch.randn(batch, 3, size, size, generator=gen),
    )


class TestPSNet:
    @pytest.mark.parametrize("size", [64, 96, 128])
    def test_output_shapes(self, make_config, size):
        model = PSNet(make_config(size=size).model).eval()
        with torch.no_grad():
            out = model(*inputs(size, batch=2))
        assert isinstance(out, PSNetOutput)
        assert out.saliency.shape == (2, 1, size, size)
        for branch in Branch:
            masks = out.branch(branch).importance_masks
            assert sorted(masks) == list(LEVELS)
            for i, mask in masks.items():
                assert mask.shape[-1] == size >> i

    def test_maps_are_probabilities(self, make_config):
        model = PSNet(make_config().model).eval()
        with torch.no_grad():
            out = model(*inputs(64))
        for t in (out.saliency, out.appearance.saliency, out.motion.saliency):
            assert t.min() > 0 and t.max() < 1
        for mask in out.appearance.importance_masks.values():
            assert mask.min() > 0 and mask.max() < 1

    def test_masks_strictly_inside_unit_interval(self, make_config):
        model = PSNet(make_config().model).eval()
        gen = torch.Generator().manual_seed(0)
        for trial in range(50):
            scale = (-1) ** trial * float(10 ** (3 * trial / 49))
            rgb = torch.randn(1, 3, 64, 64, generator=gen) * scale
            flow = torch.randn(1, 3, 64, 64, generator=gen) * scale
            with torch.no_grad():
                out = model(rgb, flow)
            maps = {
                "pre_s": out.fusion.pre_s,
                "saliency": out.saliency,
                "s_a": out.fusion.s_a,
                "s_m": out.fusion.s_m,
                "weight": out.fusion.weight,
            }
            for branch in Branch:
                result = out.branch(branch)
                maps[f"{branch.value}.mask5"] = result.gdr.mask5
                for i, level in result.levels.items():
                    maps[f"{branch.value}.mask_s{i}"] = level.importance_mask
                    maps[f"{branch.value}.mask_r{i}"] = level.refinement_mask
            for name, t in maps.items():
                assert torch.isfinite(t).all(), name
                assert ((t > 0) & (t < 1)).all(), f"{name} at scale {scale:.3g}"

    def test_input_shapes_must_match(self, make_config):
        model = PSNet(make_config().model)
        rgb, _ = inputs(64)
        flow, _ = inputs(96)
        with pytest.raises(InputShapeError):
            model(rgb, flow)

    def test_input_not_divisible_by_32(self, make_config):
        model = PSNet(make_config().model)
        with pytest.raises(InputShapeError):
            model(*inputs(70))

    @pytest.mark.parametrize("ablation", [a.value for a in Ablation])
    def test_every_ablation_runs(self, make_config, ablation):
        model = PSNet(make_config(ablation=ablation).model).eval()
        with torch.no_grad():
            out = model(*inputs(64))
        assert out.saliency.shape == (1, 1, 64, 64)
        assert (out.appearance.gdr is None) != Ablation(ablation).uses_gdr

    def test_importance_weight_only_for_weighted_fusion(self, make_config):
        with torch.no_grad():
            full = PSNet(make_config().model).eval()(*inputs(64))
            added = PSNet(make_config(ablation="parallel-A").model).eval()(*inputs(64))
        assert full.fusion.weight is not None
        assert full.fusion.weight.min() > 0 and full.fusion.weight.max() < 1
        assert added.fusion.weight is None

    def test_stream_modules_match_single_stream_names(self, make_config):
        cfg = make_config().model
        model = PSNet(cfg)
        single = SingleStreamNet(cfg, Branch.MOTION)
        modules = model.stream_modules(Branch.MOTION)
        assert set(modules) == {"encoder", "projection", "gdr", "head"}
        for name, module in modules.items():
            theirs = getattr(single, name).state_dict()
            assert module.state_dict().keys() == theirs.keys()


class TestSymmetry:
    def test_branches_share_no_parameters(self, make_config):
        model = PSNet(make_config().model)
        app, mot = model.branches["appearance"], model.branches["motion"]
        assert app.state_dict().keys() == mot.state_dict().keys()
        app_ptrs = {p.data_ptr() for p in app.parameters()}
        mot_ptrs = {p.data_ptr() for p in mot.parameters()}
        assert app_ptrs and not (app_ptrs & mot_ptrs)

    def test_swapping_roles_with_copied_weights(self, make_config):
        torch.manual_seed(0)
        model = PSNet(make_config().model).eval()
        model.encoders.motion.load_state_dict(model.encoders.appearance.state_dict())
        for modules in (model.projections, model.branches):
            modules["motion"].load_state_dict(modules["appearance"].state_dict())
        x, y = inputs(64, seed=3)
        with torch.no_grad():
            forward = model(x, y)
            swapped = model(y, x)
        torch.testing.assert_close(swapped.motion.saliency, forward.appearance.saliency)
        torch.testing.assert_close(swapped.appearance.saliency, forward.motion.saliency)
        for i in LEVELS:
            torch.testing.assert_close(
                swapped.motion.levels[i].importance_mask,
                forward.appearance.levels[i].importance_mask,
            )


class TestGradients:
    def test_decoder_output_reaches_both_encoders(self, make_config):
        torch.manual_seed(0)
        model = PSNet(make_config().model).eval()
        out = model(*inputs(64, batch=2))
        out.appearance.decoder_features.sum().backward()
        for branch in Branch:
            for name, p in model.encoders.encoder(branch).named_parameters():
                assert p.grad is not None, f"{branch.value}.{name}"
                assert p.grad.abs().sum() > 0, f"{branch.value}.{name}"


class TestSingleStreamNet:
    def test_output_shape(self, make_config):
        model = SingleStreamNet(make_config().model, Branch.APPEARANCE).eval()
        with torch.no_grad():
            out = model(inputs(64)[0])
        assert out.saliency.shape == (1, 1, 64, 64)
        assert out.prediction.shape[-1] == 16

    def test_without_gdr(self, make_config):
        model = SingleStreamNet(make_config(ablation="B").model, Branch.MOTION)
        assert model.gdr is None
        with torch.no_grad():
            assert model(inputs(64)[0]).gdr is None

    def test_rejects_odd_size(self, make_config):
        model = SingleStreamNet(make_config().model, Branch.APPEARANCE)
        with pytest.raises(InputShapeError, match="width 70"):
            model(torch.zeros(1, 3, 64, 70))


class TestCountParameters:
    def test_components_sum_to_total(self, make_config):
        counts = count_parameters(PSNet(make_config().model))
        total = counts.pop("total")
        assert sum(counts.values()) == total

    def test_single_stream_total_only(self, make_config):
        counts = count_parameters(SingleStreamNet(make_config().model, Branch.APPEARANCE))
        assert list(counts) == ["total"]

    def test_ablation_ordering(self, make_config):
        def total(ablation):
            return count_parameters(PSNet(make_config(ablation=ablation).model))["total"]

        full, base = total("full"), total("B")
        assert full > total("B+CRC") > total("B+GDR") > base
        assert full > total("parallel-A")
        assert total("parallel-IPF") == full
