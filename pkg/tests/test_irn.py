import numpy as np
import pytest
import torch
from torch import nn

from relight.encoder import TwoStreamEncoder
from relight.irn import (
    FABlock,
    FAKernelSet,
    FALayer,
    IRN,
    ResidualGroup,
    center_crop,
    dynamic_depthwise_conv,
    enhance,
    enhance_tensor,
)


def depthwise_conv_oracle(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-sample, per-channel 3x3 cross-correlation with reflect padding."""
    batch, channels, height, width = x.shape
    out = np.zeros_like(x)
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    for b in range(batch):
        for c in range(channels):
            for i in range(height):
                for j in range(width):
                    acc = 0.0
                    for di in range(3):
                        for dj in range(3):
                            acc += padded[b, c, i + di, j + dj] * w[b, c, 0, di, dj]
                    out[b, c, i, j] = acc
    return out


def zero_fa_layer(layer: FALayer) -> None:
    with torch.no_grad():
        layer.map.weight.zero_()
        layer.map.bias.zero_()


def set_identity_fa_layer(layer: FALayer) -> None:
    """Bias-only FA layer emitting v = ones and the center-one kernel."""
    with torch.no_grad():
        layer.map.weight.zero_()
        layer.map.bias.zero_()
        c = layer.channels
        for ch in range(c):
            layer.map.bias[9 * ch + 4] = 1.0
        layer.map.bias[9 * c:] = 1.0


class TestFALayer:
    def test_zero_feature_returns_the_bias(self):
        layer = FALayer(feature_dim=8, channels=2)
        with torch.no_grad():
            layer.map.weight.zero_()
            layer.map.bias.copy_(torch.arange(20, dtype=torch.float32) / 10)
        ks = layer.kernel_set(torch.zeros(8))
        expected_w = (torch.arange(18, dtype=torch.float32) / 10).reshape(2, 3, 3)
        assert torch.equal(ks.w.permute(2, 0, 1), expected_w)
        assert torch.equal(ks.v, torch.tensor([1.8, 1.9]))

    def test_kernel_shapes_at_full_scale(self):
        layer = FALayer(feature_dim=256, channels=64)
        ks = layer.kernel_set(torch.randn(256))
        assert ks.w.shape == (3, 3, 64)
        assert ks.v.shape == (64,)

    def test_determinism(self):
        layer = FALayer(feature_dim=16, channels=4)
        feat = torch.randn(16)
        a = layer.kernel_set(feat)
        b = layer.kernel_set(feat)
        assert torch.equal(a.w, b.w)
        assert torch.equal(a.v, b.v)

    def test_batched_forward_matches_kernel_set(self):
        layer = FALayer(feature_dim=16, channels=4)
        feats = torch.randn(3, 16)
        w, v = layer(feats)
        assert w.shape == (3, 4, 1, 3, 3)
        assert v.shape == (3, 4, 1, 1)
        # Batched and single-vector paths may take different BLAS routes,
        # so compare the layouts with a tight tolerance, not bitwise.
        for b in range(3):
            ks = layer.kernel_set(feats[b])
            for c in range(4):
                assert torch.allclose(w[b, c, 0], ks.w[:, :, c], atol=1e-6)
            assert torch.allclose(v[b, :, 0, 0], ks.v, atol=1e-6)

    def test_dimension_mismatch_rejected(self):
        layer = FALayer(feature_dim=16, channels=4)
        with pytest.raises(ValueError, match="feature"):
            layer(torch.randn(2, 8))
        with pytest.raises(ValueError, match="feature"):
            layer.kernel_set(torch.randn(8))

    def test_kernel_set_validates_shapes(self):
        with pytest.raises(ValueError, match="3x3xC"):
            FAKernelSet(w=torch.zeros(3, 4, 2), v=torch.zeros(2))
        with pytest.raises(ValueError, match="length"):
            FAKernelSet(w=torch.zeros(3, 3, 2), v=torch.zeros(3))


class TestDynamicDepthwiseConv:
    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(61)
        x = rng.normal(size=(2, 3, 5, 6))
        w = rng.normal(size=(2, 3, 1, 3, 3))
        out = dynamic_depthwise_conv(torch.from_numpy(x), torch.from_numpy(w))
        assert np.abs(out.numpy() - depthwise_conv_oracle(x, w)).max() < 1e-12

    def test_kernels_stay_per_sample(self):
        # Sample 0 gets the identity kernel, sample 1 a doubling kernel.
        x = torch.randn(2, 2, 4, 4, dtype=torch.double)
        w = torch.zeros(2, 2, 1, 3, 3, dtype=torch.double)
        w[0, :, 0, 1, 1] = 1.0
        w[1, :, 0, 1, 1] = 2.0
        out = dynamic_depthwise_conv(x, w)
        assert torch.allclose(out[0], x[0])
        assert torch.allclose(out[1], 2 * x[1])


class TestFABlock:
    def test_zeroed_fa_layers_annihilate_both_branches(self):
        torch.manual_seed(0)
        block = FABlock(feature_dim=8, channels=4)
        zero_fa_layer(block.fa1)
        zero_fa_layer(block.fa2)
        probe = {}
        x = torch.randn(2, 4, 8, 8)
        out = block(x, torch.randn(2, 8), probe=probe)
        for stage in ("stage1", "stage2"):
            assert torch.equal(probe[stage]["z1"], torch.zeros_like(x))
            assert torch.equal(probe[stage]["z2"], torch.zeros_like(x))
        # Only the convolution biases survive, so the output is constant
        # over batch and space.
        expected = block.act(block.conv2(torch.zeros(1, 4, 8, 8)))
        assert torch.allclose(out, expected.expand_as(out))

    def test_identity_kernel_and_unit_modulation_double_the_input(self):
        torch.manual_seed(1)
        block = FABlock(feature_dim=8, channels=4)
        set_identity_fa_layer(block.fa1)
        probe = {}
        x = torch.randn(2, 4, 8, 8, dtype=torch.double)
        block.double()(x, torch.randn(2, 8, dtype=torch.double), probe=probe)
        z1, z2 = probe["stage1"]["z1"], probe["stage1"]["z2"]
        assert torch.allclose(z1 + z2, 2 * x, atol=1e-12)

    def test_shape_preservation(self):
        block = FABlock(feature_dim=8, channels=4)
        out = block(torch.randn(1, 4, 8, 8), torch.randn(1, 8))
        assert out.shape == (1, 4, 8, 8)

    def test_channel_mismatch_rejected(self):
        block = FABlock(feature_dim=8, channels=4)
        with pytest.raises(ValueError, match="channels"):
            block(torch.randn(1, 3, 8, 8), torch.randn(1, 8))

    def test_scaling_v_scales_z1_per_channel(self):
        torch.manual_seed(2)
        block = FABlock(feature_dim=8, channels=4)
        x = torch.randn(1, 4, 6, 6)
        feat = torch.randn(1, 8)
        probe = {}
        block(x, feat, probe=probe)
        base = probe["stage1"]["z1"]

        scale = 2.5
        with torch.no_grad():
            block.fa1.map.weight[9 * 4 + 2] *= scale
            block.fa1.map.bias[9 * 4 + 2] *= scale
        probe = {}
        block(x, feat, probe=probe)
        scaled = probe["stage1"]["z1"]
        assert torch.allclose(scaled[:, 2], scale * base[:, 2])
        for c in (0, 1, 3):
            assert torch.equal(scaled[:, c], base[:, c])


class TestResidualGroup:
    def test_zeroed_group_is_the_identity(self):
        group = ResidualGroup(feature_dim=8, channels=4)
        with torch.no_grad():
            for p in group.parameters():
                p.zero_()
        x = torch.randn(2, 4, 8, 8)
        assert torch.equal(group(x, torch.randn(2, 8)), x)

    def test_shape_preservation_at_width_64(self):
        torch.manual_seed(3)
        group = ResidualGroup(feature_dim=256, channels=64)
        out = group(torch.randn(1, 64, 48, 48), torch.randn(1, 256))
        assert out.shape == (1, 64, 48, 48)

    def test_nonlinearity_breaks_homogeneity(self):
        torch.manual_seed(4)
        group = ResidualGroup(feature_dim=8, channels=4)
        x = torch.randn(1, 4, 8, 8)
        feat = torch.randn(1, 8)
        doubled = group(2 * x, feat)
        assert (doubled - 2 * group(x, feat)).abs().max() > 1e-3


class TestIRN:
    def test_fresh_network_is_the_pixel_exact_identity(self):
        torch.manual_seed(5)
        irn = IRN(feature_dim=16, channels=8)
        low = torch.rand(2, 3, 20, 24)
        out = irn(low, torch.randn(2, 16))
        assert torch.equal(out, low)

    def test_all_zero_parameters_are_the_identity(self):
        irn = IRN(feature_dim=16, channels=8)
        with torch.no_grad():
            for p in irn.parameters():
                p.zero_()
        low = torch.rand(1, 3, 16, 16)
        assert torch.equal(irn(low, torch.zeros(1, 16)), low)

    def test_full_frame_shape(self):
        torch.manual_seed(6)
        irn = IRN(feature_dim=16, channels=4)
        out = irn(torch.rand(1, 3, 400, 600), torch.randn(1, 16))
        assert out.shape == (1, 3, 400, 600)

    def test_output_range_is_clamped(self):
        torch.manual_seed(7)
        irn = IRN(feature_dim=16, channels=4)
        with torch.no_grad():
            for p in irn.parameters():
                p.normal_(0.0, 0.2)
        out = irn(torch.rand(1, 3, 16, 16), torch.randn(1, 16))
        assert out.min() >= 0.0
        assert out.max() <= 1.0

    @pytest.mark.parametrize("stage,mutate", [
        ("head", lambda irn: irn.head.weight.fill_(float("inf"))),
        ("group2", lambda irn: irn.groups[1].conv.weight.fill_(float("nan"))),
        ("tail", lambda irn: irn.tail.bias.fill_(float("inf"))),
    ])
    def test_non_finite_activations_name_the_stage(self, stage, mutate):
        torch.manual_seed(8)
        irn = IRN(feature_dim=16, channels=4)
        with torch.no_grad():
            mutate(irn)
        with pytest.raises(RuntimeError, match=stage):
            irn(torch.rand(1, 3, 16, 16), torch.randn(1, 16))

    def test_input_validation(self):
        irn = IRN(feature_dim=16, channels=4)
        with pytest.raises(ValueError, match="images"):
            irn(torch.rand(1, 4, 16, 16), torch.randn(1, 16))
        with pytest.raises(ValueError, match="features"):
            irn(torch.rand(1, 3, 16, 16), torch.randn(1, 8))

    def test_determinism(self):
        torch.manual_seed(9)
        irn = IRN(feature_dim=16, channels=4)
        with torch.no_grad():
            for p in irn.parameters():
                p.normal_(0.0, 0.05)
        low = torch.rand(1, 3, 16, 16)
        feat = torch.randn(1, 16)
        assert torch.equal(irn(low, feat), irn(low, feat))


class TestEnhance:
    def test_center_crop_window(self):
        batch = torch.arange(2 * 3 * 8 * 10, dtype=torch.float32).reshape(2, 3, 8, 10)
        crop = center_crop(batch, 4)
        assert torch.equal(crop, batch[:, :, 2:6, 3:7])
        with pytest.raises(ValueError, match="crop"):
            center_crop(batch, 12)

    def test_full_image_path_equals_patch_path_when_sizes_match(self):
        torch.manual_seed(10)
        encoder = TwoStreamEncoder(embed_dim=8)
        irn = IRN(feature_dim=16, channels=4)
        with torch.no_grad():
            for p in irn.parameters():
                p.normal_(0.0, 0.05)
        low = torch.rand(1, 3, 64, 64)
        via_enhance = enhance_tensor(low, encoder, irn, patch_size=64)
        direct = irn(low, encoder(low))
        assert torch.equal(via_enhance, direct)

    def test_non_square_image_uses_a_center_crop_for_the_feature(self):
        torch.manual_seed(11)
        encoder = TwoStreamEncoder(embed_dim=8)
        irn = IRN(feature_dim=16, channels=4)
        low = torch.rand(1, 3, 64, 96)
        out = enhance_tensor(low, encoder, irn, patch_size=192)
        assert out.shape == (1, 3, 64, 96)
        direct = irn(low, encoder(center_crop(low, 64)))
        assert torch.equal(out, direct)

    def test_numpy_roundtrip_and_black_input(self):
        torch.manual_seed(12)
        encoder = TwoStreamEncoder(embed_dim=8)
        irn = IRN(feature_dim=16, channels=4)
        image = np.zeros((64, 80, 3), dtype=np.float32)
        out = enhance(image, encoder, irn, patch_size=64)
        assert out.shape == (64, 80, 3)
        assert np.isfinite(out).all()


class TestEndToEndGradients:
    def test_parameter_gradients_match_finite_differences(self):
        torch.manual_seed(13)
        irn = IRN(feature_dim=8, channels=4).double()
        with torch.no_grad():
            for p in irn.parameters():
                p.normal_(0.0, 0.05)
        rng = np.random.default_rng(67)
        low = torch.from_numpy(rng.uniform(0.35, 0.65, size=(1, 3, 16, 16)))
        target = torch.from_numpy(rng.uniform(0.2, 0.8, size=(1, 3, 16, 16)))
        feat = torch.from_numpy(rng.normal(size=(1, 8)))

        def loss_value() -> float:
            with torch.no_grad():
                return float((irn(low, feat) - target).abs().mean())

        loss = (irn(low, feat) - target).abs().mean()
        irn.zero_grad()
        loss.backward()

        h = 1e-5
        worst = 0.0
        for param in irn.parameters():
            flat = param.detach().reshape(-1)
            grad = param.grad.reshape(-1)
            count = min(6, flat.numel())
            picks = rng.choice(flat.numel(), size=count, replace=False)
            for idx in picks:
                idx = int(idx)
                orig = float(flat[idx])
                with torch.no_grad():
                    flat[idx] = orig + h
                up = loss_value()
                with torch.no_grad():
                    flat[idx] = orig - h
                down = loss_value()
                with torch.no_grad():
                    flat[idx] = orig
                fd = (up - down) / (2 * h)
                g = float(grad[idx])
                if abs(fd) < 1e-9 and abs(g) < 1e-9:
                    continue
                worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-7))
        assert worst < 1e-3
