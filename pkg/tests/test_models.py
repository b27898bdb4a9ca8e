"""Network assembly: shapes, parameter budgets, baseline variant."""

import numpy as np
import pytest

from polyrestore.autodiff import TensorNode
from polyrestore.models import (DiscriminatorConfig, GeneratorConfig,
                                build_discriminator, build_generator)


def _zero_image(cfg):
    h, w = cfg.image_size
    return TensorNode(np.zeros((1, cfg.in_channels, h, w), dtype=np.float32))


class TestGenerator:
    def setup_method(self):
        self.cfg = GeneratorConfig(q=1, base_channels=16, image_size=(64, 64))
        self.gen = build_generator(self.cfg, np.random.default_rng(0))

    def test_output_shapes(self):
        out = self.gen.forward(_zero_image(self.cfg))
        assert out.restored.shape == (1, 1, 64, 64)
        assert out.class_probs.shape == (1, 2)

    def test_zero_image_outputs_finite_probs_on_simplex(self):
        out = self.gen.forward(_zero_image(self.cfg))
        assert np.all(np.isfinite(out.restored.values))
        assert np.all(out.class_probs.values >= 0)
        assert out.class_probs.values.sum() == pytest.approx(1.0, abs=1e-6)

    def test_restored_bounded_by_tanh(self):
        rng = np.random.default_rng(1)
        img = TensorNode(rng.uniform(-1, 1, (2, 1, 64, 64)).astype(np.float32))
        out = self.gen.forward(img)
        assert out.restored.values.min() >= -1.0
        assert out.restored.values.max() <= 1.0

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(2)
        img = TensorNode(rng.uniform(-1, 1, (1, 1, 64, 64)).astype(np.float32))
        a = self.gen.forward(img)
        b = self.gen.forward(img)
        np.testing.assert_array_equal(a.restored.values, b.restored.values)
        np.testing.assert_array_equal(a.class_probs.values, b.class_probs.values)

    def test_wrong_size_rejected(self):
        with pytest.raises(ValueError, match="expects"):
            self.gen.forward(TensorNode(np.zeros((1, 1, 32, 32), dtype=np.float32)))
        with pytest.raises(ValueError, match="expects"):
            self.gen.forward(TensorNode(np.zeros((1, 3, 64, 64), dtype=np.float32)))

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            GeneratorConfig(image_size=(30, 30))
        with pytest.raises(ValueError, match="classes"):
            GeneratorConfig(num_classes=1)


class TestParameterBudget:
    def _count(self, q):
        cfg = GeneratorConfig(q=q, base_channels=64, image_size=(64, 64))
        return build_generator(cfg, np.random.default_rng(0)).parameter_count()

    def test_default_plan_near_budget(self):
        # published compact-model budget for the first-order configuration
        assert self._count(1) == pytest.approx(0.299e6, rel=0.15)

    def test_exactly_linear_in_q(self):
        c1, c3, c5 = self._count(1), self._count(3), self._count(5)
        slope = (c3 - c1) // 2
        assert c3 == c1 + 2 * slope
        assert c5 == c1 + 4 * slope  # zero residual on the linear fit

    def test_growth_ratio_tracks_published_budgets(self):
        # published budgets: 0.303M / 0.907M / 1.510M for orders 1 / 3 / 5
        c1, c3, c5 = self._count(1), self._count(3), self._count(5)
        assert c3 / c1 == pytest.approx(0.907 / 0.303, rel=0.02)
        assert c5 / c1 == pytest.approx(1.510 / 0.303, rel=0.02)

    def test_count_equals_brute_force_sum(self):
        gen = build_generator(GeneratorConfig(q=3, base_channels=16), np.random.default_rng(0))
        brute = sum(int(np.prod(t.values.shape)) for t in gen.named_parameters().values())
        assert gen.parameter_count() == brute


class TestDiscriminator:
    def test_mask_shrinks_by_three_stride2_stages(self):
        cfg = DiscriminatorConfig(q=1, base_channels=8)
        disc = build_discriminator(cfg, np.random.default_rng(0))
        mask = disc.forward(TensorNode(np.zeros((1, 1, 64, 64), dtype=np.float32)))
        assert mask.shape == (1, 1, 8, 8)

    def test_constant_weights_give_constant_mask(self):
        cfg = DiscriminatorConfig(q=1, base_channels=4)
        disc = build_discriminator(cfg, np.random.default_rng(0))
        for t in disc.parameters():
            t.values[...] = 0.0
        disc.proj.biases.values[...] = 0.37
        mask = disc.forward(TensorNode(np.random.default_rng(1)
                                       .uniform(-1, 1, (1, 1, 32, 32)).astype(np.float32)))
        np.testing.assert_allclose(mask.values, 0.37, atol=1e-6)

    def test_mask_is_unbounded_real(self):
        # no squashing on the mask head: scaling the projection scales the mask
        cfg = DiscriminatorConfig(q=1, base_channels=4)
        disc = build_discriminator(cfg, np.random.default_rng(2))
        img = TensorNode(np.random.default_rng(3).uniform(-1, 1, (1, 1, 32, 32)).astype(np.float32))
        base = disc.forward(img).values
        disc.proj.weights.values[...] *= 100.0
        disc.proj.biases.values[...] *= 100.0
        big = disc.forward(img).values
        np.testing.assert_allclose(big, base * 100.0, rtol=1e-4)
        assert np.abs(big).max() > 1.0


class TestPlainConvVariant:
    def test_same_topology_with_relu(self):
        op = build_generator(GeneratorConfig(q=1, base_channels=16), np.random.default_rng(0))
        cnn = build_generator(GeneratorConfig(q=5, base_channels=16, use_operational=False),
                              np.random.default_rng(0))
        # q collapses to 1, so the two parameter sets line up exactly
        a = op.named_parameters()
        b = cnn.named_parameters()
        assert list(a) == list(b)
        assert all(a[k].values.shape == b[k].values.shape for k in a)

    def test_relu_activations_inside(self):
        # a plain-conv generator produces non-negative bottleneck activations,
        # visible through strictly non-negative pooled features
        cfg = GeneratorConfig(q=1, base_channels=8, use_operational=False)
        gen = build_generator(cfg, np.random.default_rng(1))
        img = TensorNode(np.random.default_rng(2).uniform(-1, 1, (1, 1, 64, 64))
                         .astype(np.float32))
        import polyrestore.autodiff as ad
        from polyrestore.layers import operational_conv2d
        h = operational_conv2d(img, gen.enc1, stride=2)
        h = gen._act(ad.instance_norm(h, gen.norm1.gain, gen.norm1.shift))
        assert h.values.min() >= 0.0

    def test_restoration_head_still_tanh_bounded(self):
        cfg = GeneratorConfig(q=1, base_channels=8, use_operational=False)
        gen = build_generator(cfg, np.random.default_rng(3))
        img = TensorNode(np.random.default_rng(4).uniform(-1, 1, (1, 1, 64, 64))
                         .astype(np.float32))
        out = gen.forward(img)
        assert out.restored.values.min() >= -1.0
        assert out.restored.values.max() <= 1.0
