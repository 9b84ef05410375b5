"""
Tests du UNet, des têtes de projection et des checkpoints.
"""
import unittest
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from torch.func import functional_call

# Ajouter le répertoire parent au path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.exceptions import ModelError
from src.core.models import ArchitectureSpec
from src.modeling.state import (aggregation_param_count, build_model, count_params, encode,
                                forward_segment, forward_with_features, inference_state,
                                load_checkpoint, predict, project, save_checkpoint)


def tiny_arch(**overrides) -> ArchitectureSpec:
    arch = ArchitectureSpec(depth=2, base_channels=4, input_shape=(16, 16), mlp_units=8,
                            groupnorm_groups=2)
    return replace(arch, **overrides)


def same_parameters(a, b) -> bool:
    return all(torch.equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


class TestBuildModel(unittest.TestCase):
    """Tests de build_model et du passage avant."""

    def setUp(self):
        self.arch = tiny_arch()
        self.state = build_model(self.arch, seed=0, with_head=True).eval()
        self.batch = torch.rand(3, 1, 16, 16)

    def test_deterministic_initialization(self):
        again = build_model(self.arch, seed=0, with_head=True)
        other = build_model(self.arch, seed=1, with_head=True)
        self.assertTrue(same_parameters(self.state, again))
        self.assertFalse(same_parameters(self.state, other))

    def test_backbone_shared_between_variants(self):
        baseline = build_model(self.arch, seed=0)
        self.assertTrue(same_parameters(baseline.backbone, self.state.backbone))

    def test_output_shape_and_range(self):
        p = forward_segment(self.state, self.batch)
        self.assertEqual(tuple(p.shape), (3, 4, 16, 16))
        self.assertTrue(torch.all((p > 0) & (p < 1)))
        zeros = forward_segment(self.state, np.zeros((2, 16, 16), dtype=np.float32))
        self.assertTrue(torch.isfinite(zeros).all())

    def test_bias_shift_drives_probabilities_to_one(self):
        with torch.no_grad():
            self.state.backbone.outc.bias.fill_(50.0)
            p = forward_segment(self.state, self.batch)
        self.assertGreater(float(p.min()), 0.999)

    def test_bottleneck_shape(self):
        state = build_model(tiny_arch(input_shape=(64, 64)), seed=0)
        h = encode(state, torch.rand(1, 1, 64, 64))
        self.assertEqual(tuple(h.shape), (1, 16, 16, 16))

    def test_encode_matches_forward_features(self):
        with torch.no_grad():
            p, h = forward_with_features(self.state, self.batch)
            self.assertTrue(torch.equal(h, encode(self.state, self.batch)))
            self.assertTrue(torch.equal(p, forward_segment(self.state, self.batch)))
            other = encode(self.state, torch.rand(3, 1, 16, 16))
        self.assertFalse(torch.equal(h, other))

    def test_eval_mode_is_deterministic(self):
        with torch.no_grad():
            first = forward_segment(self.state, self.batch)
            second = forward_segment(self.state, self.batch)
        self.assertTrue(torch.equal(first, second))

    def test_invalid_architecture(self):
        with self.assertRaises(ModelError):
            build_model(tiny_arch(input_shape=(18, 18)), seed=0)
        with self.assertRaises(ModelError):
            build_model(tiny_arch(depth=1), seed=0)

    def test_input_shape_mismatch(self):
        with self.assertRaises(ModelError):
            forward_segment(self.state, torch.rand(2, 1, 32, 32))


class TestHeads(unittest.TestCase):
    """Tests des têtes de projection et du prédicteur."""

    def setUp(self):
        generator = torch.Generator().manual_seed(0)
        self.h = torch.rand(2, 16, 4, 4, generator=generator)
        order = torch.randperm(16, generator=generator)
        self.permuted = self.h.flatten(2)[:, :, order].reshape(2, 16, 4, 4)

    def test_pool_head_is_permutation_invariant(self):
        state = build_model(tiny_arch(head_kind="pool"), seed=0, with_head=True).eval()
        with torch.no_grad():
            z = project(state, self.h)
            z_perm = project(state, self.permuted)
        self.assertEqual(tuple(z.shape), (2, 8))
        self.assertTrue(torch.allclose(z, z_perm, atol=1e-6))

    def test_channel_head_keeps_spatial_layout(self):
        state = build_model(tiny_arch(head_kind="ch"), seed=0, with_head=True).eval()
        with torch.no_grad():
            z = project(state, self.h)
            z_perm = project(state, self.permuted)
        self.assertEqual(tuple(z.shape), (2, 8))
        self.assertFalse(torch.allclose(z, z_perm, atol=1e-6))

    def test_default_projection_length(self):
        state = build_model(ArchitectureSpec(), seed=0, with_head=True)
        h = torch.rand(2, state.arch.bottleneck_channels, *state.arch.bottleneck_shape)
        self.assertEqual(project(state, h).shape[1], 128)

    def test_predictor(self):
        state = build_model(tiny_arch(), seed=0, with_head=True, with_predictor=True)
        z = torch.rand(4, 8)
        q = predict(state, z)
        self.assertEqual(q.shape, z.shape)
        q.sum().backward()
        grads = [p.grad for p in state.predictor.parameters()]
        self.assertTrue(all(g is not None and torch.any(g != 0) for g in grads))

    def test_missing_head_or_predictor(self):
        state = build_model(tiny_arch(), seed=0)
        with self.assertRaises(ModelError):
            project(state, self.h)
        with self.assertRaises(ModelError):
            predict(state, torch.rand(2, 8))


class TestParameterCounts(unittest.TestCase):
    """Tests de count_params."""

    def test_inference_count_equal_for_all_variants(self):
        arch = tiny_arch()
        baseline = build_model(arch, seed=0)
        segclr = build_model(arch, seed=0, with_head=True)
        simsiam = build_model(arch, seed=0, with_head=True, with_predictor=True)
        reference = count_params(baseline, "inference")
        self.assertEqual(count_params(segclr, "inference"), reference)
        self.assertEqual(count_params(simsiam, "inference"), reference)
        self.assertEqual(count_params(baseline, "training"), reference)
        self.assertGreater(count_params(segclr, "training"), reference)
        self.assertGreater(count_params(simsiam, "training"), count_params(segclr, "training"))
        self.assertEqual(count_params(inference_state(segclr), "training"), reference)

    def test_channel_aggregation_count(self):
        arch = tiny_arch(head_kind="ch")
        state = build_model(arch, seed=0, with_head=True)
        self.assertEqual(aggregation_param_count(state), arch.bottleneck_channels + 1)
        pool = build_model(tiny_arch(head_kind="pool"), seed=0, with_head=True)
        self.assertEqual(aggregation_param_count(pool), 0)

    def test_channel_aggregation_is_small_at_default_arch(self):
        arch = ArchitectureSpec(head_kind="ch")
        state = build_model(arch, seed=0, with_head=True)
        self.assertEqual(aggregation_param_count(state), arch.bottleneck_channels + 1)
        self.assertLess(aggregation_param_count(state), 0.01 * count_params(state, "inference"))

    def test_unknown_mode(self):
        with self.assertRaises(ModelError):
            count_params(build_model(tiny_arch(), seed=0), "other")


class TestGradients(unittest.TestCase):
    """Gradients analytiques contre différences finies (float64)."""

    def test_backbone_gradcheck(self):
        state = build_model(tiny_arch(dropout_p=0.0), seed=0).to(dtype=torch.float64).eval()
        backbone = state.backbone
        names = ["inc.layers.0.weight", "outc.weight", "outc.bias"]
        params = {name: p.detach() for name, p in backbone.named_parameters()}
        generator = torch.Generator().manual_seed(0)
        x = torch.rand(1, 1, 16, 16, dtype=torch.float64, generator=generator, requires_grad=True)
        weights = torch.rand(1, 4, 16, 16, dtype=torch.float64, generator=generator)

        def objective(image, *tensors):
            overrides = dict(params, **dict(zip(names, tensors)))
            return (functional_call(backbone, overrides, (image,)) * weights).sum()

        inputs = (x,) + tuple(params[n].clone().requires_grad_(True) for n in names)
        self.assertTrue(torch.autograd.gradcheck(objective, inputs, eps=1e-6, atol=1e-6, rtol=1e-4))

    def test_head_gradcheck(self):
        state = build_model(tiny_arch(), seed=0, with_head=True).to(dtype=torch.float64)
        h = torch.rand(2, 16, 4, 4, dtype=torch.float64, requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(lambda t: project(state, t).sum(), (h,),
                                                 eps=1e-6, atol=1e-6, rtol=1e-4))


class TestCheckpoint(unittest.TestCase):
    """Tests de save_checkpoint / load_checkpoint."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "model.pt"

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        state = build_model(tiny_arch(), seed=3, with_head=True, with_predictor=True)
        save_checkpoint(state, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.arch, state.arch)
        self.assertTrue(same_parameters(state, loaded))
        self.assertFalse(loaded.training)
        x = torch.rand(2, 1, 16, 16)
        with torch.no_grad():
            self.assertTrue(torch.equal(forward_segment(state.eval(), x), forward_segment(loaded, x)))

    def test_missing_or_foreign_file(self):
        with self.assertRaises(ModelError):
            load_checkpoint(self.path)
        torch.save({"format": "other"}, self.path)
        with self.assertRaises(ModelError):
            load_checkpoint(self.path)


if __name__ == '__main__':
    unittest.main(verbosity=2)
