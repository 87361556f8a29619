# -*- coding: utf-8 -*-

import math
import unittest
import warnings

import numpy as np
import torch

from epiunwarp.errors import (ConfigError, DegenerateIntensity, DegenerateSample, EmptyMask,
                              GridTooSmall, ShapeMismatch)
from epiunwarp.measures import (LossBreakdown, LossWeights, MeasureSettings, joint_histogram,
                                masked_grad_l2, masked_l1, mutual_information, paired_t_test,
                                params_l1, rmse, ssim, total_loss)


def unsmoothed(**kwargs):
    return MeasureSettings(mi_sigma=0.0, **kwargs)


class DistanceTest(unittest.TestCase):

    def setUp(self):
        self.mask = np.ones((4, 4), dtype=bool)

    def test_l1_and_rmse_of_a_constant_offset(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 2.0)
        assert float(masked_l1(a, b, self.mask)) == 2.0
        assert float(rmse(a, b, self.mask)) == 2.0

    def test_only_masked_voxels_count(self):
        a = np.zeros((4, 4))
        b = np.zeros((4, 4))
        b[0, 0] = 100.0
        mask = self.mask.copy()
        mask[0, 0] = False
        assert float(masked_l1(a, b, mask)) == 0.0

    def test_empty_mask_raises(self):
        with self.assertRaises(EmptyMask):
            masked_l1(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4), dtype=bool))

    def test_shape_mismatch_raises(self):
        with self.assertRaises(ShapeMismatch):
            masked_l1(np.zeros((4, 4)), np.zeros((4, 5)), self.mask)
        with self.assertRaises(ShapeMismatch):
            masked_l1(np.zeros((4, 4)), np.zeros((4, 4)), np.ones((3, 4), dtype=bool))

    def test_gradient_discrepancy_ignores_constant_offsets(self):
        a = np.random.default_rng(0).normal(size=(6, 6))
        assert float(masked_grad_l2(a, a + 3.0, np.ones((6, 6), dtype=bool))) < 1e-12

    def test_gradient_discrepancy_of_a_ramp(self):
        ramp = np.tile(np.arange(5, dtype=np.float64), (5, 1))
        value = float(masked_grad_l2(ramp, np.zeros((5, 5)), np.ones((5, 5), dtype=bool)))
        assert abs(value - 1.0) < 1e-12

    def test_gradient_needs_two_by_two(self):
        with self.assertRaises(GridTooSmall):
            masked_grad_l2(np.zeros((1, 4)), np.zeros((1, 4)), np.ones((1, 4), dtype=bool))

    def test_rmse_has_a_finite_gradient_at_zero(self):
        a = torch.zeros(3, 3, dtype=torch.float64, requires_grad=True)
        rmse(a, torch.zeros(3, 3, dtype=torch.float64), np.ones((3, 3), dtype=bool)).backward()
        assert torch.isfinite(a.grad).all()


class SsimTest(unittest.TestCase):

    def test_identical_images_score_one(self):
        a = np.random.default_rng(1).random((32, 32))
        assert abs(float(ssim(a, a, np.ones((32, 32), dtype=bool))) - 1.0) < 1e-9

    def test_noise_lowers_the_score(self):
        rng = np.random.default_rng(2)
        a = rng.random((32, 32))
        noisy = a + rng.normal(0, 0.3, size=a.shape)
        assert float(ssim(a, noisy, np.ones((32, 32), dtype=bool))) < 0.9

    def test_score_is_symmetric(self):
        rng = np.random.default_rng(13)
        a, b = rng.random((24, 24)), rng.random((24, 24))
        mask = np.ones((24, 24), dtype=bool)
        assert abs(float(ssim(a, b, mask)) - float(ssim(b, a, mask))) < 1e-12

    def test_inverted_image_scores_low(self):
        a = np.random.default_rng(14).random((32, 32))
        assert float(ssim(a, 1.0 - a, np.ones((32, 32), dtype=bool))) < 0.2

    def test_batches_of_planes_are_scored_independently(self):
        rng = np.random.default_rng(3)
        a = rng.random((2, 16, 16))
        mask = np.ones((2, 16, 16), dtype=bool)
        both = float(ssim(a, a * 0.5, mask))
        first = float(ssim(a[0], a[0] * 0.5, mask[0]))
        second = float(ssim(a[1], a[1] * 0.5, mask[1]))
        assert abs(both - (first + second) / 2) < 1e-12


class MutualInformationTest(unittest.TestCase):

    def test_self_information_is_the_marginal_entropy(self):
        a = np.random.default_rng(4).random((40, 40))
        mask = np.ones_like(a, dtype=bool)
        counts = torch.bincount(torch.from_numpy(
            np.clip(np.floor((a - a.min()) / (a.max() - a.min()) * 32), 0, 31).astype(np.int64).ravel()),
            minlength=32).double()
        p = counts[counts > 0] / counts.sum()
        entropy = float(-(p * p.log()).sum())
        mi = float(mutual_information(a, a, mask, unsmoothed()))
        assert abs(mi - entropy) < 1e-12

    def test_independent_images_carry_little_information(self):
        rng = np.random.default_rng(5)
        a = rng.random((64, 64))
        b = rng.random((64, 64))
        mask = np.ones_like(a, dtype=bool)
        assert float(mutual_information(a, b, mask)) < 0.1 * float(mutual_information(a, a, mask))

    def test_information_is_invariant_to_monotone_rescaling(self):
        rng = np.random.default_rng(6)
        a = rng.random((32, 32))
        b = a + 0.1 * rng.random((32, 32))
        mask = np.ones_like(a, dtype=bool)
        assert abs(float(mutual_information(a, b, mask)) - float(mutual_information(a, 3 * b + 7, mask))) < 1e-9

    def test_constant_image_is_degenerate(self):
        mask = np.ones((8, 8), dtype=bool)
        with self.assertRaises(DegenerateIntensity):
            mutual_information(np.ones((8, 8)), np.random.default_rng(7).random((8, 8)), mask)
        relaxed = mutual_information(np.ones((8, 8)), np.ones((8, 8)), mask, strict=False)
        assert float(relaxed) == 0.0

    def test_histogram_sums_to_one(self):
        rng = np.random.default_rng(8)
        a = torch.from_numpy(rng.random(500))
        b = torch.from_numpy(rng.random(500))
        for soft in (False, True):
            assert abs(float(joint_histogram(a, b, 32, soft=soft).sum()) - 1.0) < 1e-12

    def test_soft_information_is_differentiable(self):
        rng = np.random.default_rng(9)
        t1 = torch.from_numpy(rng.random((16, 16)))
        b0 = torch.from_numpy(rng.random((16, 16))).requires_grad_()
        mi = mutual_information(t1, b0, np.ones((16, 16), dtype=bool), soft=True)
        mi.backward()
        assert torch.isfinite(b0.grad).all()
        assert float(b0.grad.abs().sum()) > 0

    def test_soft_information_gradient_matches_central_differences(self):
        rng = np.random.default_rng(12)
        t1 = torch.from_numpy(rng.random((12, 12)))
        b0 = torch.from_numpy(rng.random((12, 12)))
        mask = np.ones((12, 12), dtype=bool)

        def information(x):
            return mutual_information(t1, x, mask, soft=True)

        variable = b0.clone().requires_grad_()
        (analytic,) = torch.autograd.grad(information(variable), [variable])
        numeric = torch.zeros(b0.numel(), dtype=torch.float64)
        with torch.no_grad():
            for index in range(b0.numel()):
                step = torch.zeros(b0.numel(), dtype=torch.float64)
                step[index] = 1e-6
                step = step.reshape(b0.shape)
                numeric[index] = (information(b0 + step) - information(b0 - step)) / 2e-6
        error = float((numeric - analytic.reshape(-1)).norm())
        assert error < 1e-3 * float(analytic.norm())


class TotalLossTest(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(10)
        self.vdm = rng.normal(size=(16, 16))
        self.b0 = rng.random((16, 16))
        self.t1 = rng.random((16, 16))
        self.mask = np.ones((16, 16), dtype=bool)

    def test_weights_are_validated(self):
        with self.assertRaises(ConfigError):
            LossWeights(l1=-1.0)

    def test_perfect_prediction_leaves_only_the_information_and_weight_terms(self):
        weights = LossWeights()
        loss = total_loss(self.vdm, self.vdm, self.b0, self.b0, self.t1, self.mask, weights, weight_l1=2.0)
        assert float(loss.vdm_l1) == 0.0
        assert float(loss.grad_l2) == 0.0
        assert abs(float(loss.dssim)) < 1e-9
        expected = weights.mi * float(loss.neg_mi) + weights.reg * 2.0
        assert abs(float(loss.total) - expected) < 1e-9

    def test_zero_weights_skip_their_terms(self):
        weights = LossWeights(grad=0.0, mi=0.0)
        loss = total_loss(self.vdm, self.vdm + 1.0, self.b0, self.b0, np.ones((16, 16)), self.mask, weights)
        assert float(loss.grad_l2) == 0.0
        assert float(loss.neg_mi) == 0.0
        assert abs(float(loss.vdm_l1) - 1.0) < 1e-12

    def test_total_is_the_weighted_sum(self):
        weights = LossWeights(l1=1.0, grad=0.5, dssim=0.3, mi=0.5, reg=1e-5)
        loss = total_loss(self.vdm, self.vdm * 0.5, self.b0 * 0.9, self.b0, self.t1, self.mask,
                          weights, weight_l1=10.0).as_floats()
        expected = (loss.vdm_l1 + 0.5 * loss.grad_l2 + 0.3 * loss.dssim + 0.5 * loss.neg_mi
                    + 1e-5 * loss.weight_l1)
        assert abs(loss.total - expected) < 1e-12

    def test_floats_of_a_differentiable_loss_convert_quietly(self):
        pred = torch.from_numpy(self.vdm).requires_grad_()
        loss = total_loss(pred, self.vdm * 0.5, self.b0, self.b0, self.t1, self.mask)
        with warnings.catch_warnings():
            warnings.simplefilter('error')
            floats = loss.as_floats()
        assert all(isinstance(v, float) for v in floats)
        assert loss.total.requires_grad

    def test_breakdowns_average_term_by_term(self):
        mean = LossBreakdown.mean([LossBreakdown(1, 2, 3, 4, 5, 6), LossBreakdown(3, 4, 5, 6, 7, 8)])
        assert tuple(mean) == (2, 3, 4, 5, 6, 7)

    def test_parameter_penalty(self):
        parameters = [torch.tensor([1.0, -2.0]), torch.tensor([[-0.5]])]
        assert float(params_l1(parameters)) == 3.5


class PairedTTest(unittest.TestCase):

    def test_worked_example(self):
        t, p = paired_t_test([2, 2, 2, 2, 0], [1, 1, 1, 1, 1])
        assert abs(t - 1.5) < 1e-9
        assert 0 < p < 1

    def test_matches_the_hand_formula_on_fourteen_subjects(self):
        rng = np.random.default_rng(11)
        x = rng.normal(0.7, 0.05, 14)
        y = x - rng.normal(0.01, 0.02, 14)
        d = x - y
        expected = d.mean() / (d.std(ddof=1) / math.sqrt(14))
        t, _ = paired_t_test(x, y)
        assert abs(t - expected) < 1e-9

    def test_degenerate_samples_raise(self):
        with self.assertRaises(DegenerateSample):
            paired_t_test([1.0], [0.0])
        with self.assertRaises(DegenerateSample):
            paired_t_test([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])
