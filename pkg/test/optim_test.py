# -*- coding: utf-8 -*-

import math
import unittest

import torch

from epiunwarp.errors import NonFiniteGradient, NonFiniteLoss, ShapeMismatch
from epiunwarp.optim import OptimState, adam_step, scheduler_step


def single_parameter(value=1.0, **kwargs):
    p = torch.nn.Parameter(torch.tensor([value], dtype=torch.float64))
    return p, OptimState([('w', p)], **kwargs)


class SchedulerTest(unittest.TestCase):

    def test_improvement_resets_the_counters(self):
        _, state = single_parameter()
        scheduler_step(state, 1.0)
        scheduler_step(state, 1.0)
        assert state.bad_epochs == 1
        scheduler_step(state, 0.5)
        assert state.best == 0.5
        assert state.bad_epochs == 0
        assert state.stagnant_epochs == 0

    def test_equal_loss_is_not_an_improvement(self):
        _, state = single_parameter()
        scheduler_step(state, 2.0)
        scheduler_step(state, 2.0)
        assert state.stagnant_epochs == 1

    def test_learning_rate_halves_after_five_bad_epochs(self):
        _, state = single_parameter(lr=1e-3)
        scheduler_step(state, 1.0)
        for _ in range(4):
            scheduler_step(state, 1.0)
        assert state.lr == 1e-3
        scheduler_step(state, 1.0)
        assert state.lr == 5e-4
        assert state.bad_epochs == 0

    def test_training_stops_after_thirty_stagnant_epochs(self):
        _, state = single_parameter(lr=1e-3)
        epochs = 0
        while not state.should_stop:
            scheduler_step(state, 1.0)
            epochs += 1
        assert epochs == 31
        assert math.isclose(state.lr, 1e-3 / 2 ** 6)

    def test_non_finite_loss_raises(self):
        _, state = single_parameter()
        with self.assertRaises(NonFiniteLoss):
            scheduler_step(state, float('nan'))


class AdamTest(unittest.TestCase):

    def test_first_step_moves_by_the_learning_rate(self):
        p, state = single_parameter(1.0, lr=0.01)
        adam_step([p], [torch.tensor([3.0], dtype=torch.float64)], state)
        assert abs(float(p) - 0.99) < 1e-9
        assert state.steps == 1

    def test_moments_are_named_after_parameters(self):
        p, state = single_parameter()
        assert state.moment_tensors() == {}
        adam_step([p], [torch.tensor([2.0], dtype=torch.float64)], state)
        moments = state.moment_tensors()
        assert sorted(moments) == ['exp_avg.w', 'exp_avg_sq.w']
        assert abs(float(moments['exp_avg.w']) - 0.2) < 1e-12

    def test_non_finite_gradient_leaves_parameters_untouched(self):
        p, state = single_parameter(1.0)
        with self.assertRaises(NonFiniteGradient):
            adam_step([p], [torch.tensor([float('inf')], dtype=torch.float64)], state)
        assert float(p) == 1.0
        assert state.steps == 0

    def test_mismatched_gradients_raise(self):
        p, state = single_parameter()
        with self.assertRaises(ShapeMismatch):
            adam_step([p], [], state)
        with self.assertRaises(ShapeMismatch):
            adam_step([p], [torch.zeros(2, dtype=torch.float64)], state)

    def test_zero_gradient_is_a_fixed_point(self):
        p, state = single_parameter(0.25, lr=0.1)
        for _ in range(3):
            adam_step([p], [torch.zeros(1, dtype=torch.float64)], state)
        assert float(p) == 0.25
        assert state.steps == 3

    def test_matches_a_scalar_reference_over_a_hundred_steps(self):
        lr, beta1, beta2, eps = 0.01, 0.9, 0.999, 1e-8
        p, state = single_parameter(0.5, lr=lr, betas=(beta1, beta2), eps=eps)
        value, m, v = 0.5, 0.0, 0.0
        for t in range(1, 101):
            g = math.sin(0.3 * t) + 0.5 * value
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            value -= lr / (1 - beta1 ** t) * m / (math.sqrt(v) / math.sqrt(1 - beta2 ** t) + eps)
            adam_step([p], [torch.tensor([math.sin(0.3 * t) + 0.5 * float(p)], dtype=torch.float64)], state)
        assert abs(float(p) - value) < 1e-12
        assert state.steps == 100

    def test_foreign_parameters_are_rejected(self):
        p, state = single_parameter(1.0)
        stranger = torch.nn.Parameter(torch.tensor([1.0], dtype=torch.float64))
        with self.assertRaises(ShapeMismatch):
            adam_step([stranger], [torch.tensor([1.0], dtype=torch.float64)], state)
        assert float(p) == 1.0
        assert float(stranger) == 1.0
        assert state.steps == 0

    def test_counters_round_trip(self):
        _, state = single_parameter(lr=0.1)
        scheduler_step(state, 3.0)
        scheduler_step(state, 4.0)
        _, other = single_parameter()
        other.restore_counters(state.counters())
        assert other.counters() == state.counters()
