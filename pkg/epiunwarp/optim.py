# -*- coding: utf-8 -*-
"""
Adam updates, the plateau learning-rate scheduler and early stopping.
"""

import logging
import math

import torch

from .errors import NonFiniteGradient, NonFiniteLoss, ShapeMismatch

log = logging.getLogger(__name__)

MOMENTS = ('exp_avg', 'exp_avg_sq')


class OptimState(object):

    """
    Optimizer moments plus the scheduler and early-stopping counters.

    ``bad_epochs`` counts epochs without improvement since the last learning
    rate change; ``stagnant_epochs`` counts them since the last improvement.
    """

    def __init__(self, named_parameters, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 patience=5, factor=0.5, stop_after=30):
        named = list(named_parameters)
        self.names = [name for name, _ in named]
        self.parameters = [p for _, p in named]
        self.optimizer = torch.optim.Adam(self.parameters, lr=lr, betas=betas, eps=eps, foreach=False)
        self.patience = patience
        self.factor = factor
        self.stop_after = stop_after
        self.steps = 0
        self.best = math.inf
        self.bad_epochs = 0
        self.stagnant_epochs = 0
        self.should_stop = False

    def __repr__(self):
        return 'OptimState(steps=%d, lr=%g, best=%g)' % (self.steps, self.lr, self.best)

    @property
    def lr(self):
        return self.optimizer.param_groups[0]['lr']

    @lr.setter
    def lr(self, value):
        for group in self.optimizer.param_groups:
            group['lr'] = value

    def counters(self):
        return {
            'steps': self.steps,
            'lr': self.lr,
            'best': self.best,
            'bad_epochs': self.bad_epochs,
            'stagnant_epochs': self.stagnant_epochs,
            'should_stop': self.should_stop,
            'patience': self.patience,
            'factor': self.factor,
            'stop_after': self.stop_after,
        }

    def restore_counters(self, counters):
        self.steps = int(counters['steps'])
        self.lr = float(counters['lr'])
        self.best = float(counters['best'])
        self.bad_epochs = int(counters['bad_epochs'])
        self.stagnant_epochs = int(counters['stagnant_epochs'])
        self.should_stop = bool(counters['should_stop'])
        self.patience = int(counters.get('patience', self.patience))
        self.factor = float(counters.get('factor', self.factor))
        self.stop_after = int(counters.get('stop_after', self.stop_after))

    def moment_tensors(self):
        """Named first/second moments, e.g. ``exp_avg.encoders.0.conv1.weight``."""
        tensors = {}
        for name, p in zip(self.names, self.parameters):
            state = self.optimizer.state.get(p)
            if state:
                for moment in MOMENTS:
                    tensors['%s.%s' % (moment, name)] = state[moment]
        return tensors

    def restore_moments(self, tensors):
        step = torch.tensor(float(self.steps), dtype=_scalar_dtype())
        for name, p in zip(self.names, self.parameters):
            keys = ['%s.%s' % (moment, name) for moment in MOMENTS]
            if all(key in tensors for key in keys):
                self.optimizer.state[p] = {
                    'step': step.clone(),
                    'exp_avg': tensors[keys[0]].clone().to(p),
                    'exp_avg_sq': tensors[keys[1]].clone().to(p),
                }


def _scalar_dtype():
    return torch.float64 if torch.get_default_dtype() == torch.float64 else torch.float32


def adam_step(parameters, grads, state):
    """
    One bias-corrected Adam update of ``parameters`` with ``grads``.

    Parameters are updated in place and must be tensors ``state`` was built
    on; returns ``(parameters, state)``.
    """
    parameters, grads = list(parameters), list(grads)
    if len(parameters) != len(grads):
        raise ShapeMismatch('%d parameters but %d gradients.' % (len(parameters), len(grads)))
    owned = set(map(id, state.parameters))
    if any(id(p) not in owned for p in parameters):
        raise ShapeMismatch('Parameters passed to adam_step are not the ones the optimizer state tracks.')
    for p, g in zip(parameters, grads):
        if p.shape != g.shape:
            raise ShapeMismatch('Gradient %r does not match parameter %r.' % (tuple(g.shape), tuple(p.shape)))
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteGradient('Gradient for a %r parameter is not finite.' % (tuple(p.shape),))
    for p in state.parameters:
        p.grad = None
    for p, g in zip(parameters, grads):
        p.grad = g.detach().clone().to(p)
    state.optimizer.step()
    state.steps += 1
    return parameters, state


def scheduler_step(state, validation_loss):
    """
    Record one epoch's validation loss.

    Halves the learning rate after ``patience`` epochs without a strict
    improvement and raises ``should_stop`` after ``stop_after`` stagnant epochs.
    """
    if not math.isfinite(validation_loss):
        raise NonFiniteLoss('Validation loss is %r.' % (validation_loss,))
    if validation_loss < state.best:
        state.best = validation_loss
        state.bad_epochs = 0
        state.stagnant_epochs = 0
        return state
    state.bad_epochs += 1
    state.stagnant_epochs += 1
    if state.bad_epochs >= state.patience:
        state.lr = state.lr * state.factor
        state.bad_epochs = 0
        log.info('Validation loss stalled for %d epochs; learning rate now %g', state.patience, state.lr)
    if state.stagnant_epochs >= state.stop_after:
        state.should_stop = True
    return state
