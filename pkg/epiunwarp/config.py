# -*- coding: utf-8 -*-
"""
Run configuration: every parameter set of every command in one JSON document.

>>> config = RunConfig()
>>> RunConfig.from_json(config.to_json()) == config
True
>>> config.with_overrides(train={'epochs': 2}).train.epochs
2
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, fields, is_dataclass, replace

import torch

from .errors import ConfigError, IoError
from .measures import LossWeights, MeasureSettings
from .network import UNetConfig
from .phantom import FieldSpec, PhantomSpec
from .pipeline import AugmentConfig, SplitSpec
from .unwarp import AcquisitionParams

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
THREADS_VARIABLE = 'EPI_UNWARP_THREADS'

__all__ = ['AcquisitionParams', 'AugmentConfig', 'FieldSpec', 'LossWeights', 'MeasureSettings',
           'PhantomSpec', 'RunConfig', 'SplitSpec', 'TrainConfig', 'UNetConfig', 'ABLATIONS',
           'load_config', 'save_config', 'apply_threads']


@dataclass(frozen=True)
class TrainConfig(object):

    """
    Optimisation schedule. ``use_t1w`` off zeroes the T1w channels in training
    and inference; ``mask_dilation`` dilates manifest masks before use.
    """

    batch_size: int = 8
    epochs: int = 96
    lr: float = 1e-3
    patience: int = 5
    lr_factor: float = 0.5
    stop_after: int = 30
    use_t1w: bool = True
    soft_mi: bool = True
    mask_dilation: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError('batch_size and epochs must be positive.')
        if not self.lr > 0 or not 0 < self.lr_factor < 1:
            raise ConfigError('lr must be positive and lr_factor within (0, 1).')
        if self.patience < 1 or self.stop_after < 1 or self.mask_dilation < 0:
            raise ConfigError('patience, stop_after and mask_dilation are out of range.')


#: Presets for ``epi-unwarp train --ablation``.
ABLATIONS = {
    'none': {},
    'no-t1w': {'train': {'use_t1w': False}, 'loss': {'mi': 0.0}},
    'no-grad': {'loss': {'grad': 0.0}},
}


def _build(cls, data, default):
    """``cls`` from ``data``, taking missing fields from ``default``."""
    if not isinstance(data, dict):
        raise ConfigError('Section %s must be an object, got %r.' % (cls.__name__, data))
    names = [f.name for f in fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError('Unknown %s keys: %s.' % (cls.__name__, ', '.join(unknown)))
    values = {}
    for name in names:
        current = getattr(default, name)
        if name not in data:
            values[name] = current
        elif is_dataclass(current):
            values[name] = _build(type(current), data[name], current)
        elif isinstance(current, tuple):
            values[name] = tuple(data[name])
        else:
            values[name] = data[name]
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError('Bad %s: %s' % (cls.__name__, exc))


@dataclass(frozen=True)
class RunConfig(object):

    network: UNetConfig = UNetConfig()
    loss: LossWeights = LossWeights()
    measures: MeasureSettings = MeasureSettings()
    augment: AugmentConfig = AugmentConfig()
    split: SplitSpec = SplitSpec()
    train: TrainConfig = TrainConfig()
    acquisition: AcquisitionParams = AcquisitionParams(readout_time=0.05, pe_voxel_size=1.8125)
    phantom: PhantomSpec = PhantomSpec()

    def to_dict(self):
        data = asdict(self)
        data['version'] = CONFIG_VERSION
        return data

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        version = data.pop('version', None)
        if version != CONFIG_VERSION:
            raise ConfigError('Config version %r is not supported (expected %d).' % (version, CONFIG_VERSION))
        return _build(cls, data, cls())

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise ConfigError('Config is not valid JSON: %s' % exc)
        return cls.from_dict(data)

    def with_overrides(self, **sections):
        """A copy with ``section={key: value}`` updates applied on top."""
        updated = {}
        for section, values in sections.items():
            if section not in self.__dataclass_fields__:
                raise ConfigError('Unknown config section %r.' % section)
            current = getattr(self, section)
            updated[section] = _build(type(current), values, current)
        return replace(self, **updated)

    def with_ablation(self, name):
        if name not in ABLATIONS:
            raise ConfigError('Unknown ablation %r; choose from %s.' % (name, ', '.join(sorted(ABLATIONS))))
        return self.with_overrides(**ABLATIONS[name])


def load_config(path):
    try:
        with open(path) as handle:
            text = handle.read()
    except OSError as exc:
        raise IoError('Cannot read config %s: %s' % (path, exc))
    return RunConfig.from_json(text)


def save_config(config, path):
    try:
        with open(path, 'w') as handle:
            handle.write(config.to_json() + '\n')
    except OSError as exc:
        raise IoError('Cannot write config %s: %s' % (path, exc))


def apply_threads(environ=os.environ):
    """Cap torch intra-op threads from ``EPI_UNWARP_THREADS``; returns the cap or None."""
    value = environ.get(THREADS_VARIABLE)
    if not value:
        return None
    try:
        threads = int(value)
    except ValueError:
        threads = 0
    if threads < 1:
        raise ConfigError('%s must be a positive integer, got %r.' % (THREADS_VARIABLE, value))
    torch.set_num_threads(threads)
    log.debug('Using %d torch threads', threads)
    return threads
