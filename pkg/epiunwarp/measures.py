# -*- coding: utf-8 -*-
"""
Similarity measures, the composite training loss and evaluation statistics.

Every measure accepts numpy arrays or tensors and returns a 0-d float64
tensor, so the same code scores held-out volumes and drives back-propagation.
In-plane axes are the last two; leading axes are pooled.
"""

import collections
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import stats

from .errors import (ConfigError, DegenerateIntensity, DegenerateSample, EmptyMask,
                     GridTooSmall, ShapeMismatch)


@dataclass(frozen=True)
class LossWeights(object):

    """Weights of the VDM L1, VDM gradient, structural dissimilarity, MI and weight-penalty terms."""

    l1: float = 1.0
    grad: float = 0.5
    dssim: float = 0.3
    mi: float = 0.5
    reg: float = 1e-5

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value >= 0:
                raise ConfigError('Loss weight %s must be non-negative, got %r.' % (name, value))


@dataclass(frozen=True)
class MeasureSettings(object):

    """Window and histogram parameters of :func:`ssim` and :func:`mutual_information`."""

    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    data_range: float = 1.0
    mi_bins: int = 32
    mi_sigma: float = 1.0


class LossBreakdown(collections.namedtuple(
        'LossBreakdown', 'vdm_l1 grad_l2 dssim neg_mi weight_l1 total')):

    """The terms of the composite loss; entries are 0-d tensors."""

    def as_floats(self):
        return type(self)(*(float(v.detach()) if torch.is_tensor(v) else float(v) for v in self))

    @classmethod
    def mean(cls, breakdowns):
        breakdowns = list(breakdowns)
        return cls(*(sum(column) / len(breakdowns) for column in zip(*breakdowns)))


def _tensor(value):
    if isinstance(value, torch.Tensor):
        return value if value.dtype == torch.float64 else value.double()
    return torch.from_numpy(np.array(value, dtype=np.float64))


def _mask(mask, shape):
    if isinstance(mask, torch.Tensor):
        mask = mask.bool()
    else:
        mask = torch.from_numpy(np.array(mask, dtype=bool))
    if tuple(mask.shape) != tuple(shape):
        raise ShapeMismatch('Mask shape %r does not match %r.' % (tuple(mask.shape), tuple(shape)))
    if not bool(mask.any()):
        raise EmptyMask('The mask selects no voxel.')
    return mask


def _pair(a, b, mask):
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch('Shapes %r and %r differ.' % (tuple(a.shape), tuple(b.shape)))
    return a, b, _mask(mask, a.shape)


def _safe_sqrt(value):
    positive = value > 0
    return torch.where(positive, torch.where(positive, value, torch.ones_like(value)).sqrt(),
                       torch.zeros_like(value))


def masked_l1(a, b, mask):
    """Mean absolute in-mask difference."""
    a, b, mask = _pair(a, b, mask)
    return (a - b).abs()[mask].mean()


def rmse(a, b, mask):
    """Root of the mean squared in-mask difference."""
    a, b, mask = _pair(a, b, mask)
    return _safe_sqrt((a - b).square()[mask].mean())


def in_plane_gradient(x):
    """Finite differences along the last two axes (central inside, one-sided at borders)."""
    if x.dim() < 2 or min(x.shape[-2:]) < 2:
        raise GridTooSmall('In-plane gradients need slices of at least 2x2, got %r.' % (tuple(x.shape),))
    return torch.gradient(x, dim=(-2, -1))


def masked_grad_l2(a, b, mask):
    """RMS over the mask of the in-plane gradient discrepancy."""
    a, b, mask = _pair(a, b, mask)
    squared = sum((ga - gb).square() for ga, gb in zip(in_plane_gradient(a), in_plane_gradient(b)))
    return _safe_sqrt(squared[mask].mean())


def gaussian_kernel(sigma, radius):
    offsets = torch.arange(-radius, radius + 1, dtype=torch.float64)
    kernel = torch.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def _planes(x):
    return x.reshape((-1, 1) + tuple(x.shape[-2:]))


def ssim_map(a, b, settings=MeasureSettings()):
    """Local SSIM with a Gaussian window, zero padded to the input extent."""
    size = settings.ssim_window
    window_1d = gaussian_kernel(settings.ssim_sigma, size // 2)
    window = torch.outer(window_1d, window_1d).reshape(1, 1, size, size)
    shape = a.shape
    a, b = _planes(a), _planes(b)

    def blur(x):
        return F.conv2d(x, window, padding=size // 2)

    c1 = (settings.ssim_k1 * settings.data_range) ** 2
    c2 = (settings.ssim_k2 * settings.data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    mu_ab = mu_a * mu_b
    mu_a_sq, mu_b_sq = mu_a * mu_a, mu_b * mu_b
    var_a = blur(a * a) - mu_a_sq
    var_b = blur(b * b) - mu_b_sq
    cov = blur(a * b) - mu_ab
    local = ((2 * mu_ab + c1) * (2 * cov + c2)) / ((mu_a_sq + mu_b_sq + c1) * (var_a + var_b + c2))
    return local.reshape(shape)


def ssim(a, b, mask, settings=MeasureSettings()):
    """Mean local SSIM over the mask; inputs are expected on a ``[0, 1]`` scale."""
    a, b, mask = _pair(a, b, mask)
    return ssim_map(a, b, settings)[mask].mean()


def joint_histogram(a, b, bins, soft=False):
    """
    A ``bins x bins`` joint histogram (normalized to sum 1) of two 1-D samples.

    Each axis spans that sample's min-max. ``soft`` spreads every pair over
    the neighbouring bin centres with a triangular kernel so the histogram is
    differentiable in the intensities.
    """
    def positions(x):
        low, high = x.min(), x.max()
        span = high - low
        if not float(span.detach()) > 0:
            raise DegenerateIntensity('Intensities have zero in-mask span.')
        return (x - low) / span * bins

    pa, pb = positions(a), positions(b)
    flat = torch.zeros(bins * bins, dtype=torch.float64)
    if not soft:
        ia = pa.detach().floor().clamp(0, bins - 1).long()
        ib = pb.detach().floor().clamp(0, bins - 1).long()
        joint = flat.index_add(0, ia * bins + ib, torch.ones_like(pa))
    else:
        ca = (pa - 0.5).clamp(0, bins - 1)
        cb = (pb - 0.5).clamp(0, bins - 1)
        la = ca.detach().floor().clamp(0, bins - 2)
        lb = cb.detach().floor().clamp(0, bins - 2)
        wa, wb = ca - la, cb - lb
        la, lb = la.long(), lb.long()
        joint = flat
        for da, weight_a in ((0, 1 - wa), (1, wa)):
            for db, weight_b in ((0, 1 - wb), (1, wb)):
                joint = joint.index_add(0, (la + da) * bins + (lb + db), weight_a * weight_b)
    joint = joint.reshape(bins, bins)
    return joint / joint.sum()


def smooth_histogram(joint, sigma):
    """Separable Gaussian smoothing (truncated at 4 sigma, zero outside), renormalized."""
    if sigma <= 0:
        return joint
    radius = int(4.0 * sigma + 0.5)
    kernel = gaussian_kernel(sigma, radius)
    planes = joint.reshape(1, 1, *joint.shape)
    planes = F.conv2d(planes, kernel.reshape(1, 1, -1, 1), padding=(radius, 0))
    planes = F.conv2d(planes, kernel.reshape(1, 1, 1, -1), padding=(0, radius))
    smoothed = planes.reshape(joint.shape)
    return smoothed / smoothed.sum()


def mutual_information(a, b, mask, settings=MeasureSettings(), soft=False, strict=True):
    """
    Mutual information (nats) of the in-mask intensities of ``a`` and ``b``.

    With ``strict`` unset a sample with zero intensity span scores 0 instead of
    raising :class:`DegenerateIntensity`.
    """
    a, b, mask = _pair(a, b, mask)
    try:
        joint = joint_histogram(a[mask], b[mask], settings.mi_bins, soft=soft)
    except DegenerateIntensity:
        if strict:
            raise
        return torch.zeros((), dtype=torch.float64)
    joint = smooth_histogram(joint, settings.mi_sigma)
    outer = joint.sum(1, keepdim=True) * joint.sum(0, keepdim=True)
    occupied = joint > 0
    p = joint[occupied]
    return (p * (p.log() - outer[occupied].log())).sum()


def params_l1(parameters):
    """Sum of absolute values of all parameters."""
    return sum(p.abs().sum() for p in parameters)


def total_loss(pred_vdm, ref_vdm, b0_corrected, b0_ref, t1w, mask, weights=LossWeights(),
               weight_l1=0.0, settings=MeasureSettings(), soft_mi=False):
    """
    The composite objective for one sample.

    ``l1 * |dVDM| + grad * |grad dVDM| + dssim * (1 - SSIM(b0_ref, b0)) +
    mi * (-MI(t1w, b0)) + reg * weight_l1``. Terms with a zero weight are not
    evaluated and report 0.
    """
    zero = torch.zeros((), dtype=torch.float64)
    vdm_l1 = masked_l1(pred_vdm, ref_vdm, mask) if weights.l1 else zero
    grad_l2 = masked_grad_l2(pred_vdm, ref_vdm, mask) if weights.grad else zero
    dssim = 1.0 - ssim(b0_ref, b0_corrected, mask, settings) if weights.dssim else zero
    if weights.mi:
        neg_mi = -mutual_information(t1w, b0_corrected, mask, settings, soft=soft_mi, strict=not soft_mi)
    else:
        neg_mi = zero
    weight_l1 = _tensor(weight_l1)
    total = (weights.l1 * vdm_l1 + weights.grad * grad_l2 + weights.dssim * dssim
             + weights.mi * neg_mi + weights.reg * weight_l1)
    return LossBreakdown(vdm_l1, grad_l2, dssim, neg_mi, weight_l1, total)


def paired_t_test(x, y):
    """
    Paired t statistic and two-sided p-value (``n - 1`` degrees of freedom).

    >>> t, p = paired_t_test([2, 2, 2, 2, 0], [1, 1, 1, 1, 1])
    >>> round(t, 6)
    1.5
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeMismatch('Paired samples must be 1-D and of equal length.')
    n = x.size
    if n < 2:
        raise DegenerateSample('A paired t-test needs at least 2 pairs, got %d.' % n)
    differences = x - y
    spread = differences.std(ddof=1)
    if not spread > 0:
        raise DegenerateSample('Paired differences have zero variance.')
    t = differences.mean() / (spread / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), n - 1)
    return float(t), float(p)
