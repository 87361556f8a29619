# -*- coding: utf-8 -*-
"""
Susceptibility distortion along the phase-encode axis.

Correction pulls intensities back from ``y + d(y)`` and multiplies by the
Jacobian ``1 + dd/dy``; :func:`forward_distort` is the numerical inverse of
that operation. The tensor functions (:func:`pull_back`, :func:`pe_jacobian`)
work on the last axis and are differentiable, so the trainer uses them
directly.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, GridMismatch, GridTooSmall, NonInvertibleField
from .volume import SLAB_AXIS, DisplacementMap, Volume3D

log = logging.getLogger(__name__)

BISECTION_TOLERANCE = 1e-6
BISECTION_MAX_ITERATIONS = 60


class FieldMap(Volume3D):

    """Off-resonance frequencies in Hz."""


@dataclass(frozen=True)
class AcquisitionParams(object):

    """
    Readout time (s), phase-encode voxel size (mm) and blip polarity.

    >>> AcquisitionParams(0.05, 1.8125).pe_sign
    1
    """

    readout_time: float
    pe_voxel_size: float
    pe_sign: int = 1

    def __post_init__(self):
        if not self.readout_time > 0:
            raise ConfigError('readout_time must be positive, got %r.' % (self.readout_time,))
        if not self.pe_voxel_size > 0:
            raise ConfigError('pe_voxel_size must be positive, got %r.' % (self.pe_voxel_size,))
        if self.pe_sign not in (1, -1):
            raise ConfigError('pe_sign must be +1 or -1, got %r.' % (self.pe_sign,))


def fieldmap_to_vdm(fieldmap, acq):
    """
    Convert a field map in Hz to a displacement map in mm.

    ``VDM = pe_sign * FM * readout_time * pe_voxel_size``.
    """
    if not np.isclose(fieldmap.pe_voxel_size, acq.pe_voxel_size, rtol=1e-5):
        raise GridMismatch('Field map PE voxel size %g mm differs from acquisition %g mm.'
                           % (fieldmap.pe_voxel_size, acq.pe_voxel_size))
    scale = acq.pe_sign * acq.readout_time * acq.pe_voxel_size
    return fieldmap.with_values(fieldmap.values * scale).as_type(DisplacementMap)


def pe_jacobian(shift):
    """
    ``1 + d(shift)/dy`` along the last axis of a tensor of voxel shifts.

    Central differences inside, one-sided differences at the two borders.
    """
    if shift.shape[-1] < 2:
        raise GridTooSmall('The phase-encode axis needs at least 2 voxels, got %d.' % shift.shape[-1])
    (derivative,) = torch.gradient(shift, dim=-1)
    return 1.0 + derivative


def pull_back(image, shift, modulate=True):
    """
    Resample ``image`` at ``y + shift`` along its last axis.

    ``image`` and ``shift`` are tensors of the same shape; ``shift`` is in
    voxels. Sampling is linear and clamped to the border; with ``modulate``
    the result is multiplied by :func:`pe_jacobian`.
    """
    if image.shape != shift.shape:
        raise GridMismatch('Image shape %r does not match shift shape %r.'
                           % (tuple(image.shape), tuple(shift.shape)))
    n = image.shape[-1]
    base = torch.arange(n, dtype=shift.dtype, device=shift.device)
    position = (base + shift).clamp(0, n - 1)
    lower = position.detach().floor().clamp(0, max(n - 2, 0))
    weight = position - lower
    index = lower.long()
    upper = (index + 1).clamp(max=n - 1)
    resampled = ((1.0 - weight) * torch.gather(image, -1, index)
                 + weight * torch.gather(image, -1, upper))
    if modulate:
        resampled = resampled * pe_jacobian(shift)
    return resampled


def as_tensor(array):
    """A float64 tensor owning a copy of ``array``."""
    return torch.from_numpy(np.array(array, dtype=np.float64))


def _to_pe_last(array, pe_axis):
    return as_tensor(np.moveaxis(array, pe_axis, -1))


def _from_pe_last(tensor, pe_axis):
    return np.moveaxis(tensor.detach().numpy(), -1, pe_axis)


def jacobian_along_pe(vdm):
    """The Jacobian determinant ``1 + dVDM/dy`` with VDM in voxel units."""
    if vdm.extents[vdm.pe_axis] < 2:
        raise GridTooSmall('Phase-encode extent %d is below 2.' % vdm.extents[vdm.pe_axis])
    jacobian = pe_jacobian(_to_pe_last(vdm.in_voxels, vdm.pe_axis))
    return Volume3D(_from_pe_last(jacobian, vdm.pe_axis), vdm.voxel_size, vdm.pe_axis, vdm.affine)


def apply_vdm(image, vdm, modulate=True):
    """
    Unwarp ``image`` with ``vdm``: ``out(y) = image(y + vdm(y)/s_y)``, times the
    Jacobian when ``modulate`` is set.
    """
    image.check_grid(vdm)
    pe_axis = vdm.pe_axis
    warped = pull_back(_to_pe_last(image.values, pe_axis),
                       _to_pe_last(vdm.in_voxels, pe_axis),
                       modulate=modulate)
    return image.with_values(_from_pe_last(warped, pe_axis))


def correct_b0(distorted, vdm):
    """Modulated unwarping applied slice by slice and restacked."""
    distorted.check_grid(vdm)
    if vdm.pe_axis == SLAB_AXIS:
        raise GridMismatch('The phase-encode axis cannot be the slab axis.')
    pe_axis = vdm.pe_axis
    shifts = vdm.in_voxels
    corrected = np.empty(distorted.extents)
    for k in range(distorted.extents[SLAB_AXIS]):
        image = _to_pe_last(distorted.values[:, :, k], pe_axis)
        shift = _to_pe_last(shifts[:, :, k], pe_axis)
        corrected[:, :, k] = np.moveaxis(pull_back(image, shift).numpy(), -1, pe_axis)
    return distorted.with_values(corrected)


def correct_series(raw, vdm, pe_axis=None):
    """
    Correct every frame of a 3-D or 4-D :class:`~epiunwarp.nifti.RawVolume` with one VDM.
    """
    if pe_axis is None:
        pe_axis = vdm.pe_axis
    data = raw.data
    frames = data[..., np.newaxis] if data.ndim == 3 else data
    corrected = np.empty(frames.shape)
    for t in range(frames.shape[-1]):
        frame = Volume3D(frames[..., t], raw.header.voxel_size, pe_axis, raw.header.affine)
        corrected[..., t] = correct_b0(frame, vdm).values
    if data.ndim == 3:
        corrected = corrected[..., 0]
    return raw.with_data(corrected)


def check_invertible(shifts):
    """Raise :class:`NonInvertibleField` unless ``y -> y + shift(y)`` is increasing on the last axis."""
    jacobian = pe_jacobian(as_tensor(shifts)).numpy()
    steps = 1.0 + np.diff(shifts, axis=-1)
    if jacobian.min() <= 0 or (steps.size and steps.min() <= 0):
        raise NonInvertibleField('Displacement folds the phase-encode axis (min Jacobian %.3f).'
                                 % min(jacobian.min(), steps.min() if steps.size else 1.0))


def _interp_last(values, positions):
    n = values.shape[-1]
    positions = np.clip(positions, 0, n - 1)
    lower = np.clip(np.floor(positions), 0, max(n - 2, 0)).astype(np.intp)
    upper = np.minimum(lower + 1, n - 1)
    weight = positions - lower
    return ((1.0 - weight) * np.take_along_axis(values, lower, -1)
            + weight * np.take_along_axis(values, upper, -1))


def invert_shift(shifts):
    """
    Solve ``y + shift(y) = u`` for every integer node ``u`` along the last axis.

    Bisection brackets the root, then the piecewise-linear segment holding it is
    solved in closed form.
    """
    n = shifts.shape[-1]
    target = np.broadcast_to(np.arange(n, dtype=np.float64), shifts.shape)
    reach = np.abs(shifts).max(axis=-1, keepdims=True) + 1.0
    low = target - reach
    high = target + reach
    for _ in range(BISECTION_MAX_ITERATIONS):
        if (high - low).max() < BISECTION_TOLERANCE:
            break
        middle = 0.5 * (low + high)
        below = middle + _interp_last(shifts, middle) < target
        low = np.where(below, middle, low)
        high = np.where(below, high, middle)
    root = 0.5 * (low + high)

    # exact solve on the segment (or border extension) holding the root
    k = np.clip(np.floor(root), 0, max(n - 2, 0)).astype(np.intp)
    d0 = np.take_along_axis(shifts, k, -1)
    d1 = np.take_along_axis(shifts, np.minimum(k + 1, n - 1), -1)
    slope = d1 - d0
    exact = (target - d0 + slope * k) / (1.0 + slope)
    inside = (exact >= k - 1e-9) & (exact <= k + 1 + 1e-9) & (root >= 0) & (root <= n - 1)
    refined = np.where(inside, exact, root)
    refined = np.where(root < 0, target - shifts[..., :1], refined)
    refined = np.where(root > n - 1, target - shifts[..., -1:], refined)
    return refined


def forward_distort(image, vdm):
    """
    Simulate the distorted acquisition of ``image`` under ``vdm``.

    Inverse of :func:`apply_vdm` with modulation: intensities are pulled through
    the inverted map and divided by the Jacobian.
    """
    image.check_grid(vdm)
    if not np.any(vdm.values):
        return image.with_values(image.values)
    pe_axis = vdm.pe_axis
    shifts = np.ascontiguousarray(np.moveaxis(vdm.in_voxels, pe_axis, -1))
    values = np.moveaxis(image.values, pe_axis, -1)
    check_invertible(shifts)
    source = invert_shift(shifts)
    jacobian = pe_jacobian(as_tensor(shifts)).numpy()
    distorted = _interp_last(values, source) / _interp_last(jacobian, source)
    log.debug('forward_distort: max |shift| %.3f voxels', np.abs(shifts).max())
    return image.with_values(np.moveaxis(distorted, -1, pe_axis))
