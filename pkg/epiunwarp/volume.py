# -*- coding: utf-8 -*-
"""
Image containers and voxel-level utilities.

Grids are indexed ``values[x, y, z]``; ``z`` is the slab (slice) axis and the
phase-encode axis defaults to ``y`` (axis 1).
"""

import collections
import logging

import numpy as np
from scipy import ndimage

from .errors import DegenerateVolume, EmptyMask, GridMismatch, GridTooSmall, NonFiniteValues
from .nifti import NiftiHeader, RawVolume

log = logging.getLogger(__name__)

DEFAULT_PE_AXIS = 1
SLAB_AXIS = 2


class Volume3D(object):

    """
    A scalar 3-D grid with voxel sizes (mm), an orientation affine and the
    phase-encode axis.

    Volumes are immutable: :attr:`values` is a read-only array and every
    ``with_*`` method returns a new object.

    >>> vol = Volume3D(np.zeros((4, 4, 2)), (2.0, 2.0, 3.0))
    >>> vol.extents, vol.pe_axis, vol.pe_voxel_size
    ((4, 4, 2), 1, 2.0)
    >>> vol.with_pe_axis(0).pe_axis
    0
    """

    __slots__ = ('_values', '_voxel_size', '_pe_axis', '_affine')

    def __init__(self, values, voxel_size=(1.0, 1.0, 1.0), pe_axis=DEFAULT_PE_AXIS, affine=None):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 3:
            raise GridMismatch('Expected a 3-D grid, got shape %r.' % (values.shape,))
        if not np.all(np.isfinite(values)):
            raise NonFiniteValues('Volume contains NaN or infinite values.')
        voxel_size = tuple(float(s) for s in voxel_size)
        if len(voxel_size) != 3 or min(voxel_size) <= 0:
            raise GridMismatch('Voxel sizes must be three positive numbers, got %r.' % (voxel_size,))
        if pe_axis not in (0, 1, 2):
            raise GridMismatch('Phase-encode axis must be 0, 1 or 2, got %r.' % (pe_axis,))
        if affine is None:
            affine = np.diag(list(voxel_size) + [1.0])
        affine = np.array(affine, dtype=np.float64)
        values.setflags(write=False)
        affine.setflags(write=False)
        self._values = values
        self._voxel_size = voxel_size
        self._pe_axis = int(pe_axis)
        self._affine = affine

    def __repr__(self):
        return '%s(extents=%r, voxel_size=%r, pe_axis=%d)' % (
            type(self).__name__, self.extents, self._voxel_size, self._pe_axis)

    @classmethod
    def from_raw(cls, raw, pe_axis=DEFAULT_PE_AXIS, index=0):
        """Build a volume from a :class:`~epiunwarp.nifti.RawVolume` (``index`` picks a 4-D frame)."""
        data = raw.data
        if data.ndim == 4:
            data = data[..., index]
        return cls(data, raw.header.voxel_size, pe_axis=pe_axis, affine=raw.header.affine)

    def to_raw(self, header=None):
        """This volume as a :class:`~epiunwarp.nifti.RawVolume`, reusing ``header`` fields if given."""
        if header is None:
            header = NiftiHeader.from_extents(self.extents, self._voxel_size, self._affine)
        else:
            header = header.with_extents(self.extents)
        return RawVolume(header, self._values)

    @property
    def values(self):
        return self._values

    @property
    def extents(self):
        return tuple(self._values.shape)

    @property
    def voxel_size(self):
        return self._voxel_size

    @property
    def pe_axis(self):
        return self._pe_axis

    @property
    def pe_voxel_size(self):
        return self._voxel_size[self._pe_axis]

    @property
    def affine(self):
        return self._affine

    def with_values(self, values):
        return type(self)(values, self._voxel_size, self._pe_axis, self._affine)

    def with_pe_axis(self, pe_axis):
        return type(self)(self._values, self._voxel_size, pe_axis, self._affine)

    def as_type(self, cls):
        """The same grid re-labelled as another volume type (e.g. :class:`DisplacementMap`)."""
        return cls(self._values, self._voxel_size, self._pe_axis, self._affine)

    def check_grid(self, *others):
        """Raise :class:`GridMismatch` unless every other volume/mask shares this grid."""
        for other in others:
            if self.extents != tuple(other.extents):
                raise GridMismatch('Grid %r does not match %r.' % (tuple(other.extents), self.extents))
            if isinstance(other, Volume3D):
                if not np.allclose(self._voxel_size, other.voxel_size):
                    raise GridMismatch('Voxel sizes %r do not match %r.'
                                       % (other.voxel_size, self._voxel_size))
                if other.pe_axis != self._pe_axis:
                    raise GridMismatch('Phase-encode axis %d does not match %d.'
                                       % (other.pe_axis, self._pe_axis))


class DisplacementMap(Volume3D):

    """Per-voxel displacement along :attr:`pe_axis`, in millimetres."""

    @classmethod
    def zeros_like(cls, volume):
        return cls(np.zeros(volume.extents), volume.voxel_size, volume.pe_axis, volume.affine)

    @property
    def in_voxels(self):
        """Displacements in voxel-index units along the phase-encode axis."""
        return self._values / self.pe_voxel_size


class Mask3D(object):

    """A binary grid qualifying a :class:`Volume3D` of the same extents."""

    __slots__ = ('_values',)

    def __init__(self, values):
        values = np.array(values)
        if values.ndim != 3:
            raise GridMismatch('Expected a 3-D mask, got shape %r.' % (values.shape,))
        values = values.astype(bool)
        values.setflags(write=False)
        self._values = values

    def __repr__(self):
        return 'Mask3D(extents=%r, count=%d)' % (self.extents, self.count)

    @classmethod
    def from_volume(cls, volume, threshold=0.5):
        return cls(volume.values > threshold)

    @property
    def values(self):
        return self._values

    @property
    def extents(self):
        return tuple(self._values.shape)

    @property
    def count(self):
        return int(self._values.sum())

    @property
    def is_empty(self):
        return not self._values.any()

    def with_values(self, values):
        return type(self)(values)

    def as_volume(self, like):
        """This mask as a 0/1 :class:`Volume3D` on the grid of ``like``."""
        return Volume3D(self._values.astype(np.float64), like.voxel_size, like.pe_axis, like.affine)


class IntensityMap(collections.namedtuple('IntensityMap', 'low high')):

    """The linear map ``low -> 0``, ``high -> 1`` used by :func:`normalize_intensity`."""

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.low) / (self.high - self.low)

    def invert(self, values):
        return np.asarray(values, dtype=np.float64) * (self.high - self.low) + self.low


def box_structure(radius):
    """In-plane L-infinity structuring element, one voxel thick along the slab axis."""
    return np.ones((2 * radius + 1, 2 * radius + 1, 1), dtype=bool)


def dilate_mask(mask, radius):
    """
    Dilate ``mask`` slice by slice with a ``(2r+1) x (2r+1)`` box.

    >>> m = np.zeros((5, 5, 1), dtype=bool); m[2, 2, 0] = True
    >>> int(dilate_mask(Mask3D(m), 1).values.sum())
    9
    """
    if radius < 0:
        raise ValueError('Dilation radius must be non-negative, got %r.' % (radius,))
    if radius == 0 or mask.is_empty:
        return mask.with_values(mask.values)
    return mask.with_values(ndimage.binary_dilation(mask.values, structure=box_structure(radius)))


def threshold_mask(volume, quantile):
    """
    Voxels brighter than the ``quantile`` intensity, largest 6-connected component only.
    """
    if not 0 < quantile < 1:
        raise ValueError('Quantile must lie in (0, 1), got %r.' % (quantile,))
    values = volume.values
    if values.min() == values.max():
        raise DegenerateVolume('Cannot threshold a constant volume.')
    above = values > np.quantile(values, quantile)
    if not above.any():
        raise DegenerateVolume('No voxel lies above the %g quantile.' % quantile)
    labels, count = ndimage.label(above, structure=ndimage.generate_binary_structure(3, 1))
    if count > 1:
        sizes = np.bincount(labels.ravel())[1:]
        log.debug('threshold_mask: keeping 1 of %d components', count)
        above = labels == (int(np.argmax(sizes)) + 1)
    return Mask3D(above)


def sample_line_linear(column, position):
    """
    Linear interpolation in ``column`` at a fractional index, clamped to the border.

    >>> sample_line_linear([0.0, 1.0, 2.0], 1.5)
    1.5
    >>> sample_line_linear([4.0, 1.0, 2.0], -0.7)
    4.0
    """
    column = np.asarray(column, dtype=np.float64)
    if column.size < 1:
        raise GridTooSmall('Cannot sample an empty column.')
    return float(np.interp(position, np.arange(column.size), column))


def normalize_intensity(volume, mask, low_percentile=0.5, high_percentile=99.5):
    """
    Map the in-mask ``low``/``high`` percentiles to 0/1 and clamp to ``[0, 1]``.

    Returns the normalized volume and the :class:`IntensityMap` that produced it.
    """
    if mask.is_empty:
        raise EmptyMask('Cannot normalize against an empty mask.')
    volume.check_grid(mask)
    low, high = np.percentile(volume.values[mask.values], [low_percentile, high_percentile])
    if not high > low:
        raise DegenerateVolume('In-mask intensity span is zero (%g).' % low)
    mapping = IntensityMap(float(low), float(high))
    return volume.with_values(np.clip(mapping.apply(volume.values), 0.0, 1.0)), mapping

