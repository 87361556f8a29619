# -*- coding: utf-8 -*-
"""
Synthetic head phantoms with a known displacement field.

A phantom is a set of nested ellipsoids sharing one geometry between a
T1w-like and a b0-like contrast, a smooth field made of in-plane Gaussian
bumps, and the b0 as an EPI acquisition would see it under that field.
"""

import collections
import logging
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import IoError, SpecInvalid
from .nifti import write_nifti
from .pipeline import ManifestRow, write_manifest
from .unwarp import forward_distort
from .volume import DEFAULT_PE_AXIS, SLAB_AXIS, DisplacementMap, Mask3D, Volume3D, dilate_mask

log = logging.getLogger(__name__)

#: Pseudo-tissue classes, outermost first.
TISSUES = ('scalp', 'grey', 'white', 'ventricle')

FILE_SUFFIXES = ('b0', 't1', 'vdm', 'mask')

Phantom = collections.namedtuple('Phantom', 't1 b0 vdm mask distorted')

FieldBump = collections.namedtuple('FieldBump', 'amplitude center_x center_y width_x width_y')


@dataclass(frozen=True)
class FieldSpec(object):

    """
    Gaussian-bump field model.

    Amplitudes are in mm, widths and the shift cap in voxels. Drawn fields are
    scaled down until ``|d(shift)/dy| <= 1 - margin - slack`` everywhere, so
    both blip polarities stay invertible.
    """

    bumps: tuple = (2, 6)
    amplitude_max: float = 8.0
    width_range: tuple = (12.0, 24.0)
    z_envelope: float = 0.6
    max_shift: float = 5.0
    margin: float = 0.25
    slack: float = 0.05

    def validate(self):
        low, high = self.bumps
        if not 0 <= low <= high:
            raise SpecInvalid('Bump count range %r is not ordered.' % (self.bumps,))
        if self.amplitude_max < 0 or self.max_shift < 0:
            raise SpecInvalid('Field amplitudes must be non-negative.')
        if not 0 < self.width_range[0] <= self.width_range[1]:
            raise SpecInvalid('Bump widths %r must be positive and ordered.' % (self.width_range,))
        if not 0 < self.margin < 1 or not 0 <= self.slack < 1 - self.margin:
            raise SpecInvalid('Invertibility margin %g (slack %g) leaves no room for a field.'
                              % (self.margin, self.slack))
        if not self.z_envelope > 0:
            raise SpecInvalid('z_envelope must be positive.')

    @property
    def slope_limit(self):
        return 1.0 - self.margin - self.slack


@dataclass(frozen=True)
class PhantomSpec(object):

    """
    Geometry and contrast of one synthetic subject.

    ``b0_range`` and ``t1_range`` bound the per-class intensities; b0 gets
    brighter towards the centre and T1w darker, so the two contrasts share
    edges but not intensities.
    """

    extents: tuple = (128, 128, 80)
    voxel_size: tuple = (1.8125, 1.8125, 2.0)
    pe_axis: int = DEFAULT_PE_AXIS
    head_radius: tuple = (0.34, 0.40)
    b0_range: tuple = (200.0, 1200.0)
    t1_range: tuple = (150.0, 900.0)
    bias_strength: float = 0.1
    blur: float = 0.8
    mask_dilation: int = 3
    field: FieldSpec = FieldSpec()
    seed: int = 0

    def validate(self):
        if len(self.extents) != 3 or min(self.extents) < 1:
            raise SpecInvalid('Extents %r must be three positive integers.' % (self.extents,))
        if self.extents[0] % 16 or self.extents[1] % 16:
            raise SpecInvalid('In-plane extents %r must be multiples of 16.' % (self.extents[:2],))
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise SpecInvalid('Voxel sizes %r must be positive.' % (self.voxel_size,))
        if self.pe_axis not in (0, 1):
            raise SpecInvalid('The phase-encode axis must be in-plane, got %r.' % (self.pe_axis,))
        if not 0 < self.head_radius[0] <= self.head_radius[1] < 0.5:
            raise SpecInvalid('Head radius fractions %r must lie in (0, 0.5).' % (self.head_radius,))
        for name in ('b0_range', 't1_range'):
            low, high = getattr(self, name)
            if not 0 < low < high:
                raise SpecInvalid('%s %r must be positive and increasing.' % (name, getattr(self, name)))
        if not 0 <= self.bias_strength < 1 or self.blur < 0 or self.mask_dilation < 0:
            raise SpecInvalid('bias_strength, blur and mask_dilation are out of range.')
        self.field.validate()

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def _grid(spec):
    """Voxel-index coordinate arrays, each of shape ``extents``."""
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in spec.extents), indexing='ij')


def _ellipsoid(coords, center, radii):
    return sum(((c - c0) / r) ** 2 for c, c0, r in zip(coords, center, radii)) <= 1.0


def _tissue_labels(spec, rng):
    """Integer labels (0 background, ``i + 1`` for ``TISSUES[i]``) and the head mask."""
    coords = _grid(spec)
    mm = [c * s for c, s in zip(coords, spec.voxel_size)]
    size_mm = np.array(spec.extents) * np.array(spec.voxel_size)
    center = size_mm / 2.0 + rng.uniform(-0.03, 0.03, 3) * size_mm
    head = rng.uniform(*spec.head_radius, size=3) * size_mm
    head[SLAB_AXIS] = max(head[SLAB_AXIS], 0.45 * size_mm[SLAB_AXIS])

    labels = np.zeros(spec.extents, dtype=np.int8)
    outer = _ellipsoid(mm, center, head)
    labels[outer] = 1
    labels[_ellipsoid(mm, center, head * rng.uniform(0.82, 0.90))] = 2
    labels[_ellipsoid(mm, center, head * rng.uniform(0.55, 0.68))] = 3
    offset = np.array([0.18, 0.0, 0.0]) * head
    ventricle = head * np.array([0.12, 0.30, 0.35]) * rng.uniform(0.8, 1.2)
    for side in (-1, 1):
        labels[_ellipsoid(mm, center + side * offset, ventricle)] = 4
    return labels, outer


def _bias_field(spec, rng, coords):
    """A smooth multiplicative field ``1 + b * (linear ramp)``, ramp in ``[-1, 1]``."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    ramp = sum(d * (c / max(n - 1, 1) * 2.0 - 1.0) for d, c, n in zip(direction, coords, spec.extents))
    return 1.0 + spec.bias_strength * ramp / np.sqrt(3.0)


def _contrast(labels, intensities, bias, blur):
    image = np.zeros(labels.shape)
    for label, value in enumerate(intensities, start=1):
        image[labels == label] = value
    image *= bias
    if blur:
        image = ndimage.gaussian_filter(image, sigma=(blur, blur, 0))
    return image


def draw_bumps(spec, rng, head_center=None):
    """Random field bumps centred inside the head, amplitudes before scaling."""
    fspec = spec.field
    count = int(rng.integers(fspec.bumps[0], fspec.bumps[1] + 1))
    nx, ny = spec.extents[0], spec.extents[1]
    cx, cy = head_center if head_center is not None else ((nx - 1) / 2.0, (ny - 1) / 2.0)
    reach = 0.5 * min(spec.head_radius) * min(nx, ny)
    bumps = []
    for _ in range(count):
        angle = rng.uniform(0, 2 * np.pi)
        distance = reach * np.sqrt(rng.uniform())
        bumps.append(FieldBump(
            amplitude=float(rng.uniform(-fspec.amplitude_max, fspec.amplitude_max)),
            center_x=float(cx + distance * np.cos(angle)),
            center_y=float(cy + distance * np.sin(angle)),
            width_x=float(rng.uniform(*fspec.width_range)),
            width_y=float(rng.uniform(*fspec.width_range))))
    return bumps


def z_envelope(spec):
    """Per-slice weights: 1 in the middle slab, a Gaussian fall-off towards both ends."""
    nz = spec.extents[SLAB_AXIS]
    z = np.arange(nz, dtype=np.float64)
    half = spec.field.z_envelope * nz / 2.0
    excess = np.maximum(np.abs(z - (nz - 1) / 2.0) - half, 0.0)
    return np.exp(-0.5 * (excess / max(0.25 * nz, 1.0)) ** 2)


def bump_field(bumps, spec):
    """
    The displacement (mm) of ``bumps`` on the grid and its exact derivative
    along the phase-encode axis in voxels per voxel.
    """
    nx, ny = spec.extents[0], spec.extents[1]
    x, y = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing='ij')
    plane = np.zeros((nx, ny))
    slope = np.zeros((nx, ny))
    pe_voxel = spec.voxel_size[spec.pe_axis]
    for bump in bumps:
        dx, dy = x - bump.center_x, y - bump.center_y
        gauss = bump.amplitude * np.exp(-0.5 * ((dx / bump.width_x) ** 2 + (dy / bump.width_y) ** 2))
        plane += gauss
        along = dy / bump.width_y ** 2 if spec.pe_axis == 1 else dx / bump.width_x ** 2
        slope -= gauss * along
    envelope = z_envelope(spec)
    values = plane[:, :, np.newaxis] * envelope
    slope = slope[:, :, np.newaxis] * envelope / pe_voxel
    return values, slope


def scale_bumps(bumps, spec):
    """Scale amplitudes so the field honours the slope limit and the shift cap."""
    values, slope = bump_field(bumps, spec)
    fspec = spec.field
    factor = 1.0
    steepest = np.abs(slope).max() if slope.size else 0.0
    if steepest > fspec.slope_limit:
        factor = fspec.slope_limit / steepest
    largest = np.abs(values).max() / spec.voxel_size[spec.pe_axis] if values.size else 0.0
    if largest * factor > fspec.max_shift:
        factor = fspec.max_shift / largest
    if factor < 1.0:
        log.debug('scale_bumps: scaling field by %.3f', factor)
        bumps = [b._replace(amplitude=b.amplitude * factor) for b in bumps]
    return bumps


def generate_field(spec, rng):
    """A :class:`DisplacementMap` drawn from ``spec.field``, with its analytic PE slope."""
    bumps = scale_bumps(draw_bumps(spec, rng), spec)
    values, slope = bump_field(bumps, spec)
    if slope.size and 1.0 - np.abs(slope).max() <= spec.field.margin:
        raise SpecInvalid('Field Jacobian reaches %.3f, below the margin %g.'
                          % (1.0 - np.abs(slope).max(), spec.field.margin))
    return DisplacementMap(values, spec.voxel_size, spec.pe_axis), slope


def generate_phantom(spec=PhantomSpec()):
    """
    One synthetic subject: T1w, undistorted b0, true VDM, dilated mask and the
    distorted b0. The same spec (seed included) gives bit-identical output.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels, head = _tissue_labels(spec, rng)
    coords = _grid(spec)

    b0_levels = np.sort(rng.uniform(*spec.b0_range, size=len(TISSUES)))
    t1_levels = np.sort(rng.uniform(*spec.t1_range, size=len(TISSUES)))[::-1]
    b0_values = _contrast(labels, b0_levels, _bias_field(spec, rng, coords), spec.blur)
    t1_values = _contrast(labels, t1_levels, _bias_field(spec, rng, coords), spec.blur)

    t1 = Volume3D(t1_values, spec.voxel_size, spec.pe_axis)
    b0 = Volume3D(b0_values, spec.voxel_size, spec.pe_axis)
    vdm, _ = generate_field(spec, rng)
    mask = dilate_mask(Mask3D(head), spec.mask_dilation)
    distorted = forward_distort(b0, vdm)
    return Phantom(t1, b0, vdm, mask, distorted)


def reverse_polarity(phantom):
    """The blip-down counterpart: the same anatomy seen through the negated field."""
    vdm = phantom.vdm.with_values(-phantom.vdm.values)
    return phantom._replace(vdm=vdm, distorted=forward_distort(phantom.b0, vdm))


def subject_seeds(seed, n_subjects):
    """Independent per-subject seeds derived from a master seed."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(n_subjects)]


def subject_paths(out_dir, subject_id):
    return dict((suffix, os.path.join(out_dir, '%s_%s.nii.gz' % (subject_id, suffix)))
                for suffix in FILE_SUFFIXES)


def generate_dataset(n_subjects, spec=PhantomSpec(), out_dir='.', manifest_name='manifest.tsv',
                     on_subject=None, blip_down=False):
    """
    Write ``n_subjects`` phantoms plus a manifest under ``out_dir``.

    The manifest's ``b0`` column points at the distorted b0. With ``blip_down`` every
    subject is acquired with the reversed phase-encode polarity. ``on_subject`` is
    called with ``(row, phantom)`` after each subject is written. Returns the
    manifest path and its rows.
    """
    if n_subjects < 1:
        raise SpecInvalid('At least one subject is required, got %d.' % n_subjects)
    spec.validate()
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError('Cannot create %s: %s' % (out_dir, exc))
    rows = []
    for index, seed in enumerate(subject_seeds(spec.seed, n_subjects)):
        subject_id = 'sub-%03d' % (index + 1)
        phantom = generate_phantom(spec.with_seed(seed))
        if blip_down:
            phantom = reverse_polarity(phantom)
        paths = subject_paths(out_dir, subject_id)
        write_nifti(phantom.distorted.to_raw(), paths['b0'])
        write_nifti(phantom.t1.to_raw(), paths['t1'])
        write_nifti(phantom.vdm.to_raw(), paths['vdm'])
        write_nifti(phantom.mask.as_volume(phantom.t1).to_raw(), paths['mask'])
        row = ManifestRow(subject_id, paths['b0'], paths['t1'], paths['vdm'], paths['mask'])
        rows.append(row)
        log.info('%s: max |VDM| %.2f mm', subject_id, np.abs(phantom.vdm.values).max())
        if on_subject is not None:
            on_subject(row, phantom)
    manifest = os.path.join(out_dir, manifest_name)
    write_manifest(rows, manifest)
    return manifest, rows
