# -*- coding: utf-8 -*-
"""
2.5D training samples, on-the-fly augmentation and the subject-level split.

A sample's planes are laid out ``[..., row, column]`` with the phase-encode
axis last; a horizontal flip reverses rows.
"""

import collections
import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GridMismatch, IoError, TooFewSubjects
from .volume import SLAB_AXIS, dilate_mask, normalize_intensity

log = logging.getLogger(__name__)

B0_CHANNELS = (0, 1, 2)
T1_CHANNELS = (3, 4, 5)
CENTER_B0 = 1
CENTER_T1 = 4

MANIFEST_COLUMNS = ('subject_id', 'b0', 't1', 'vdm', 'mask')


class SliceStack(collections.namedtuple(
        'SliceStack', 'input target_vdm mask subject_id slice_index pe_voxel_size')):

    """
    One training sample.

    ``input`` is ``(6, H, W)``: b0 slices ``k-1, k, k+1`` then T1w slices
    ``k-1, k, k+1``. ``target_vdm`` is ``(1, H, W)`` in mm and ``mask`` is
    ``(H, W)`` boolean.
    """

    def with_planes(self, input=None, target_vdm=None, mask=None):
        return self._replace(
            input=self.input if input is None else input,
            target_vdm=self.target_vdm if target_vdm is None else target_vdm,
            mask=self.mask if mask is None else mask)

    @property
    def distorted_b0(self):
        return self.input[CENTER_B0]

    @property
    def t1(self):
        return self.input[CENTER_T1]

    def without_t1(self):
        """The same sample with its T1w channels zeroed."""
        planes = self.input.copy()
        planes[list(T1_CHANNELS)] = 0.0
        return self.with_planes(input=planes)


@dataclass(frozen=True)
class SplitSpec(object):

    train: float = 0.75
    val: float = 0.15
    test: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or not np.isclose(self.train + self.val + self.test, 1.0):
            raise ConfigError('Split fractions must be non-negative and sum to 1.')


@dataclass(frozen=True)
class AugmentConfig(object):

    apply_probability: float = 0.5
    translation_max: int = 5
    crop_range: tuple = (0.50, 0.90)
    noise_sigma: float = 0.05
    flip: bool = True
    flip_probability: float = 0.5
    mixcut: bool = True
    mixcut_probability: float = 0.1
    seed: int = 0

    def __post_init__(self):
        low, high = self.crop_range
        if not 0 < low <= high <= 1:
            raise ConfigError('crop_range must lie within (0, 1], got %r.' % (self.crop_range,))
        if int(self.translation_max) != self.translation_max or self.translation_max < 0:
            raise ConfigError('translation_max must be a non-negative integer.')

    @classmethod
    def disabled(cls):
        return cls(apply_probability=0.0, flip=False, mixcut=False)


ManifestRow = collections.namedtuple('ManifestRow', MANIFEST_COLUMNS)


def to_plane(values, k, pe_axis):
    """Slice ``k`` of a ``[x, y, z]`` grid, transposed so the phase-encode axis is last."""
    plane = values[:, :, k]
    return plane if pe_axis == 1 else plane.T


def from_plane(plane, pe_axis):
    return plane if pe_axis == 1 else plane.T


def build_stacks(b0, t1, vdm, mask, dilation=0):
    """
    One :class:`SliceStack` per slice with a nonempty mask.

    ``b0`` and ``t1`` are normalized to ``[0, 1]`` inside the (optionally
    dilated) mask; edge slices repeat their nearest neighbour.
    """
    b0.check_grid(t1, vdm, mask)
    if vdm.pe_axis == SLAB_AXIS:
        raise GridMismatch('The phase-encode axis cannot be the slab axis.')
    if dilation:
        mask = dilate_mask(mask, dilation)
    b0_norm, _ = normalize_intensity(b0, mask)
    t1_norm, _ = normalize_intensity(t1, mask)
    pe_axis = vdm.pe_axis
    depth = b0.extents[SLAB_AXIS]
    stacks = []
    dropped = 0
    for k in range(depth):
        plane_mask = to_plane(mask.values, k, pe_axis)
        if not plane_mask.any():
            dropped += 1
            continue
        neighbours = [max(k - 1, 0), k, min(k + 1, depth - 1)]
        planes = ([to_plane(b0_norm.values, j, pe_axis) for j in neighbours]
                  + [to_plane(t1_norm.values, j, pe_axis) for j in neighbours])
        stacks.append(SliceStack(
            input=np.stack(planes).astype(np.float64),
            target_vdm=to_plane(vdm.values, k, pe_axis)[np.newaxis].astype(np.float64),
            mask=np.array(plane_mask, dtype=bool),
            subject_id=None,
            slice_index=k,
            pe_voxel_size=vdm.pe_voxel_size))
    if dropped:
        log.debug('build_stacks: dropped %d slices with empty masks', dropped)
    return stacks


def translate(planes, di, dj):
    """``out[..., i, j] = planes[..., i - di, j - dj]``, zero where undefined."""
    out = np.zeros_like(planes)
    h, w = planes.shape[-2:]
    if abs(di) >= h or abs(dj) >= w:
        return out
    src_i = slice(max(0, -di), min(h, h - di))
    dst_i = slice(max(0, di), min(h, h + di))
    src_j = slice(max(0, -dj), min(w, w - dj))
    dst_j = slice(max(0, dj), min(w, w + dj))
    out[..., dst_i, dst_j] = planes[..., src_i, src_j]
    return out


def crop_square(planes, top, left, side):
    """Keep a ``side x side`` square at ``(top, left)`` in place, zero elsewhere."""
    out = np.zeros_like(planes)
    out[..., top:top + side, left:left + side] = planes[..., top:top + side, left:left + side]
    return out


def flip_rows(planes):
    return np.ascontiguousarray(planes[..., ::-1, :])


def mixcut(sample, partner):
    """Replace the lower-row half (the right half of the head) with ``partner``'s."""
    half = sample.mask.shape[-2] // 2

    def splice(mine, theirs):
        out = mine.copy()
        out[..., half:, :] = theirs[..., half:, :]
        return out

    return sample.with_planes(input=splice(sample.input, partner.input),
                              target_vdm=splice(sample.target_vdm, partner.target_vdm),
                              mask=splice(sample.mask, partner.mask))


def _geometric(sample, transform):
    return sample.with_planes(input=transform(sample.input),
                              target_vdm=transform(sample.target_vdm),
                              mask=transform(sample.mask))


def augment(sample, cfg, rng, partner=None):
    """
    Randomly augment one sample.

    With ``apply_probability`` one of translation, crop and noise is applied;
    flip and mixcut are independent extra draws. Geometric transforms move the
    input, target and mask together. A draw that would empty the mask is
    discarded.
    """
    original = sample
    if rng.random() < cfg.apply_probability:
        choice = int(rng.integers(3))
        if choice == 0:
            di, dj = (int(v) for v in rng.integers(-cfg.translation_max, cfg.translation_max + 1, size=2))
            sample = _geometric(sample, lambda p: translate(p, di, dj))
        elif choice == 1:
            h, w = sample.mask.shape
            side = max(1, int(round(rng.uniform(*cfg.crop_range) * min(h, w))))
            top = int(rng.integers(0, h - side + 1))
            left = int(rng.integers(0, w - side + 1))
            sample = _geometric(sample, lambda p: crop_square(p, top, left, side))
        elif cfg.noise_sigma > 0:
            sample = sample.with_planes(input=sample.input + rng.normal(0.0, cfg.noise_sigma, sample.input.shape))
    if cfg.flip and rng.random() < cfg.flip_probability:
        sample = _geometric(sample, flip_rows)
    if cfg.mixcut and partner is not None and rng.random() < cfg.mixcut_probability:
        sample = mixcut(sample, partner)
    if not sample.mask.any():
        return original
    return sample


def split_subjects(ids, spec=SplitSpec()):
    """
    Shuffle subject ids with ``spec.seed`` and cut them into train/val/test.

    Train and validation sizes are floored; the test part takes the rest. Each
    part receives at least one subject.

    >>> train, val, test = split_subjects(range(125))
    >>> len(train), len(val), len(test)
    (93, 18, 14)
    """
    ids = list(ids)
    n = len(ids)
    if n < 3:
        raise TooFewSubjects('A train/val/test split needs at least 3 subjects, got %d.' % n)
    n_train = int(np.floor(spec.train * n + 1e-9))
    n_val = int(np.floor(spec.val * n + 1e-9))
    n_val = max(n_val, 1)
    n_train = min(max(n_train, 1), n - n_val - 1)
    order = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


def sample_rng(seed, epoch, index):
    """An independent generator per (seed, epoch, sample)."""
    return np.random.default_rng([seed, epoch, index])


def read_manifest(path, columns=MANIFEST_COLUMNS, row_type=ManifestRow):
    """
    Rows of a tab-separated manifest; every column after the first holds a
    path, resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, newline='') as handle:
            reader = csv.DictReader(handle, delimiter='\t')
            missing = set(columns) - set(reader.fieldnames or ())
            if missing:
                raise ConfigError('Manifest %s lacks columns %s.' % (path, ', '.join(sorted(missing))))
            rows = []
            for record in reader:
                values = [record[columns[0]]] + [os.path.join(base, record[c]) for c in columns[1:]]
                rows.append(row_type(*values))
    except OSError as exc:
        raise IoError('Cannot read manifest %s: %s' % (path, exc))
    if not rows:
        raise ConfigError('Manifest %s lists no subjects.' % path)
    return rows


def write_manifest(rows, path, columns=MANIFEST_COLUMNS):
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, delimiter='\t', lineterminator='\n')
            writer.writerow(columns)
            for row in rows:
                writer.writerow([row[0]] + [os.path.relpath(p, base) for p in row[1:]])
    except OSError as exc:
        raise IoError('Cannot write manifest %s: %s' % (path, exc))
