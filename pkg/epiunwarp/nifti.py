# -*- coding: utf-8 -*-
"""
Single-file NIfTI-1 reader and writer.

Only ``.nii`` (optionally gzip-compressed) volumes are handled. The header is
decoded through a numpy structured dtype, so byte order is a property of the
dtype rather than of hand-written unpacking code.

>>> import numpy as np
>>> header = NiftiHeader.from_extents((2, 3, 4), (1.5, 1.5, 2.0))
>>> header.extents
(2, 3, 4)
>>> header.voxel_size
(1.5, 1.5, 2.0)
>>> decode_nifti(encode_nifti(RawVolume(header, np.zeros((2, 3, 4))))).data.shape
(2, 3, 4)
"""

import gzip
import logging
import sys
import zlib

import numpy as np

from .errors import (BadMagic, FormatError, GridMismatch, IoError,
                     TruncatedData, UnsupportedDatatype)

log = logging.getLogger(__name__)

HEADER_SIZE = 348
DATA_OFFSET = 352
GZIP_PREFIX = b'\x1f\x8b'
NIFTI2_HEADER_SIZE = 540

header_dtd = [
    ('sizeof_hdr', 'i4'),      # 0; must be 348
    ('data_type', 'S10'),      # 4; unused
    ('db_name', 'S18'),        # 14; unused
    ('extents', 'i4'),         # 32; unused
    ('session_error', 'i2'),   # 36; unused
    ('regular', 'S1'),         # 38; unused
    ('dim_info', 'u1'),        # 39
    ('dim', 'i2', (8,)),       # 40; rank and extents
    ('intent_p1', 'f4'),       # 56
    ('intent_p2', 'f4'),       # 60
    ('intent_p3', 'f4'),       # 64
    ('intent_code', 'i2'),     # 68
    ('datatype', 'i2'),        # 70
    ('bitpix', 'i2'),          # 72
    ('slice_start', 'i2'),     # 74
    ('pixdim', 'f4', (8,)),    # 76; qfac and voxel sizes
    ('vox_offset', 'f4'),      # 108
    ('scl_slope', 'f4'),       # 112
    ('scl_inter', 'f4'),       # 116
    ('slice_end', 'i2'),       # 120
    ('slice_code', 'u1'),      # 122
    ('xyzt_units', 'u1'),      # 123
    ('cal_max', 'f4'),         # 124
    ('cal_min', 'f4'),         # 128
    ('slice_duration', 'f4'),  # 132
    ('toffset', 'f4'),         # 136
    ('glmax', 'i4'),           # 140; unused
    ('glmin', 'i4'),           # 144; unused
    ('descrip', 'S80'),        # 148
    ('aux_file', 'S24'),       # 228
    ('qform_code', 'i2'),      # 252
    ('sform_code', 'i2'),      # 254
    ('quatern_b', 'f4'),       # 256
    ('quatern_c', 'f4'),       # 260
    ('quatern_d', 'f4'),       # 264
    ('qoffset_x', 'f4'),       # 268
    ('qoffset_y', 'f4'),       # 272
    ('qoffset_z', 'f4'),       # 276
    ('srow_x', 'f4', (4,)),    # 280
    ('srow_y', 'f4', (4,)),    # 296
    ('srow_z', 'f4', (4,)),    # 312
    ('intent_name', 'S16'),    # 328
    ('magic', 'S4'),           # 344; 'n+1\0' for single-file volumes
]
header_dtype = np.dtype(header_dtd)

#: NIfTI datatype code -> numpy type code (byte order applied at decode time).
DATATYPES = {
    2: 'u1',
    4: 'i2',
    8: 'i4',
    16: 'f4',
    64: 'f8',
}

FLOAT32 = 16
XFORM_ALIGNED = 2
UNITS_MM = 2

HOST_ENDIAN = '<' if sys.byteorder == 'little' else '>'


class NiftiHeader(object):

    """
    A decoded NIfTI-1 header.

    Instances are immutable; ``with_*`` methods return new headers. The record
    is always kept in host byte order; :attr:`endian` remembers the order the
    header was read in.
    """

    __slots__ = ('_record', '_endian')

    def __init__(self, record, endian=HOST_ENDIAN):
        record = np.asarray(record).astype(header_dtype.newbyteorder('='))
        self._record = record.reshape(())
        self._endian = endian

    def __repr__(self):
        return 'NiftiHeader(dim=%r, datatype=%d)' % (self.extents, self.datatype_code)

    def __eq__(self, other):
        if not isinstance(other, NiftiHeader):
            return NotImplemented
        return self._record.tobytes() == other._record.tobytes()

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    __hash__ = None

    @classmethod
    def from_extents(cls, extents, voxel_size, affine=None):
        """Create a float32 header for a volume of the given geometry."""
        record = np.zeros((), dtype=header_dtype)
        rank = len(extents)
        dim = [rank] + [int(e) for e in extents] + [1] * (7 - rank)
        record['sizeof_hdr'] = HEADER_SIZE
        record['dim'] = dim
        record['datatype'] = FLOAT32
        record['bitpix'] = 32
        pixdim = np.ones(8, dtype=np.float32)
        pixdim[1:1 + len(voxel_size)] = voxel_size
        record['pixdim'] = pixdim
        record['vox_offset'] = DATA_OFFSET
        record['scl_slope'] = 1.0
        record['xyzt_units'] = UNITS_MM
        record['magic'] = b'n+1'
        header = cls(record)
        if affine is None:
            affine = np.diag(list(header.voxel_size) + [1.0])
        return header.with_affine(affine)

    @property
    def record(self):
        """A copy of the underlying structured record."""
        return self._record.copy()

    @property
    def endian(self):
        return self._endian

    @property
    def sizeof_hdr(self):
        return int(self._record['sizeof_hdr'])

    @property
    def magic(self):
        return bytes(np.asarray(self._record['magic']).item()).rstrip(b'\0')

    @property
    def dim(self):
        return tuple(int(d) for d in self._record['dim'])

    @property
    def rank(self):
        return self.dim[0]

    @property
    def extents(self):
        return self.dim[1:1 + self.rank]

    @property
    def datatype_code(self):
        return int(self._record['datatype'])

    @property
    def bitpix(self):
        return int(self._record['bitpix'])

    @property
    def pixdim(self):
        return tuple(float(p) for p in self._record['pixdim'])

    @property
    def voxel_size(self):
        """Spatial voxel sizes in mm (pixdim[1:4])."""
        return tuple(abs(p) for p in self.pixdim[1:4])

    @property
    def vox_offset(self):
        return float(self._record['vox_offset'])

    @property
    def scl_slope(self):
        return float(self._record['scl_slope'])

    @property
    def scl_inter(self):
        return float(self._record['scl_inter'])

    @property
    def qform_code(self):
        return int(self._record['qform_code'])

    @property
    def sform_code(self):
        return int(self._record['sform_code'])

    @property
    def affine(self):
        """
        Voxel-to-world affine: sform when set, else qform, else scaling only.
        """
        if self.sform_code > 0:
            rows = [self._record[name] for name in ('srow_x', 'srow_y', 'srow_z')]
            return np.vstack(rows + [np.array([0, 0, 0, 1])]).astype(np.float64)
        if self.qform_code > 0:
            return self._qform_affine()
        return np.diag(list(self.voxel_size) + [1.0])

    def _qform_affine(self):
        b, c, d = (float(self._record[k]) for k in ('quatern_b', 'quatern_c', 'quatern_d'))
        a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
        rotation = np.array([
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ])
        qfac = -1.0 if self.pixdim[0] < 0 else 1.0
        zooms = np.array(self.voxel_size) * np.array([1.0, 1.0, qfac])
        affine = np.eye(4)
        affine[:3, :3] = rotation * zooms
        affine[:3, 3] = [float(self._record[k]) for k in ('qoffset_x', 'qoffset_y', 'qoffset_z')]
        return affine

    def with_affine(self, affine):
        """Store ``affine`` in the sform rows; the qform is left as it is."""
        affine = np.asarray(affine, dtype=np.float64)
        record = self.record
        record['srow_x'] = affine[0]
        record['srow_y'] = affine[1]
        record['srow_z'] = affine[2]
        if self.sform_code == 0:
            record['sform_code'] = XFORM_ALIGNED
        return type(self)(record, self._endian)

    def with_extents(self, extents):
        record = self.record
        rank = len(extents)
        record['dim'] = [rank] + [int(e) for e in extents] + [1] * (7 - rank)
        return type(self)(record, self._endian)

    def for_float32_payload(self):
        """This header rewritten for an unscaled float32 payload at offset 352."""
        record = self.record
        record['sizeof_hdr'] = HEADER_SIZE
        record['datatype'] = FLOAT32
        record['bitpix'] = 32
        record['vox_offset'] = DATA_OFFSET
        record['scl_slope'] = 1.0
        record['scl_inter'] = 0.0
        record['magic'] = b'n+1'
        return type(self)(record, HOST_ENDIAN)


class RawVolume(object):

    """Header plus fully decoded float64 data, indexed ``data[x, y, z(, t)]``."""

    __slots__ = ('_header', '_data')

    def __init__(self, header, data):
        data = np.array(data, dtype=np.float64)
        if tuple(data.shape) != tuple(header.extents):
            raise GridMismatch('Data shape %r does not match header extents %r.'
                               % (data.shape, header.extents))
        data.setflags(write=False)
        self._header = header
        self._data = data

    def __repr__(self):
        return 'RawVolume(%r)' % (self._header,)

    @property
    def header(self):
        return self._header

    @property
    def data(self):
        return self._data

    def with_data(self, data):
        data = np.asarray(data, dtype=np.float64)
        return type(self)(self._header.with_extents(data.shape), data)


def detect_endian(raw):
    """Byte order of a header, detected from ``sizeof_hdr``."""
    if len(raw) < 4:
        raise TruncatedData('File holds %d bytes, too short for a NIfTI header.' % len(raw))
    for endian in ('<', '>'):
        size = int(np.frombuffer(raw[:4], dtype=endian + 'i4')[0])
        if size == HEADER_SIZE:
            return endian
        if size == NIFTI2_HEADER_SIZE:
            raise BadMagic('NIfTI-2 files are not supported.')
    raise BadMagic('sizeof_hdr is not %d in either byte order.' % HEADER_SIZE)


def decode_payload(buffer, datatype_code, count, endian, offset=0):
    """Decode ``count`` voxels of the given datatype as float64."""
    try:
        code = DATATYPES[datatype_code]
    except KeyError:
        raise UnsupportedDatatype('NIfTI datatype %d is not supported.' % datatype_code)
    dtype = np.dtype(endian + code)
    if offset + count * dtype.itemsize > len(buffer):
        raise TruncatedData('Payload needs %d bytes from offset %d, only %d available.'
                            % (count * dtype.itemsize, offset, len(buffer) - offset))
    return np.frombuffer(buffer, dtype=dtype, count=count, offset=offset).astype(np.float64)


def decode_nifti(raw):
    """Decode the bytes of a single-file NIfTI-1 volume into a :class:`RawVolume`."""
    if raw[:2] == GZIP_PREFIX:
        try:
            raw = gzip.decompress(raw)
        except (EOFError, zlib.error) as exc:
            raise TruncatedData('Corrupt gzip container: %s' % exc)
    endian = detect_endian(raw)
    if len(raw) < HEADER_SIZE:
        raise TruncatedData('Header is %d bytes, expected %d.' % (len(raw), HEADER_SIZE))
    record = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype.newbyteorder(endian))[0]
    header = NiftiHeader(record, endian)

    if header.magic == b'ni1':
        raise BadMagic('.hdr/.img pairs are not supported; use a single-file .nii volume.')
    if header.magic != b'n+1':
        raise BadMagic('Bad NIfTI magic %r.' % header.magic)
    if header.rank not in (3, 4) or any(e < 1 for e in header.extents):
        raise FormatError('Unsupported dimensions %r.' % (header.dim,))
    if header.datatype_code not in DATATYPES:
        raise UnsupportedDatatype('NIfTI datatype %d is not supported.' % header.datatype_code)

    if not np.isfinite(header.vox_offset) or header.vox_offset < HEADER_SIZE:
        raise FormatError('vox_offset %r lies inside the header.' % header.vox_offset)
    offset = int(header.vox_offset)
    if len(raw) > HEADER_SIZE and offset > HEADER_SIZE and raw[HEADER_SIZE] != 0:
        log.warning('Skipping NIfTI extensions (%d bytes).', offset - DATA_OFFSET)

    count = int(np.prod(header.extents))
    data = decode_payload(raw, header.datatype_code, count, endian, offset=offset)
    slope, inter = header.scl_slope, header.scl_inter
    if slope == 0 or not np.isfinite(slope):
        slope = 1.0
    if not np.isfinite(inter):
        inter = 0.0
    if slope != 1.0 or inter != 0.0:
        data = data * slope + inter
    return RawVolume(header, data.reshape(header.extents, order='F'))


def encode_nifti(volume):
    """Encode ``volume`` as host-endian NIfTI-1 bytes with a float32 payload."""
    header = volume.header.for_float32_payload()
    payload = np.asarray(volume.data, dtype=HOST_ENDIAN + 'f4')
    return b''.join([
        header.record.tobytes(),
        b'\x00' * (DATA_OFFSET - HEADER_SIZE),
        payload.tobytes(order='F'),
    ])


def read_nifti(path):
    """Read a ``.nii`` or ``.nii.gz`` file."""
    try:
        with open(path, 'rb') as handle:
            raw = handle.read()
    except OSError as exc:
        raise IoError('Cannot read %s: %s' % (path, exc))
    log.debug('Read %d bytes from %s', len(raw), path)
    return decode_nifti(raw)


def write_nifti(volume, path):
    """Write ``volume`` to ``path``; a ``.gz`` suffix selects gzip compression."""
    raw = encode_nifti(volume)
    if str(path).endswith('.gz'):
        raw = gzip.compress(raw)
    try:
        with open(path, 'wb') as handle:
            handle.write(raw)
    except OSError as exc:
        raise IoError('Cannot write %s: %s' % (path, exc))
    log.debug('Wrote %s (%d bytes)', path, len(raw))
