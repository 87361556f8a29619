# -*- coding: utf-8 -*-
"""
Checkpoint files.

Layout (all integers little-endian)::

    b'EUW1'                 magic
    u16                     format version
    u32 + bytes             JSON config block (network config, counters, metadata)
    u32                     tensor count
    per tensor:
        u16 + bytes         UTF-8 name
        u8                  rank
        u32 * rank          extents
        f64 * prod(extents) values, little-endian, C order
"""

import collections
import io
import json
import logging
import struct
from dataclasses import asdict

import numpy as np
import torch

from .errors import BadMagic, IoError, TruncatedData, VersionMismatch
from .network import UNet, UNetConfig
from .optim import OptimState

log = logging.getLogger(__name__)

MAGIC = b'EUW1'
FORMAT_VERSION = 1
PARAM_PREFIX = 'param.'
MOMENT_PREFIX = 'adam.'

Checkpoint = collections.namedtuple('Checkpoint', 'model state config metadata')


def _read(stream, size):
    chunk = stream.read(size)
    if len(chunk) != size:
        raise TruncatedData('Checkpoint ended after %d of %d bytes.' % (len(chunk), size))
    return chunk


def _unpack(stream, fmt):
    return struct.unpack(fmt, _read(stream, struct.calcsize(fmt)))


def encode_checkpoint(model, state=None, metadata=None):
    """Serialize ``model`` (and optionally its :class:`OptimState`) to bytes."""
    tensors = [(PARAM_PREFIX + name, p) for name, p in model.state_dict().items()]
    header = {'network': asdict(model.config), 'metadata': metadata or {}}
    if state is not None:
        header['optimizer'] = state.counters()
        tensors.extend((MOMENT_PREFIX + name, t) for name, t in sorted(state.moment_tensors().items()))
    block = json.dumps(header, sort_keys=True).encode('utf-8')

    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack('<H', FORMAT_VERSION))
    out.write(struct.pack('<I', len(block)))
    out.write(block)
    out.write(struct.pack('<I', len(tensors)))
    for name, tensor in tensors:
        encoded = name.encode('utf-8')
        values = tensor.detach().cpu().numpy().astype('<f8')
        out.write(struct.pack('<H', len(encoded)))
        out.write(encoded)
        out.write(struct.pack('<B', values.ndim))
        out.write(struct.pack('<%dI' % values.ndim, *values.shape))
        out.write(values.tobytes(order='C'))
    return out.getvalue()


def decode_checkpoint(raw):
    """Rebuild a :class:`Checkpoint` from bytes written by :func:`encode_checkpoint`."""
    stream = io.BytesIO(raw)
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        if len(magic) < len(MAGIC):
            raise TruncatedData('Checkpoint is shorter than its magic.')
        raise BadMagic('Not a checkpoint (magic %r).' % magic)
    (version,) = _unpack(stream, '<H')
    if version != FORMAT_VERSION:
        raise VersionMismatch('Checkpoint format %d, this reader handles %d.' % (version, FORMAT_VERSION))
    (size,) = _unpack(stream, '<I')
    header = json.loads(_read(stream, size).decode('utf-8'))

    (count,) = _unpack(stream, '<I')
    tensors = {}
    for _ in range(count):
        (length,) = _unpack(stream, '<H')
        name = _read(stream, length).decode('utf-8')
        (rank,) = _unpack(stream, '<B')
        shape = _unpack(stream, '<%dI' % rank) if rank else ()
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(_read(stream, nbytes), dtype='<f8').reshape(shape)
        tensors[name] = torch.from_numpy(values.astype(np.float64))

    config = UNetConfig(**header['network'])
    model = UNet(config)
    model.load_state_dict({name[len(PARAM_PREFIX):]: t for name, t in tensors.items()
                           if name.startswith(PARAM_PREFIX)})
    state = None
    if 'optimizer' in header:
        counters = header['optimizer']
        state = OptimState(model.named_parameters(), lr=counters['lr'])
        state.restore_counters(counters)
        state.restore_moments({name[len(MOMENT_PREFIX):]: t for name, t in tensors.items()
                               if name.startswith(MOMENT_PREFIX)})
    return Checkpoint(model, state, config, header.get('metadata', {}))


def save_checkpoint(model, state, path, metadata=None):
    raw = encode_checkpoint(model, state, metadata)
    try:
        with open(path, 'wb') as handle:
            handle.write(raw)
    except OSError as exc:
        raise IoError('Cannot write checkpoint %s: %s' % (path, exc))
    log.debug('Saved checkpoint %s (%d bytes)', path, len(raw))


def load_checkpoint(path):
    try:
        with open(path, 'rb') as handle:
            raw = handle.read()
    except OSError as exc:
        raise IoError('Cannot read checkpoint %s: %s' % (path, exc))
    return decode_checkpoint(raw)
