# -*- coding: utf-8 -*-

import gzip
import os
import shutil
import tempfile
import unittest

import numpy as np

from epiunwarp.errors import BadMagic, IoError, TruncatedData, UnsupportedDatatype, UnwarpError
from epiunwarp.nifti import (DATA_OFFSET, HEADER_SIZE, NiftiHeader, RawVolume, decode_nifti,
                             encode_nifti, header_dtype, read_nifti, write_nifti)


def big_endian_int16(values, voxel_size=(2.0, 2.0, 2.0), slope=0.0):
    """Hand-assemble a big-endian int16 NIfTI-1 file."""
    values = np.asarray(values)
    record = np.zeros((), dtype=header_dtype.newbyteorder('>'))
    record['sizeof_hdr'] = HEADER_SIZE
    record['dim'] = [3] + list(values.shape) + [1] * 4
    record['datatype'] = 4
    record['bitpix'] = 16
    record['pixdim'] = [1.0] + list(voxel_size) + [1.0] * 4
    record['vox_offset'] = DATA_OFFSET
    record['scl_slope'] = slope
    record['magic'] = b'n+1'
    payload = values.astype('>i2').tobytes(order='F')
    return record.tobytes() + b'\x00' * 4 + payload


class NiftiHeaderTest(unittest.TestCase):

    def test_from_extents_sets_rank_extents_and_voxel_size(self):
        header = NiftiHeader.from_extents((4, 5, 6), (1.8125, 1.8125, 2.0))
        assert header.rank == 3
        assert header.extents == (4, 5, 6)
        assert header.voxel_size == (1.8125, 1.8125, 2.0)
        assert header.magic == b'n+1'

    def test_default_affine_is_the_voxel_scaling(self):
        header = NiftiHeader.from_extents((4, 5, 6), (1.5, 2.0, 3.0))
        assert np.allclose(header.affine, np.diag([1.5, 2.0, 3.0, 1.0]))

    def test_with_affine_returns_a_new_header(self):
        header = NiftiHeader.from_extents((2, 2, 2), (1.0, 1.0, 1.0))
        affine = np.diag([1.0, 1.0, 1.0, 1.0])
        affine[:3, 3] = [10, -20, 5]
        moved = header.with_affine(affine)
        assert np.allclose(moved.affine, affine)
        assert np.allclose(header.affine[:3, 3], 0)

    def test_with_extents_changes_the_rank(self):
        header = NiftiHeader.from_extents((2, 3, 4), (1.0, 1.0, 1.0)).with_extents((2, 3, 4, 5))
        assert header.rank == 4
        assert header.extents == (2, 3, 4, 5)


class DecodeTest(unittest.TestCase):

    def test_big_endian_int16_value_is_decoded(self):
        values = np.zeros((2, 2, 2), dtype=np.int16)
        values[1, 0, 1] = 256
        volume = decode_nifti(big_endian_int16(values))
        assert volume.header.endian == '>'
        assert volume.data[1, 0, 1] == 256.0
        assert volume.data.sum() == 256.0

    def test_payload_is_in_fortran_order(self):
        values = np.arange(24).reshape((2, 3, 4))
        volume = decode_nifti(big_endian_int16(values))
        assert np.array_equal(volume.data, values)

    def test_zero_slope_means_unscaled(self):
        volume = decode_nifti(big_endian_int16(np.full((2, 2, 2), 7)))
        assert np.all(volume.data == 7.0)

    def test_slope_and_intercept_are_applied(self):
        raw = bytearray(big_endian_int16(np.full((2, 2, 2), 3), slope=2.0))
        raw[116:120] = np.array(1.5, dtype='>f4').tobytes()
        volume = decode_nifti(bytes(raw))
        assert np.all(volume.data == 7.5)

    def test_truncated_payload_raises(self):
        raw = big_endian_int16(np.zeros((4, 4, 4)))
        with self.assertRaises(TruncatedData):
            decode_nifti(raw[:-10])

    def test_truncated_header_raises(self):
        raw = big_endian_int16(np.zeros((2, 2, 2)))
        with self.assertRaises(TruncatedData):
            decode_nifti(raw[:100])
        with self.assertRaises(TruncatedData):
            decode_nifti(raw[:2])

    def test_bad_sizeof_hdr_raises_bad_magic(self):
        raw = bytearray(big_endian_int16(np.zeros((2, 2, 2))))
        raw[0:4] = b'\x00\x00\x00\x01'
        with self.assertRaises(BadMagic):
            decode_nifti(bytes(raw))

    def test_bad_magic_raises(self):
        raw = bytearray(big_endian_int16(np.zeros((2, 2, 2))))
        raw[344:348] = b'xyz\x00'
        with self.assertRaises(BadMagic):
            decode_nifti(bytes(raw))

    def test_header_image_pair_magic_is_rejected(self):
        raw = bytearray(big_endian_int16(np.zeros((2, 2, 2))))
        raw[344:348] = b'ni1\x00'
        with self.assertRaises(BadMagic):
            decode_nifti(bytes(raw))

    def test_unsupported_datatype_raises(self):
        raw = bytearray(big_endian_int16(np.zeros((2, 2, 2))))
        raw[70:72] = np.array(32, dtype='>i2').tobytes()
        with self.assertRaises(UnsupportedDatatype):
            decode_nifti(bytes(raw))

    def test_corrupt_input_always_raises_a_typed_error(self):
        raw = big_endian_int16(np.arange(8).reshape((2, 2, 2)))
        rng = np.random.default_rng(3)
        for _ in range(50):
            corrupt = bytearray(raw)
            for position in rng.integers(0, 352, size=4):
                corrupt[position] = int(rng.integers(0, 256))
            try:
                decode_nifti(bytes(corrupt))
            except UnwarpError:
                pass


class EncodeTest(unittest.TestCase):

    def test_encoded_size_is_offset_plus_float32_payload(self):
        header = NiftiHeader.from_extents((3, 4, 5), (1.0, 1.0, 1.0))
        raw = encode_nifti(RawVolume(header, np.zeros((3, 4, 5))))
        assert len(raw) == 352 + 3 * 4 * 5 * 4

    def test_round_trip_is_bit_exact_for_float32_values(self):
        values = np.random.default_rng(0).normal(size=(4, 5, 6)).astype(np.float32)
        header = NiftiHeader.from_extents(values.shape, (1.8125, 1.8125, 2.0))
        volume = decode_nifti(encode_nifti(RawVolume(header, values)))
        assert np.array_equal(volume.data, values.astype(np.float64))
        assert volume.header.voxel_size == (1.8125, 1.8125, 2.0)

    def test_big_endian_input_is_rewritten_in_host_order(self):
        volume = decode_nifti(big_endian_int16(np.arange(8).reshape((2, 2, 2))))
        again = decode_nifti(encode_nifti(volume))
        assert again.header.datatype_code == 16
        assert np.array_equal(again.data, volume.data)

    def test_raw_volume_rejects_mismatched_data(self):
        header = NiftiHeader.from_extents((2, 2, 2), (1.0, 1.0, 1.0))
        with self.assertRaises(UnwarpError):
            RawVolume(header, np.zeros((2, 2, 3)))

    def test_raw_volume_data_is_read_only(self):
        data = np.zeros((2, 2, 2))
        volume = RawVolume(NiftiHeader.from_extents((2, 2, 2), (1.0, 1.0, 1.0)), data)
        data[0, 0, 0] = 1.0
        assert volume.data[0, 0, 0] == 0.0
        with self.assertRaises(ValueError):
            volume.data[0, 0, 0] = 1.0


class FileTest(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_gzip_suffix_compresses(self):
        header = NiftiHeader.from_extents((4, 4, 4), (1.0, 1.0, 1.0))
        volume = RawVolume(header, np.ones((4, 4, 4)))
        path = os.path.join(self.directory, 'ones.nii.gz')
        write_nifti(volume, path)
        with open(path, 'rb') as handle:
            assert handle.read(2) == b'\x1f\x8b'
        assert np.array_equal(read_nifti(path).data, volume.data)

    def test_plain_file_round_trip(self):
        header = NiftiHeader.from_extents((2, 3, 4, 2), (1.0, 1.0, 1.0))
        volume = RawVolume(header, np.arange(48, dtype=np.float64).reshape((2, 3, 4, 2)))
        path = os.path.join(self.directory, 'series.nii')
        write_nifti(volume, path)
        assert os.path.getsize(path) == 352 + 48 * 4
        assert np.array_equal(read_nifti(path).data, volume.data)

    def test_written_single_voxel_is_read_back(self):
        volume = RawVolume(NiftiHeader.from_extents((1, 1, 1), (1.0, 1.0, 1.0)), [[[3.5]]])
        path = os.path.join(self.directory, 'voxel.nii')
        write_nifti(volume, path)
        with open(path, 'rb') as handle:
            handle.seek(344)
            assert handle.read(4) == b'n+1\x00'
        restored = read_nifti(path)
        assert restored.header.magic == b'n+1'
        assert restored.data.shape == (1, 1, 1)
        assert float(restored.data[0, 0, 0]) == 3.5

    def test_gzipped_big_endian_file_is_read(self):
        path = os.path.join(self.directory, 'be.nii.gz')
        with open(path, 'wb') as handle:
            handle.write(gzip.compress(big_endian_int16(np.full((2, 2, 2), 256))))
        assert np.all(read_nifti(path).data == 256.0)

    def test_missing_file_raises_io_error(self):
        with self.assertRaises(IoError):
            read_nifti(os.path.join(self.directory, 'absent.nii'))

    def test_unwritable_path_raises_io_error(self):
        header = NiftiHeader.from_extents((2, 2, 2), (1.0, 1.0, 1.0))
        with self.assertRaises(IoError):
            write_nifti(RawVolume(header, np.zeros((2, 2, 2))),
                        os.path.join(self.directory, 'no', 'such', 'dir.nii'))
