import gzip
import tempfile
from pathlib import Path

import numpy as np
from numpy.testing import assert_array_equal

from django.test import SimpleTestCase

from data.cifar import RECORD_SIZE, encode_cifar10, load_cifar10, parse_cifar10
from data.exceptions import (
    BadMagicError,
    CountMismatchError,
    DatasetFormatError,
    InvalidLabelError,
    RecordSizeError,
    TrailingDataError,
    TruncatedFileError,
    ZeroNormError,
)
from data.idx import IMAGE_MAGIC, LABEL_MAGIC, encode_idx, load_mnist, parse_idx, read_idx
from data.tests.utils import FIXTURES

IMAGES = FIXTURES / "tiny-images-idx3-ubyte"
LABELS = FIXTURES / "tiny-labels-idx1-ubyte"
CIFAR = FIXTURES / "tiny_cifar_batch.bin"


class IdxParserTests(SimpleTestCase):
    def setUp(self):
        self.blob = IMAGES.read_bytes()

    def test_fixture_pixels(self):
        images = read_idx(IMAGES, IMAGE_MAGIC)
        self.assertEqual(images.shape, (2, 3, 3))
        assert_array_equal(images.ravel(), np.arange(1, 19))
        assert_array_equal(read_idx(LABELS, LABEL_MAGIC), [3, 7])

    def test_encoder_reproduces_fixture(self):
        self.assertEqual(encode_idx(parse_idx(self.blob, IMAGE_MAGIC), IMAGE_MAGIC), self.blob)

    def test_gzip_is_transparent(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "images.gz"
            path.write_bytes(gzip.compress(self.blob))
            assert_array_equal(read_idx(path, IMAGE_MAGIC), read_idx(IMAGES, IMAGE_MAGIC))

    def test_label_file_is_not_an_image_file(self):
        with self.assertRaises(BadMagicError):
            read_idx(LABELS, IMAGE_MAGIC)

    def test_every_header_mutation_is_rejected(self):
        header = 4 + 4 * 3
        for position in range(header):
            corrupt = bytearray(self.blob)
            corrupt[position] ^= 0xFF
            with self.assertRaises(DatasetFormatError, msg=f"byte {position}"):
                parse_idx(bytes(corrupt), IMAGE_MAGIC)

    def test_every_truncation_is_rejected(self):
        for cut in range(len(self.blob)):
            with self.assertRaises(TruncatedFileError, msg=f"cut at {cut}"):
                parse_idx(self.blob[:cut], IMAGE_MAGIC)

    def test_trailing_bytes(self):
        with self.assertRaises(TrailingDataError):
            parse_idx(self.blob + b"\x00", IMAGE_MAGIC)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            read_idx(FIXTURES / "absent-idx3-ubyte", IMAGE_MAGIC)


class LoadMnistTests(SimpleTestCase):
    def write(self, tmp, images, labels):
        images_path, labels_path = Path(tmp) / "images", Path(tmp) / "labels"
        images_path.write_bytes(encode_idx(images, IMAGE_MAGIC))
        labels_path.write_bytes(encode_idx(labels, LABEL_MAGIC))
        return images_path, labels_path

    def test_fixture_dataset(self):
        dataset = load_mnist(IMAGES, LABELS)
        self.assertEqual(len(dataset), 2)
        self.assertEqual(dataset.image_shape, (3, 3, 1))
        assert_array_equal(dataset.labels, [3, 7])

    def test_count_mismatch(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = self.write(tmp, np.ones((2, 3, 3)), np.array([1, 2, 3]))
            with self.assertRaises(CountMismatchError):
                load_mnist(*paths)

    def test_invalid_label(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = self.write(tmp, np.ones((2, 3, 3)), np.array([1, 12]))
            with self.assertRaises(InvalidLabelError):
                load_mnist(*paths)

    def test_blank_image_reports_index(self):
        images = np.ones((3, 3, 3))
        images[2] = 0
        with tempfile.TemporaryDirectory() as tmp:
            paths = self.write(tmp, images, np.array([1, 2, 3]))
            with self.assertRaises(ZeroNormError) as ctx:
                load_mnist(*paths)
        self.assertEqual(ctx.exception.index, 2)


class CifarParserTests(SimpleTestCase):
    def setUp(self):
        self.blob = CIFAR.read_bytes()

    def test_fixture_layout(self):
        images, labels = parse_cifar10(self.blob)
        self.assertEqual(images.shape, (2, 32, 32, 3))
        assert_array_equal(labels, [1, 9])
        # Planes are stored red, green, blue; pixel k of record r holds (k + 5r) % 251 + 1.
        self.assertEqual(images[0, 0, 0, 0], 1)
        self.assertEqual(images[0, 0, 0, 1], 21)
        self.assertEqual(images[0, 31, 31, 0], 1023 % 251 + 1)
        self.assertEqual(images[1, 0, 0, 0], 6)

    def test_encoder_reproduces_fixture(self):
        self.assertEqual(encode_cifar10(*parse_cifar10(self.blob)), self.blob)

    def test_truncations_are_rejected(self):
        for cut in (0, 1, RECORD_SIZE - 1, RECORD_SIZE + 1, len(self.blob) - 1):
            with self.assertRaises(RecordSizeError):
                parse_cifar10(self.blob[:cut])

    def test_label_byte_out_of_range(self):
        for value in (10, 0x80, 0xFF):
            corrupt = bytearray(self.blob)
            corrupt[RECORD_SIZE] = value
            with self.assertRaises(InvalidLabelError):
                parse_cifar10(bytes(corrupt))

    def test_batches_are_concatenated(self):
        dataset = load_cifar10([CIFAR, CIFAR])
        self.assertEqual(len(dataset), 4)
        assert_array_equal(dataset.labels, [1, 9, 1, 9])
        self.assertEqual(len(load_cifar10(CIFAR)), 2)
